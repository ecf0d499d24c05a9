/* tslint:disable */
/* eslint-disable */

/**
 * Normalized z and y traces of one taxel plus the property scores.
 */
export class Stroke {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    y(): Float64Array;
    z(): Float64Array;
    readonly combined: number;
    readonly friction: number;
    readonly hardness: number;
    readonly roughness: number;
}

/**
 * Rendered surface photo and the edge map of its top-left 200x200 crop.
 */
export class Surface {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * RGBA pixels of the 200x200 edge map.
     */
    edges(): Uint8Array;
    /**
     * RGBA pixels of the photo.
     */
    photo(): Uint8Array;
    readonly height: number;
    readonly width: number;
}

/**
 * One line per layer of the encoder-decoder: name and per-sample shape.
 */
export function network_summary(): string;

export function render_surface(hardness: number, freq: number, amp: number, friction: number, style: number, seed: number): Surface;

export function simulate(hardness: number, freq: number, amp: number, friction: number, seed: number, taxel: number): Stroke;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_stroke_free: (a: number, b: number) => void;
    readonly __wbg_surface_free: (a: number, b: number) => void;
    readonly network_summary: () => [number, number, number, number];
    readonly render_surface: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
    readonly stroke_combined: (a: number) => number;
    readonly stroke_friction: (a: number) => number;
    readonly stroke_hardness: (a: number) => number;
    readonly stroke_roughness: (a: number) => number;
    readonly stroke_y: (a: number) => [number, number];
    readonly stroke_z: (a: number) => [number, number];
    readonly surface_edges: (a: number) => [number, number];
    readonly surface_height: (a: number) => number;
    readonly surface_photo: (a: number) => [number, number];
    readonly surface_width: (a: number) => number;
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
