/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_stroke_free: (a: number, b: number) => void;
export const __wbg_surface_free: (a: number, b: number) => void;
export const network_summary: () => [number, number, number, number];
export const render_surface: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const simulate: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const stroke_combined: (a: number) => number;
export const stroke_friction: (a: number) => number;
export const stroke_hardness: (a: number) => number;
export const stroke_roughness: (a: number) => number;
export const stroke_y: (a: number) => [number, number];
export const stroke_z: (a: number) => [number, number];
export const surface_edges: (a: number) => [number, number];
export const surface_height: (a: number) => number;
export const surface_photo: (a: number) => [number, number];
export const surface_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
