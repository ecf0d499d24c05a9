//! WebAssembly bindings for the browser demo in `www/`.

use wasm_bindgen::prelude::*;

use visuotactile::analysis::PropertyScores;
use visuotactile::models::build_visuotactile_net;
use visuotactile::preprocess::{calibrate, condition, edge_extract, normalize_fit, NormMode, NormStats, RawImage};
use visuotactile::sim::render::render_texture;
use visuotactile::sim::{simulate_stroke, MaterialSpec, StrokeConfig, TextureStyle};
use visuotactile::tensor::Tensor;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn material(hardness: f64, freq: f64, amp: f64, friction: f64, style: u8, seed: u32) -> Result<MaterialSpec, JsError> {
    let texture_style = *TextureStyle::ALL
        .get(style as usize)
        .ok_or_else(|| err(format!("texture style {style} not in 0..3")))?;
    let spec = MaterialSpec {
        material_id: 0,
        hardness,
        roughness_freq: freq,
        roughness_amp: amp,
        friction,
        texture_style,
        seed: seed as u64,
    };
    spec.validate().map_err(err)?;
    Ok(spec)
}

fn rgba(img: &RawImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(img.width * img.height * 4);
    for px in img.data.chunks_exact(3) {
        out.extend_from_slice(&[px[0], px[1], px[2], 255]);
    }
    out
}

/// Rendered surface photo and the edge map of its top-left 200x200 crop.
#[wasm_bindgen]
pub struct Surface {
    width: usize,
    height: usize,
    photo: Vec<u8>,
    edges: Vec<u8>,
}

#[wasm_bindgen]
impl Surface {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    /// RGBA pixels of the photo.
    pub fn photo(&self) -> Vec<u8> {
        self.photo.clone()
    }

    /// RGBA pixels of the 200x200 edge map.
    pub fn edges(&self) -> Vec<u8> {
        self.edges.clone()
    }
}

#[wasm_bindgen]
pub fn render_surface(
    hardness: f64,
    freq: f64,
    amp: f64,
    friction: f64,
    style: u8,
    seed: u32,
) -> Result<Surface, JsError> {
    let spec = material(hardness, freq, amp, friction, style, seed)?;
    let img = render_texture(&spec);
    let edge = edge_extract(&img, 0, 0).map_err(err)?;
    let peak = edge.max_abs().max(1e-12);
    let mut edges = Vec::with_capacity(edge.len() * 4);
    for v in edge.data() {
        let g = (255.0 * v / peak).round().clamp(0.0, 255.0) as u8;
        edges.extend_from_slice(&[g, g, g, 255]);
    }
    Ok(Surface {
        width: img.width,
        height: img.height,
        photo: rgba(&img),
        edges,
    })
}

/// Normalized z and y traces of one taxel plus the property scores.
#[wasm_bindgen]
pub struct Stroke {
    z: Vec<f64>,
    y: Vec<f64>,
    scores: PropertyScores,
}

#[wasm_bindgen]
impl Stroke {
    pub fn z(&self) -> Vec<f64> {
        self.z.clone()
    }

    pub fn y(&self) -> Vec<f64> {
        self.y.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn roughness(&self) -> f64 {
        self.scores.roughness
    }

    #[wasm_bindgen(getter)]
    pub fn hardness(&self) -> f64 {
        self.scores.hardness
    }

    #[wasm_bindgen(getter)]
    pub fn friction(&self) -> f64 {
        self.scores.friction
    }

    #[wasm_bindgen(getter)]
    pub fn combined(&self) -> f64 {
        self.scores.combined
    }
}

/// Scale taken from the hardest, roughest, most slippery material, so demo
/// scores are comparable across parameter settings.
fn reference_stats(cfg: &StrokeConfig) -> Result<NormStats, JsError> {
    let spec = material(1.0, 20.0, 1.0, 1.0, 0, 1)?;
    let seq = calibrate(&simulate_stroke(&spec, cfg, 0).map_err(err)?).map_err(err)?;
    normalize_fit(&[seq], NormMode::Symmetric).map_err(err)
}

#[wasm_bindgen]
pub fn simulate(hardness: f64, freq: f64, amp: f64, friction: f64, seed: u32, taxel: usize) -> Result<Stroke, JsError> {
    if taxel >= 16 {
        return Err(err("taxel must be in 0..16"));
    }
    let cfg = StrokeConfig::default();
    let spec = material(hardness, freq, amp, friction, 0, seed)?;
    let raw = simulate_stroke(&spec, &cfg, 0).map_err(err)?;
    let seq: Tensor = condition(&calibrate(&raw).map_err(err)?, &reference_stats(&cfg)?).map_err(err)?;
    let t = seq.shape()[3];
    let trace = |axis: usize| seq.data()[(axis * 16 + taxel) * t..(axis * 16 + taxel + 1) * t].to_vec();
    Ok(Stroke {
        z: trace(2),
        y: trace(1),
        scores: PropertyScores::of(&seq),
    })
}

/// One line per layer of the encoder-decoder: name and per-sample shape.
#[wasm_bindgen]
pub fn network_summary() -> Result<String, JsError> {
    let net = build_visuotactile_net(1).map_err(err)?;
    let mut lines = vec![format!("input [1, 200, 200]")];
    for (name, shape) in net.shape_chain() {
        lines.push(format!("{name} {shape:?}"));
    }
    lines.push(format!("trainable parameters {}", net.graph.trainable_count()));
    Ok(lines.join("\n"))
}
