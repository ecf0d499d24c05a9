//! Texture rendering.
//!
//! Relief period follows the roughness frequency (one stroke spans half the
//! image width), edge sharpness follows hardness, relief contrast follows
//! roughness amplitude relative to a fixed fine grain, and a fine weave
//! scales with friction. Colour is a per-material tint that leaves luma
//! unchanged.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MaterialSpec, TextureStyle};
use crate::preprocess::image::RawImage;

pub const WIDTH: usize = 640;
pub const HEIGHT: usize = 480;

/// Pixels covered by one stroke length.
const STROKE_PX: f64 = 320.0;
const BASE_LUMA: f64 = 120.0;
const RELIEF_CONTRAST: f64 = 60.0;
const WEAVE_CONTRAST: f64 = 20.0;
const WEAVE_PERIOD: f64 = 4.0;
const GRAIN_CONTRAST: f64 = 5.0;

/// Width in pixels of the blurred transition at a relief edge: about half a
/// pixel for the hardest materials, several pixels for the softest.
fn blur(hardness: f64) -> f64 {
    0.4 + 3.0 * (1.0 - hardness)
}

/// Square-wave relief of the given period with edges blurred over
/// `blur` pixels; the edge width does not depend on the period.
fn square_wave(v: f64, period: f64, blur: f64) -> f64 {
    let half = period / 2.0;
    let u = v.rem_euclid(period);
    let (sign, w) = if u < half { (1.0, u) } else { (-1.0, u - half) };
    let d = w.min(half - w);
    sign * (d / blur).tanh()
}

/// Relief pattern in [-1, 1].
fn relief(spec: &MaterialSpec, width: usize, height: usize) -> Vec<f64> {
    let period = STROKE_PX / spec.roughness_freq;
    let h = spec.hardness;
    let width_px = blur(h);
    // Sample at pixel centres.
    let wave = |v: f64| square_wave(v + 0.5, period, width_px);
    match spec.texture_style {
        TextureStyle::Stripes => (0..height)
            .flat_map(|y| (0..width).map(move |_| wave(y as f64)))
            .collect(),
        TextureStyle::Grid => (0..height)
            .flat_map(|y| (0..width).map(move |x| wave(y as f64).max(wave(x as f64))))
            .collect(),
        TextureStyle::Speckle => {
            let mut out = vec![-1.0_f64; width * height];
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5be0);
            let density = 0.5 / (period * period);
            let count = ((width * height) as f64 * density).round().max(1.0) as usize;
            let radius = period / 4.0;
            let rim = 2.0 * width_px;
            for _ in 0..count {
                let cx = rng.random_range(0.0..width as f64);
                let cy = rng.random_range(0.0..height as f64);
                let reach = radius + rim;
                let (x0, x1) = ((cx - reach).floor().max(0.0) as usize, ((cx + reach).ceil() as usize).min(width));
                let (y0, y1) = ((cy - reach).floor().max(0.0) as usize, ((cy + reach).ceil() as usize).min(height));
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                        let v = (1.0 - ((d - radius) / rim + 0.5).clamp(0.0, 1.0)) * 2.0 - 1.0;
                        let cell = &mut out[y * width + x];
                        *cell = (*cell).max(v);
                    }
                }
            }
            out
        }
    }
}

/// Per-channel gains with unit luma, so colour does not reach the edge map.
fn tint(seed: u64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc010);
    let raw = [
        rng.random_range(0.85..1.05),
        rng.random_range(0.85..1.05),
        rng.random_range(0.85..1.05),
    ];
    let luma = 0.299 * raw[0] + 0.587 * raw[1] + 0.114 * raw[2];
    raw.map(|c| c / luma)
}

/// Renders a material at the default 640×480 resolution.
pub fn render_texture(spec: &MaterialSpec) -> RawImage {
    render_texture_sized(spec, WIDTH, HEIGHT)
}

pub fn render_texture_sized(spec: &MaterialSpec, width: usize, height: usize) -> RawImage {
    let pattern = relief(spec, width, height);
    // Grain and weave belong to the relief: a perfectly flat material renders
    // as a uniform colour.
    let surface = (spec.roughness_amp / 0.05).min(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6a1e);
    let gains = tint(spec.seed);
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let weave = (2.0 * PI * x as f64 / WEAVE_PERIOD).sin() * (2.0 * PI * y as f64 / WEAVE_PERIOD).sin();
            let grain: f64 = rng.random_range(-1.0..1.0);
            let luma = BASE_LUMA
                + RELIEF_CONTRAST * spec.roughness_amp * pattern[y * width + x]
                + surface * (WEAVE_CONTRAST * spec.friction * weave + GRAIN_CONTRAST * grain);
            for g in gains {
                data.push((luma * g).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RawImage::new(width, height, data).expect("consistent buffer")
}

/// Scales every channel by an illumination gain.
pub fn with_gain(img: &RawImage, gain: f64) -> RawImage {
    RawImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|&v| (v as f64 * gain).round().clamp(0.0, 255.0) as u8)
            .collect(),
    }
}
