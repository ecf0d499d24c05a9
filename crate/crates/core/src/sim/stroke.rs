//! Stroke simulation: rest, contact ramp, then a constant-speed stroke.
//!
//! The model reproduces signal shape rather than contact mechanics. During
//! the stroke the z axis carries the contact level (scaled by hardness) plus
//! a relief sinusoid, the y axis a shear plateau set by friction with
//! stick-slip ripple, and the x axis small zero-mean drift.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MaterialSpec;
use crate::error::{Error, Result};
use crate::preprocess::tactile::{AXES, TAXELS};
use crate::tensor::Tensor;

/// Raw reading of an unloaded taxel.
pub const REST_LEVEL: f64 = 32768.0;
/// Steps before contact begins.
pub const REST_STEPS: usize = 60;
/// Steps of the contact ramp; the stroke starts after it.
pub const RAMP_STEPS: usize = 40;
/// Raw counts per newton of normal load.
const Z_GAIN: f64 = 600.0;
/// Raw counts per newton of shear.
const Y_GAIN: f64 = 500.0;
/// Relief amplitude as a fraction of the contact level at `roughness_amp = 1`.
const RELIEF: f64 = 0.8;
/// Stick-slip ripple: relative amplitude and frequency multiple.
const RIPPLE: f64 = 0.1;
const RIPPLE_MULTIPLE: f64 = 5.0;
/// Spacing of taxel rows along the stroke direction.
const TAXEL_PITCH: f64 = 4.7e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct StrokeConfig {
    pub steps: usize,
    /// Hz.
    pub sample_rate: f64,
    /// N.
    pub press_force: f64,
    /// m.
    pub stroke_length: f64,
    /// m/s.
    pub speed: f64,
    /// Standard deviation of additive sensor noise, raw counts.
    pub sensor_noise_sd: f64,
}

impl Default for StrokeConfig {
    fn default() -> Self {
        Self {
            steps: 900,
            sample_rate: 100.0,
            press_force: 5.0,
            stroke_length: 3.0e-2,
            speed: 2.0e-3,
            sensor_noise_sd: 15.0,
        }
    }
}

impl StrokeConfig {
    pub fn validate(&self) -> Result<()> {
        let min = REST_STEPS + RAMP_STEPS + 20;
        if self.steps < min {
            return Err(Error::InvalidArgument(format!(
                "a stroke needs at least {min} steps, got {}",
                self.steps
            )));
        }
        for (name, v) in [
            ("sample_rate", self.sample_rate),
            ("press_force", self.press_force),
            ("stroke_length", self.stroke_length),
            ("speed", self.speed),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sensor_noise_sd >= 0.0 && self.sensor_noise_sd.is_finite()) {
            return Err(Error::InvalidArgument("sensor_noise_sd must be non-negative".into()));
        }
        Ok(())
    }
}

/// Relative contact pressure of each taxel; edge taxels bear a little less.
fn contact_share(row: usize, col: usize) -> f64 {
    let d = (row as f64 - 1.5).abs() + (col as f64 - 1.5).abs();
    1.0 - 0.05 * d
}

/// Smooth 0 → 1 ramp.
fn ramp(u: f64) -> f64 {
    0.5 - 0.5 * (PI * u.clamp(0.0, 1.0)).cos()
}

/// Simulates stroke number `stroke` of a material as a raw `[3, 4, 4, T]`
/// sequence of integer counts in [0, 65535].
pub fn simulate_stroke(spec: &MaterialSpec, cfg: &StrokeConfig, stroke: usize) -> Result<Tensor> {
    spec.validate()?;
    cfg.validate()?;
    let t_total = cfg.steps;
    let stroke_start = REST_STEPS + RAMP_STEPS;
    let stroke_steps = (t_total - stroke_start) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((stroke as u64 + 1) << 48));
    let noise = Normal::new(0.0, cfg.sensor_noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");
    let noisy = cfg.sensor_noise_sd > 0.0;

    let contact = spec.hardness * cfg.press_force * Z_GAIN;
    let relief = RELIEF * spec.roughness_amp * contact;
    let shear = spec.friction * cfg.press_force * Y_GAIN;
    let drift_sd = 0.02 * cfg.press_force * Y_GAIN;

    let mut data = vec![0.0; AXES * TAXELS * t_total];
    for row in 0..4 {
        for col in 0..4 {
            let taxel = row * 4 + col;
            let share = contact_share(row, col);
            // Later rows reach each surface feature earlier along the stroke.
            let phase = 2.0 * PI * spec.roughness_freq * row as f64 * TAXEL_PITCH / cfg.stroke_length;
            let mut drift = 0.0;
            for t in 0..t_total {
                let (mut fx, mut fy, mut fz) = (0.0, 0.0, 0.0);
                if t >= REST_STEPS {
                    let load = ramp((t - REST_STEPS) as f64 / RAMP_STEPS as f64);
                    fz = share * contact * load;
                }
                if t >= stroke_start {
                    let u = (t - stroke_start) as f64 / stroke_steps;
                    fz += share * relief * (2.0 * PI * spec.roughness_freq * u + phase).sin();
                    let onset = ramp((t - stroke_start) as f64 / 10.0);
                    let ripple = 1.0
                        + RIPPLE * (2.0 * PI * RIPPLE_MULTIPLE * spec.roughness_freq * u + phase).sin();
                    fy = share * shear * onset * ripple;
                    drift = 0.95 * drift + 0.3 * drift_sd * rng.random_range(-1.0..1.0);
                    fx = drift;
                }
                for (axis, f) in [fx, fy, fz].into_iter().enumerate() {
                    let n = if noisy { noise.sample(&mut rng) } else { 0.0 };
                    data[(axis * TAXELS + taxel) * t_total + t] =
                        (REST_LEVEL + f + n).round().clamp(0.0, 65535.0);
                }
            }
        }
    }
    Tensor::new(vec![AXES, 4, 4, t_total], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::scores::{friction_score, hardness_score, roughness_score, STROKE_START};
    use crate::preprocess::tactile::{calibrate, condition, downsample, normalize_fit, NormMode};
    use crate::sim::TextureStyle;

    fn spec(h: f64, rf: f64, ra: f64, mu: f64) -> MaterialSpec {
        MaterialSpec {
            material_id: 0,
            hardness: h,
            roughness_freq: rf,
            roughness_amp: ra,
            friction: mu,
            texture_style: TextureStyle::Stripes,
            seed: 42,
        }
    }

    fn quiet() -> StrokeConfig {
        StrokeConfig {
            sensor_noise_sd: 0.0,
            ..Default::default()
        }
    }

    /// Calibrated, normalized against the given set of sequences, and
    /// downsampled.
    fn normalized(seqs: &[Tensor]) -> Vec<Tensor> {
        let cal: Vec<Tensor> = seqs.iter().map(|s| calibrate(s).unwrap()).collect();
        let stats = normalize_fit(&cal, NormMode::Symmetric).unwrap();
        cal.iter().map(|c| condition(c, &stats).unwrap()).collect()
    }

    #[test]
    fn raw_layout_and_range() {
        let s = simulate_stroke(&spec(1.0, 40.0, 1.0, 1.0), &StrokeConfig::default(), 0).unwrap();
        assert_eq!(s.shape(), &[3, 4, 4, 900]);
        assert!(s.data().iter().all(|&v| (0.0..=65535.0).contains(&v) && v.fract() == 0.0));
        let short = StrokeConfig {
            steps: 100,
            ..Default::default()
        };
        assert!(simulate_stroke(&spec(0.5, 5.0, 0.5, 0.5), &short, 0).is_err());
    }

    #[test]
    fn calibration_window_is_at_rest() {
        let s = simulate_stroke(&spec(0.7, 9.0, 0.6, 0.4), &quiet(), 0).unwrap();
        let c = downsample(&calibrate(&s).unwrap()).unwrap();
        // The first five downsampled steps precede contact.
        for ch in c.data().chunks_exact(90) {
            assert!(ch[..5].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn frictionless_shear_is_noise_only() {
        let cfg = StrokeConfig::default();
        let s = simulate_stroke(&spec(0.8, 10.0, 0.5, 0.0), &cfg, 3).unwrap();
        let c = crate::preprocess::tactile::calibrate(&s).unwrap();
        let y: Vec<f64> = (0..16)
            .flat_map(|k| c.data()[(16 + k) * 900 + 100..(16 + k + 1) * 900].to_vec())
            .collect();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        // Calibration itself shifts by the window-mean error, sd/√50.
        let bound = 3.0 * cfg.sensor_noise_sd * (1.0 / y.len() as f64 + 1.0 / 50.0).sqrt();
        assert!(mean.abs() < bound, "{mean} vs {bound}");
    }

    #[test]
    fn flat_surface_has_no_oscillations() {
        let seqs = [
            simulate_stroke(&spec(0.9, 15.0, 0.0, 0.5), &StrokeConfig::default(), 0).unwrap(),
            simulate_stroke(&spec(1.0, 15.0, 1.0, 1.0), &StrokeConfig::default(), 0).unwrap(),
        ];
        let n = normalized(&seqs);
        assert_eq!(roughness_score(&n[0]), 0.0);
    }

    #[test]
    fn noiseless_roughness_matches_frequency() {
        let s = simulate_stroke(&spec(0.9, 12.0, 0.8, 0.5), &quiet(), 0).unwrap();
        let n = normalized(&[s]);
        let r = roughness_score(&n[0]);
        assert!((r - 12.0).abs() <= 1.0, "{r}");
        for k in [2.0, 5.0, 20.0, 30.0] {
            let s = simulate_stroke(&spec(0.9, k, 0.8, 0.5), &quiet(), 0).unwrap();
            let r = roughness_score(&normalized(&[s])[0]);
            assert!((r - k).abs() <= 1.0, "k={k}: {r}");
        }
        assert_eq!(STROKE_START * 10, REST_STEPS + RAMP_STEPS);
    }

    #[test]
    fn scores_are_monotone_in_their_parameter() {
        let cfg = quiet();
        let by = |make: &dyn Fn(f64) -> MaterialSpec, score: fn(&Tensor) -> f64| {
            let raw: Vec<Tensor> = [0.1, 0.2, 0.4, 0.6, 0.8, 1.0]
                .iter()
                .map(|&v| simulate_stroke(&make(v), &cfg, 0).unwrap())
                .collect();
            let s: Vec<f64> = normalized(&raw).iter().map(score).collect();
            assert!(s.windows(2).all(|w| w[0] < w[1]), "{s:?}");
        };
        by(&|mu| spec(0.6, 8.0, 0.5, mu), friction_score);
        by(&|h| spec(h, 8.0, 0.5, 0.5), hardness_score);
        let counts: Vec<f64> = [3.0, 6.0, 11.0, 17.0, 25.0]
            .iter()
            .map(|&f| {
                let s = simulate_stroke(&spec(0.8, f, 0.7, 0.5), &cfg, 0).unwrap();
                roughness_score(&normalized(&[s])[0])
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] < w[1]), "{counts:?}");
    }

    #[test]
    fn friction_pair_is_ordered() {
        let raw = [
            simulate_stroke(&spec(0.5, 6.0, 0.5, 0.2), &quiet(), 0).unwrap(),
            simulate_stroke(&spec(0.5, 6.0, 0.5, 0.8), &quiet(), 0).unwrap(),
        ];
        let n = normalized(&raw);
        assert!(friction_score(&n[1]) > friction_score(&n[0]));
    }

    #[test]
    fn strokes_differ_only_by_noise() {
        let m = spec(0.5, 6.0, 0.5, 0.5);
        let a = simulate_stroke(&m, &StrokeConfig::default(), 0).unwrap();
        let b = simulate_stroke(&m, &StrokeConfig::default(), 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, simulate_stroke(&m, &StrokeConfig::default(), 0).unwrap());
        let qa = simulate_stroke(&m, &quiet(), 0).unwrap();
        let qb = simulate_stroke(&m, &quiet(), 1).unwrap();
        // x drift is random per stroke; y and z are deterministic without noise.
        assert_eq!(qa.data()[16 * 900..], qb.data()[16 * 900..]);
    }
}
