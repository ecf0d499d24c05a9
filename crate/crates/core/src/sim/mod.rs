//! Synthetic materials: parameter sampling, texture rendering, stroke
//! simulation and dataset generation.

pub mod render;
pub mod stroke;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::io::{write_manifest, write_tactile_csv, ManifestEntry};

pub use render::render_texture;
pub use stroke::{simulate_stroke, StrokeConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextureStyle {
    Stripes,
    Grid,
    Speckle,
}

impl TextureStyle {
    pub const ALL: [TextureStyle; 3] = [TextureStyle::Stripes, TextureStyle::Grid, TextureStyle::Speckle];
}

/// Ground-truth parameters of a synthetic material.
#[derive(Clone, Debug, PartialEq)]
pub struct MaterialSpec {
    pub material_id: usize,
    /// Hardness in [0, 1].
    pub hardness: f64,
    /// Surface oscillations per stroke, in [1, 40].
    pub roughness_freq: f64,
    /// Relief amplitude in [0, 1].
    pub roughness_amp: f64,
    /// Friction coefficient in [0, 1].
    pub friction: f64,
    pub texture_style: TextureStyle,
    pub seed: u64,
}

impl MaterialSpec {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, lo: f64, hi: f64| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "material {}: {name} = {v} outside [{lo}, {hi}]",
                    self.material_id
                )))
            }
        };
        check("hardness", self.hardness, 0.0, 1.0)?;
        check("roughness_freq", self.roughness_freq, 1.0, 40.0)?;
        check("roughness_amp", self.roughness_amp, 0.0, 1.0)?;
        check("friction", self.friction, 0.0, 1.0)
    }
}

/// Sampling interval for each material parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamRanges {
    pub hardness: (f64, f64),
    pub roughness_freq: (f64, f64),
    pub roughness_amp: (f64, f64),
    pub friction: (f64, f64),
}

impl Default for ParamRanges {
    /// The full declared ranges.
    fn default() -> Self {
        Self {
            hardness: (0.0, 1.0),
            roughness_freq: (1.0, 40.0),
            roughness_amp: (0.0, 1.0),
            friction: (0.0, 1.0),
        }
    }
}

impl ParamRanges {
    fn validate(&self) -> Result<()> {
        let full = ParamRanges::default();
        for (name, (lo, hi), (flo, fhi)) in [
            ("hardness", self.hardness, full.hardness),
            ("roughness_freq", self.roughness_freq, full.roughness_freq),
            ("roughness_amp", self.roughness_amp, full.roughness_amp),
            ("friction", self.friction, full.friction),
        ] {
            if !(flo <= lo && lo <= hi && hi <= fhi) {
                return Err(Error::InvalidArgument(format!(
                    "{name} range [{lo}, {hi}] must lie within [{flo}, {fhi}]"
                )));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { rng.random_range(lo..hi) } else { lo }
}

/// `n` materials with parameters drawn uniformly over the full ranges.
pub fn sample_materials(n: usize, seed: u64) -> Vec<MaterialSpec> {
    sample_materials_in(n, seed, &ParamRanges::default()).expect("default ranges are valid")
}

/// `n` materials with parameters drawn uniformly over `ranges`; ids are
/// `0..n` in draw order.
pub fn sample_materials_in(n: usize, seed: u64, ranges: &ParamRanges) -> Result<Vec<MaterialSpec>> {
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|material_id| MaterialSpec {
            material_id,
            hardness: uniform(&mut rng, ranges.hardness),
            roughness_freq: uniform(&mut rng, ranges.roughness_freq),
            roughness_amp: uniform(&mut rng, ranges.roughness_amp),
            friction: uniform(&mut rng, ranges.friction),
            texture_style: TextureStyle::ALL[rng.random_range(0..3)],
            seed: rng.random(),
        })
        .collect())
}

/// Per-stroke illumination gain in [0.9, 1.1].
pub fn illumination_gain(spec: &MaterialSpec, stroke: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x1111 ^ ((stroke as u64) << 40));
    rng.random_range(0.9..=1.1)
}

/// Writes, for every material and stroke, a rendered image and a simulated
/// tactile CSV under `out_dir`, plus `manifest.txt`. Returns the manifest
/// entries in (material, stroke) order.
pub fn generate_dataset(
    materials: &[MaterialSpec],
    strokes_per_material: usize,
    cfg: &StrokeConfig,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    for dir in [out_dir.join("images"), out_dir.join("tactile")] {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let mut entries = Vec::new();
    for spec in materials {
        spec.validate()?;
        let base = render::render_texture_sized(spec, render::WIDTH, render::HEIGHT);
        for s in 0..strokes_per_material {
            let stem = format!("m{:03}_s{s:02}", spec.material_id);
            let image = out_dir.join("images").join(format!("{stem}.png"));
            let tactile = out_dir.join("tactile").join(format!("{stem}.csv"));
            render::with_gain(&base, illumination_gain(spec, s)).write_png(&image)?;
            write_tactile_csv(&tactile, &simulate_stroke(spec, cfg, s)?)?;
            entries.push(ManifestEntry {
                material_id: spec.material_id,
                stroke_id: s,
                image,
                tactile,
            });
        }
    }
    write_manifest(&out_dir.join("manifest.txt"), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_reproducible() {
        let a = sample_materials(25, 7);
        assert_eq!(a, sample_materials(25, 7));
        assert_ne!(a, sample_materials(25, 8));
        let mut ids: Vec<_> = a.iter().map(|m| m.material_id).collect();
        ids.dedup();
        assert_eq!(ids.len(), 25);
        assert!(a.iter().all(|m| m.validate().is_ok()));
    }

    #[test]
    fn parameters_are_uniform_per_decile() {
        let n = 10_000;
        let specs = sample_materials(n, 3);
        let expected = n as f64 / 10.0;
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        let fields: [(fn(&MaterialSpec) -> f64, f64, f64); 4] = [
            (|m| m.hardness, 0.0, 1.0),
            (|m| m.roughness_freq, 1.0, 40.0),
            (|m| m.roughness_amp, 0.0, 1.0),
            (|m| m.friction, 0.0, 1.0),
        ];
        for (get, lo, hi) in fields {
            let mut bins = [0usize; 10];
            for m in &specs {
                let u = (get(m) - lo) / (hi - lo);
                bins[((u * 10.0) as usize).min(9)] += 1;
            }
            for b in bins {
                assert!((b as f64 - expected).abs() < 3.0 * sd, "{bins:?}");
            }
        }
    }

    #[test]
    fn narrowed_ranges() {
        let r = ParamRanges {
            roughness_freq: (3.0, 20.0),
            ..Default::default()
        };
        let specs = sample_materials_in(200, 1, &r).unwrap();
        assert!(specs.iter().all(|m| (3.0..20.0).contains(&m.roughness_freq)));
        let bad = ParamRanges {
            friction: (0.5, 1.5),
            ..Default::default()
        };
        assert!(sample_materials_in(3, 1, &bad).is_err());
    }

    #[test]
    fn dataset_layout_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let materials = sample_materials(2, 5);
        let cfg = StrokeConfig::default();
        let entries = generate_dataset(&materials, 3, &cfg, dir.path()).unwrap();
        assert_eq!(entries.len(), 6);
        let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
        assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), 6);
        let csv = fs::read_to_string(&entries[0].tactile).unwrap();
        assert_eq!(csv.lines().count(), 1 + 900 * 16);
        let first_png = fs::read(&entries[4].image).unwrap();

        let again = tempfile::tempdir().unwrap();
        let entries2 = generate_dataset(&materials, 3, &cfg, again.path()).unwrap();
        assert_eq!(fs::read(&entries2[4].image).unwrap(), first_png);
        assert_eq!(fs::read_to_string(&entries2[0].tactile).unwrap(), csv);
    }
}
