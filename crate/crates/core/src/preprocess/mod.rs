//! Turns raw image/tactile recordings into paired training records.

pub mod image;
pub mod io;
pub mod tactile;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use image::{augment, augment_subset, edge_extract, RawImage, AUGMENTATIONS, CROP};
pub use io::{ManifestEntry, SampleRecord};
pub use tactile::{calibrate, condition, downsample, normalize_apply, normalize_fit, NormMode, NormStats};

pub const STROKES_PER_MATERIAL: usize = 10;
pub const TRAIN_STROKES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Strokes 0-7 train, 8 validation, 9 test.
pub fn split_of(stroke_id: usize) -> Result<Split> {
    match stroke_id {
        0..TRAIN_STROKES => Ok(Split::Train),
        8 => Ok(Split::Val),
        9 => Ok(Split::Test),
        _ => Err(Error::Data(format!("stroke id {stroke_id} outside 0..10"))),
    }
}

/// Groups entries by material and checks each has strokes 0..10 exactly once.
pub fn group_by_material(entries: &[ManifestEntry]) -> Result<BTreeMap<usize, Vec<&ManifestEntry>>> {
    let mut groups: BTreeMap<usize, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(e.material_id).or_default().push(e);
    }
    for (m, strokes) in &mut groups {
        strokes.sort_by_key(|e| e.stroke_id);
        let ids: Vec<usize> = strokes.iter().map(|e| e.stroke_id).collect();
        if ids != (0..STROKES_PER_MATERIAL).collect::<Vec<_>>() {
            return Err(Error::Data(format!(
                "material {m} must have strokes 0..{STROKES_PER_MATERIAL} exactly once, got {ids:?}"
            )));
        }
    }
    Ok(groups)
}

/// Stroke-level train/val/test split.
pub fn split(entries: &[ManifestEntry]) -> Result<BTreeMap<Split, Vec<ManifestEntry>>> {
    let mut out: BTreeMap<Split, Vec<ManifestEntry>> = BTreeMap::new();
    for strokes in group_by_material(entries)?.values() {
        for e in strokes {
            out.entry(split_of(e.stroke_id)?).or_default().push((*e).clone());
        }
    }
    Ok(out)
}

/// Which source images the 64 augmentations are taken from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentPer {
    /// One image per material; augmentation `k` pairs with training stroke
    /// `k mod 8`, giving 64 training pairs per material.
    Material,
    /// Every stroke's own image, paired with its own sequence.
    Stroke,
}

impl std::str::FromStr for AugmentPer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "material" => Ok(AugmentPer::Material),
            "stroke" => Ok(AugmentPer::Stroke),
            _ => Err(Error::InvalidArgument(format!("unknown augment mode `{s}`"))),
        }
    }
}

impl std::fmt::Display for AugmentPer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AugmentPer::Material => "material",
            AugmentPer::Stroke => "stroke",
        })
    }
}

#[derive(Clone, Debug)]
pub struct PreprocessConfig {
    pub augment_per: AugmentPer,
    /// Augmentations kept per stroke image (1..=64), drawn without
    /// replacement. Ignored for the training split in material mode.
    pub crops_per_stroke: usize,
    pub norm_mode: NormMode,
    /// Materials with ids below this are training materials; the rest are
    /// held out entirely.
    pub known_materials: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            augment_per: AugmentPer::Stroke,
            crops_per_stroke: 1,
            norm_mode: NormMode::Symmetric,
            known_materials: 15,
            seed: 1,
        }
    }
}

/// A normalized stroke sequence, kept for property scoring.
#[derive(Clone, Debug)]
pub struct StrokeSequence {
    pub material_id: usize,
    pub stroke_id: usize,
    pub tactile: Tensor,
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Vec<SampleRecord>,
    pub val: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    /// Records of held-out materials (all strokes).
    pub unknown: Vec<SampleRecord>,
    pub norm: NormStats,
    /// Every stroke of every material, normalized with the training stats.
    pub strokes: Vec<StrokeSequence>,
}

/// Augmentation ids kept for one stroke image.
pub fn crop_ids(cfg: &PreprocessConfig, material: usize, stroke: usize) -> Result<Vec<usize>> {
    let c = cfg.crops_per_stroke;
    if c == 0 || c > AUGMENTATIONS {
        return Err(Error::InvalidArgument(format!(
            "crops_per_stroke must be in 1..=64, got {c}"
        )));
    }
    if c == AUGMENTATIONS {
        return Ok((0..AUGMENTATIONS).collect());
    }
    let seed = cfg.seed ^ ((material as u64) << 32) ^ ((stroke as u64) << 16) ^ 0x5eed;
    let mut ids = index::sample(&mut ChaCha8Rng::seed_from_u64(seed), AUGMENTATIONS, c).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Loaded raw data of one stroke.
pub struct RawStroke {
    pub entry: ManifestEntry,
    pub image: RawImage,
    /// Calibrated, full rate, not yet normalized.
    pub calibrated: Tensor,
}

pub fn load_stroke(entry: &ManifestEntry) -> Result<RawStroke> {
    let image = RawImage::read_png(&entry.image)?;
    let raw = io::read_tactile_csv(&entry.tactile)?;
    let calibrated = calibrate(&raw).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::format(&entry.tactile, m),
        other => other,
    })?;
    Ok(RawStroke {
        entry: entry.clone(),
        image,
        calibrated,
    })
}

/// Loads every manifest entry and builds the splits.
pub fn prepare(entries: &[ManifestEntry], cfg: &PreprocessConfig) -> Result<Prepared> {
    let groups = group_by_material(entries)?;
    let mut loaded: BTreeMap<usize, Vec<RawStroke>> = BTreeMap::new();
    for (&m, strokes) in &groups {
        loaded.insert(m, strokes.iter().map(|e| load_stroke(e)).collect::<Result<_>>()?);
    }
    prepare_loaded(&loaded, cfg)
}

/// As [`prepare`] on strokes already in memory, keyed by material id with
/// strokes in id order.
pub fn prepare_loaded(loaded: &BTreeMap<usize, Vec<RawStroke>>, cfg: &PreprocessConfig) -> Result<Prepared> {
    let train_seqs: Vec<Tensor> = loaded
        .iter()
        .filter(|(&m, _)| m < cfg.known_materials)
        .flat_map(|(_, s)| s[..TRAIN_STROKES].iter().map(|r| r.calibrated.clone()))
        .collect();
    let norm = normalize_fit(&train_seqs, cfg.norm_mode)?;

    let mut out = Prepared {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        unknown: Vec::new(),
        norm,
        strokes: Vec::new(),
    };
    for (&m, strokes) in loaded {
        let normalized: Vec<Tensor> = strokes
            .iter()
            .map(|r| condition(&r.calibrated, &out.norm))
            .collect::<Result<_>>()?;
        let known = m < cfg.known_materials;
        let record = |s: usize, a: usize, image: Tensor| SampleRecord {
            material_id: m,
            stroke_id: s,
            augmentation_id: a,
            image,
            tactile: normalized[s].clone(),
        };
        if known && cfg.augment_per == AugmentPer::Material {
            for (k, image) in augment(&strokes[0].image)?.into_iter().enumerate() {
                out.train.push(record(k % TRAIN_STROKES, k, image));
            }
        }
        for (s, raw) in strokes.iter().enumerate() {
            let split = split_of(s)?;
            if known && split == Split::Train && cfg.augment_per == AugmentPer::Material {
                continue;
            }
            let ids = crop_ids(cfg, m, s)?;
            let images = augment_subset(&raw.image, &ids)?;
            let target = match (known, split) {
                (false, _) => &mut out.unknown,
                (true, Split::Train) => &mut out.train,
                (true, Split::Val) => &mut out.val,
                (true, Split::Test) => &mut out.test,
            };
            for (a, image) in ids.into_iter().zip(images) {
                target.push(record(s, a, image));
            }
        }
        for (s, tactile) in normalized.into_iter().enumerate() {
            out.strokes.push(StrokeSequence {
                material_id: m,
                stroke_id: s,
                tactile,
            });
        }
    }
    out.train.sort_by_key(|r| (r.material_id, r.stroke_id, r.augmentation_id));
    Ok(out)
}

/// Record file names per split.
pub const SPLIT_FILES: [(&str, Split); 3] = [
    ("train.vtl", Split::Train),
    ("val.vtl", Split::Val),
    ("test.vtl", Split::Test),
];

/// Writes `train.vtl`, `val.vtl`, `test.vtl`, `unknown.vtl`, the
/// normalization stats and the normalized stroke sequences into `dir`.
/// Returns the written paths.
pub fn write_prepared(dir: &Path, p: &Prepared) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, records) in [
        ("train.vtl", &p.train),
        ("val.vtl", &p.val),
        ("test.vtl", &p.test),
        ("unknown.vtl", &p.unknown),
    ] {
        let path = dir.join(name);
        io::write_records(&path, records)?;
        written.push(path);
    }
    let norm = dir.join("norm.vtl");
    crate::checkpoint::write(
        &norm,
        &[
            ("norm/lo".into(), Tensor::new(vec![3], p.norm.lo.to_vec())?),
            ("norm/hi".into(), Tensor::new(vec![3], p.norm.hi.to_vec())?),
        ],
    )?;
    written.push(norm);
    let strokes = dir.join("strokes.vtl");
    let entries: Vec<(String, Tensor)> = p
        .strokes
        .iter()
        .map(|s| (format!("tactile/{}/{}", s.material_id, s.stroke_id), s.tactile.clone()))
        .collect();
    crate::checkpoint::write(&strokes, &entries)?;
    written.push(strokes);
    Ok(written)
}

/// Reads back what [`write_prepared`] wrote.
pub fn read_prepared(dir: &Path) -> Result<Prepared> {
    let norm_path = dir.join("norm.vtl");
    let norm = crate::checkpoint::read(&norm_path)?;
    let get = |name: &str| -> Result<[f64; 3]> {
        let t = norm
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::format(&norm_path, format!("missing `{name}`")))?;
        t.data()
            .try_into()
            .map_err(|_| Error::format(&norm_path, format!("`{name}` must hold 3 values")))
    };
    let strokes_path = dir.join("strokes.vtl");
    let strokes = crate::checkpoint::read(&strokes_path)?
        .into_iter()
        .map(|(name, tactile)| {
            let ids: Vec<usize> = name
                .strip_prefix("tactile/")
                .map(|k| k.split('/').filter_map(|v| v.parse().ok()).collect())
                .unwrap_or_default();
            match ids[..] {
                [m, s] => Ok(StrokeSequence {
                    material_id: m,
                    stroke_id: s,
                    tactile,
                }),
                _ => Err(Error::format(&strokes_path, format!("bad entry `{name}`"))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(Prepared {
        train: io::read_records(&dir.join("train.vtl"))?,
        val: io::read_records(&dir.join("val.vtl"))?,
        test: io::read_records(&dir.join("test.vtl"))?,
        unknown: io::read_records(&dir.join("unknown.vtl"))?,
        norm: NormStats {
            lo: get("norm/lo")?,
            hi: get("norm/hi")?,
        },
        strokes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(m: usize, s: usize) -> ManifestEntry {
        ManifestEntry {
            material_id: m,
            stroke_id: s,
            image: format!("{m}_{s}.png").into(),
            tactile: format!("{m}_{s}.csv").into(),
        }
    }

    #[test]
    fn stroke_level_split_counts() {
        let entries: Vec<_> = (0..15).flat_map(|m| (0..10).map(move |s| entry(m, s))).collect();
        let parts = split(&entries).unwrap();
        assert_eq!(parts[&Split::Train].len(), 120);
        assert_eq!(parts[&Split::Val].len(), 15);
        assert_eq!(parts[&Split::Test].len(), 15);
        let bad: Vec<_> = (0..9).map(|s| entry(0, s)).collect();
        assert!(split(&bad).is_err());
    }

    #[test]
    fn crop_ids_are_seeded_and_distinct() {
        let cfg = PreprocessConfig {
            crops_per_stroke: 5,
            ..Default::default()
        };
        let a = crop_ids(&cfg, 3, 4).unwrap();
        assert_eq!(a, crop_ids(&cfg, 3, 4).unwrap());
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_ne!(a, crop_ids(&cfg, 3, 5).unwrap());
        let all = PreprocessConfig {
            crops_per_stroke: 64,
            ..Default::default()
        };
        assert_eq!(crop_ids(&all, 0, 0).unwrap(), (0..64).collect::<Vec<_>>());
    }

    fn synthetic(materials: usize) -> BTreeMap<usize, Vec<RawStroke>> {
        (0..materials)
            .map(|m| {
                let strokes = (0..10)
                    .map(|s| RawStroke {
                        entry: entry(m, s),
                        image: RawImage::from_fn(240, 220, |x, y| {
                            let v = ((x * (m + 1) + y * s) % 256) as u8;
                            [v, v, v]
                        }),
                        calibrated: Tensor::from_fn(&[3, 4, 4, 900], |i| {
                            ((i * 7 + m * 13 + s) % 17) as f64 - 8.0
                        }),
                    })
                    .collect();
                (m, strokes)
            })
            .collect()
    }

    #[test]
    fn material_mode_gives_64_pairs_per_material() {
        let cfg = PreprocessConfig {
            augment_per: AugmentPer::Material,
            known_materials: 2,
            ..Default::default()
        };
        let p = prepare_loaded(&synthetic(3), &cfg).unwrap();
        assert_eq!(p.train.len(), 128);
        assert_eq!((p.val.len(), p.test.len(), p.unknown.len()), (2, 2, 10));
        assert_eq!(p.strokes.len(), 30);
        let r = p
            .train
            .iter()
            .find(|r| r.material_id == 1 && r.augmentation_id == 13)
            .unwrap();
        assert_eq!(r.stroke_id, 5);
        let keys: Vec<_> = p.train.iter().map(|r| r.key()).collect();
        let mut unique = keys.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), keys.len());
    }

    #[test]
    fn no_leakage_and_values_in_range() {
        let cfg = PreprocessConfig {
            crops_per_stroke: 3,
            known_materials: 2,
            ..Default::default()
        };
        let p = prepare_loaded(&synthetic(2), &cfg).unwrap();
        assert_eq!(p.train.len(), 2 * 8 * 3);
        assert!(p.train.iter().all(|r| r.stroke_id < 8));
        assert!(p.val.iter().all(|r| r.stroke_id == 8));
        assert!(p.test.iter().all(|r| r.stroke_id == 9));
        for r in p.train.iter().chain(&p.val).chain(&p.test) {
            assert!(r.tactile.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(r.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let again = prepare_loaded(&synthetic(2), &cfg).unwrap();
        assert_eq!(p.train, again.train);
    }

    #[test]
    fn prepared_round_trip() {
        let cfg = PreprocessConfig {
            known_materials: 1,
            ..Default::default()
        };
        let p = prepare_loaded(&synthetic(2), &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_prepared(dir.path(), &p).unwrap();
        let back = read_prepared(dir.path()).unwrap();
        assert_eq!(back.train, p.train);
        assert_eq!(back.unknown, p.unknown);
        assert_eq!(back.norm, p.norm);
        assert_eq!(back.strokes.len(), 20);
    }
}
