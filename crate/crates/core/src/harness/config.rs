use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::TrainConfig;
use crate::preprocess::{AugmentPer, NormMode, PreprocessConfig, STROKES_PER_MATERIAL};
use crate::sim::{ParamRanges, StrokeConfig};

/// Everything one experiment run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub known_materials: usize,
    pub unknown_materials: usize,
    pub strokes_per_material: usize,
    pub stroke: StrokeConfig,
    pub ranges: ParamRanges,
    pub augment_per: AugmentPer,
    pub crops_per_stroke: usize,
    pub norm_mode: NormMode,
    pub recon: TrainConfig,
    pub classifier: TrainConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::with_seed(1)
    }
}

impl ExperimentConfig {
    pub fn with_seed(seed: u64) -> Self {
        let pre = PreprocessConfig::default();
        ExperimentConfig {
            seed,
            known_materials: pre.known_materials,
            unknown_materials: 10,
            strokes_per_material: STROKES_PER_MATERIAL,
            stroke: StrokeConfig::default(),
            ranges: ParamRanges::default(),
            augment_per: pre.augment_per,
            crops_per_stroke: pre.crops_per_stroke,
            norm_mode: pre.norm_mode,
            recon: TrainConfig::reconstruction(seed),
            classifier: TrainConfig::classifier(seed),
            out: PathBuf::from("out"),
        }
    }

    /// Sets the seed everywhere it is used.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.recon.seed = seed;
        self.classifier.seed = seed;
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            augment_per: self.augment_per,
            crops_per_stroke: self.crops_per_stroke,
            norm_mode: self.norm_mode,
            known_materials: self.known_materials,
            seed: self.seed,
        }
    }

    pub fn materials(&self) -> usize {
        self.known_materials + self.unknown_materials
    }

    /// Reads `key = value` lines; `#` starts a comment. Keys not present keep
    /// their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text).map_err(|m| Error::format(path, m))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    fn apply_text(&mut self, text: &str) -> std::result::Result<(), String> {
        let mut seed = None;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "seed" {
                seed = Some(parse(key, value).map_err(|e| format!("line {}: {e}", n + 1))?);
                continue;
            }
            self.set(key, value).map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        if let Some(seed) = seed {
            self.set_seed(seed);
        }
        Ok(())
    }

    /// Sets one key. `seed` also reseeds both training configs.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "seed" => self.set_seed(parse(key, value)?),
            "known_materials" => self.known_materials = parse(key, value)?,
            "unknown_materials" => self.unknown_materials = parse(key, value)?,
            "strokes_per_material" => self.strokes_per_material = parse(key, value)?,
            "stroke.steps" => self.stroke.steps = parse(key, value)?,
            "stroke.sample_rate" => self.stroke.sample_rate = parse(key, value)?,
            "stroke.press_force" => self.stroke.press_force = parse(key, value)?,
            "stroke.length" => self.stroke.stroke_length = parse(key, value)?,
            "stroke.speed" => self.stroke.speed = parse(key, value)?,
            "stroke.noise_sd" => self.stroke.sensor_noise_sd = parse(key, value)?,
            "range.hardness" => self.ranges.hardness = parse_pair(key, value)?,
            "range.roughness_freq" => self.ranges.roughness_freq = parse_pair(key, value)?,
            "range.roughness_amp" => self.ranges.roughness_amp = parse_pair(key, value)?,
            "range.friction" => self.ranges.friction = parse_pair(key, value)?,
            "augment_per" => self.augment_per = value.parse().map_err(|e| format!("{e}"))?,
            "crops_per_stroke" => self.crops_per_stroke = parse(key, value)?,
            "norm_mode" => self.norm_mode = value.parse().map_err(|e| format!("{e}"))?,
            "recon.alpha" => self.recon.alpha = parse(key, value)?,
            "recon.batch_size" => self.recon.batch_size = parse(key, value)?,
            "recon.epochs" => self.recon.epochs = parse(key, value)?,
            "classifier.alpha" => self.classifier.alpha = parse(key, value)?,
            "classifier.batch_size" => self.classifier.batch_size = parse(key, value)?,
            "classifier.epochs" => self.classifier.epochs = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// The configuration as `key = value` lines, readable by [`Self::parse`].
    pub fn to_text(&self) -> String {
        let pair = |(a, b): (f64, f64)| format!("{a}, {b}");
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string");
        put("seed", self.seed.to_string());
        put("known_materials", self.known_materials.to_string());
        put("unknown_materials", self.unknown_materials.to_string());
        put("strokes_per_material", self.strokes_per_material.to_string());
        put("stroke.steps", self.stroke.steps.to_string());
        put("stroke.sample_rate", self.stroke.sample_rate.to_string());
        put("stroke.press_force", self.stroke.press_force.to_string());
        put("stroke.length", self.stroke.stroke_length.to_string());
        put("stroke.speed", self.stroke.speed.to_string());
        put("stroke.noise_sd", self.stroke.sensor_noise_sd.to_string());
        put("range.hardness", pair(self.ranges.hardness));
        put("range.roughness_freq", pair(self.ranges.roughness_freq));
        put("range.roughness_amp", pair(self.ranges.roughness_amp));
        put("range.friction", pair(self.ranges.friction));
        put("augment_per", self.augment_per.to_string());
        put("crops_per_stroke", self.crops_per_stroke.to_string());
        put("norm_mode", self.norm_mode.to_string());
        put("recon.alpha", self.recon.alpha.to_string());
        put("recon.batch_size", self.recon.batch_size.to_string());
        put("recon.epochs", self.recon.epochs.to_string());
        put("classifier.alpha", self.classifier.alpha.to_string());
        put("classifier.batch_size", self.classifier.batch_size.to_string());
        put("classifier.epochs", self.classifier.epochs.to_string());
        s
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("bad value `{value}` for `{key}`"))
}

fn parse_pair(key: &str, value: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| format!("`{key}` needs two comma-separated numbers"))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_network_settings() {
        let c = ExperimentConfig::default();
        assert_eq!((c.known_materials, c.unknown_materials), (15, 10));
        assert_eq!((c.recon.batch_size, c.classifier.batch_size), (15, 96));
        assert_eq!((c.recon.epochs, c.classifier.epochs), (200, 100));
        assert_eq!(c.recon.alpha, 1e-3);
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = ExperimentConfig::parse(
            "# experiment\nseed = 7\nrecon.epochs = 3  # short\n\naugment_per = material\nrange.roughness_freq = 2, 30\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.recon.seed, 7);
        assert_eq!(c.classifier.seed, 7);
        assert_eq!(c.recon.epochs, 3);
        assert_eq!(c.augment_per, AugmentPer::Material);
        assert_eq!(c.ranges.roughness_freq, (2.0, 30.0));
    }

    #[test]
    fn seed_line_position_does_not_matter() {
        let a = ExperimentConfig::parse("recon.epochs = 4\nseed = 9\n").unwrap();
        let b = ExperimentConfig::parse("seed = 9\nrecon.epochs = 4\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn round_trips_through_text() {
        let mut c = ExperimentConfig::with_seed(5);
        c.ranges.friction = (0.1, 0.9);
        c.norm_mode = NormMode::MinMax;
        let mut back = ExperimentConfig::parse(&c.to_text()).unwrap();
        back.out = c.out.clone();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_line() {
        let e = ExperimentConfig::parse("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(e.contains("line 2") && e.contains("bogus"), "{e}");
        assert!(ExperimentConfig::parse("recon.epochs = many").is_err());
        assert!(ExperimentConfig::parse("just words").is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let e = ExperimentConfig::load(Path::new("/nonexistent/missing.cfg")).unwrap_err();
        assert!(e.to_string().contains("missing.cfg"));
    }
}
