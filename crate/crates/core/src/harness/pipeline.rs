use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::analysis::{
    embed_classifier, embed_materials, emit_scatter, latent_property_correlation, material_scores,
    CorrelationMatrix, LatentEmbedding, PropertyScores, PROPERTIES,
};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::models::{
    build_classifier_net, build_visuotactile_net, train_with, write_loss_csv, ClassifierNet, TrainHistory,
    VisuoTactileNet, LATENT,
};
use crate::preprocess::io::{read_manifest, SampleRecord};
use crate::preprocess::{augment_subset, prepare, read_prepared, write_prepared, ManifestEntry, Prepared, RawImage};
use crate::sim::{generate_dataset, sample_materials_in, MaterialSpec};
use crate::tensor::Tensor;

/// File locations inside an experiment directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn manifest(&self) -> PathBuf {
        self.data().join("manifest.txt")
    }

    pub fn materials(&self) -> PathBuf {
        self.data().join("materials.csv")
    }

    pub fn prepared(&self) -> PathBuf {
        self.root.join("prepared")
    }

    pub fn recon_checkpoint(&self) -> PathBuf {
        self.root.join("recon.vtl")
    }

    pub fn recon_loss(&self) -> PathBuf {
        self.root.join("recon_loss.csv")
    }

    pub fn classifier_checkpoint(&self) -> PathBuf {
        self.root.join("classifier.vtl")
    }

    pub fn classifier_loss(&self) -> PathBuf {
        self.root.join("classifier_loss.csv")
    }

    pub fn embeddings(&self, net: &str) -> PathBuf {
        self.root.join(format!("embeddings_{net}.csv"))
    }

    pub fn correlations(&self, net: &str) -> PathBuf {
        self.root.join(format!("correlations_{net}.txt"))
    }

    pub fn scatter(&self, net: &str) -> PathBuf {
        self.root.join("scatter").join(net)
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Ground-truth parameters of the simulated materials.
pub fn materials_csv(materials: &[MaterialSpec]) -> String {
    let mut s = String::from("material_id,hardness,roughness_freq,roughness_amp,friction,texture_style\n");
    for m in materials {
        writeln!(
            s,
            "{},{},{},{},{},{:?}",
            m.material_id, m.hardness, m.roughness_freq, m.roughness_amp, m.friction, m.texture_style
        )
        .expect("string");
    }
    s
}

/// Simulates all materials into `layout.data()`.
pub fn simulate(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<ManifestEntry>> {
    let materials = sample_materials_in(cfg.materials(), cfg.seed, &cfg.ranges)?;
    let entries = generate_dataset(&materials, cfg.strokes_per_material, &cfg.stroke, &layout.data())?;
    write(&layout.materials(), &materials_csv(&materials))?;
    Ok(entries)
}

/// Preprocesses the dataset listed in `manifest` into `layout.prepared()`.
pub fn preprocess(cfg: &ExperimentConfig, manifest: &Path, layout: &Layout) -> Result<Prepared> {
    let entries = read_manifest(manifest)?;
    let prepared = prepare(&entries, &cfg.preprocess())?;
    write_prepared(&layout.prepared(), &prepared)?;
    Ok(prepared)
}

/// Mean-predictor MSE: every sample in `eval` predicted by the mean of
/// `train` targets.
pub fn baseline_mse(train: &[SampleRecord], eval: &[SampleRecord]) -> Option<f64> {
    let first = train.first()?;
    if eval.is_empty() {
        return None;
    }
    let mut mean = Tensor::zeros(first.tactile.shape());
    for r in train {
        mean.add_assign(&r.tactile);
    }
    let mean = mean.map(|v| v / train.len() as f64);
    Some(eval.iter().map(|r| mse(&r.tactile, &mean)).sum::<f64>() / eval.len() as f64)
}

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Eval-mode MSE of the encoder-decoder's predictions.
pub fn prediction_mse(net: &VisuoTactileNet, records: &[SampleRecord]) -> Result<f64> {
    let mut total = 0.0;
    for part in records.chunks(32) {
        let images: Vec<&Tensor> = part.iter().map(|r| &r.image).collect();
        for (pred, r) in net.predict_tactile(&images)?.iter().zip(part) {
            total += mse(pred, &r.tactile);
        }
    }
    Ok(total / records.len() as f64)
}

fn progress_epochs<'a>(
    label: &'a str,
    progress: &'a mut dyn FnMut(&str),
) -> impl FnMut(usize, f64, Option<f64>) + 'a {
    move |epoch, train, val| {
        let val = val.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        progress(&format!("{label} epoch {epoch}: train {train:.6} val {val}"));
    }
}

/// Trains the encoder-decoder and writes its checkpoint and loss history.
pub fn train_reconstruction(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    layout: &Layout,
    progress: &mut dyn FnMut(&str),
) -> Result<(VisuoTactileNet, TrainHistory)> {
    let mut net = build_visuotactile_net(cfg.seed)?;
    let tc = crate::models::TrainConfig {
        checkpoint: Some(layout.recon_checkpoint()),
        ..cfg.recon.clone()
    };
    let history = train_with(&mut net, &prepared.train, &prepared.val, &tc, progress_epochs("recon", progress))?;
    write_loss_csv(&layout.recon_loss(), &history)?;
    Ok((net, history))
}

fn known_ids(prepared: &Prepared) -> Vec<usize> {
    let mut ids: Vec<usize> = prepared.train.iter().map(|r| r.material_id).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Trains the classifier and writes its checkpoint and loss history.
pub fn train_classifier(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    layout: &Layout,
    progress: &mut dyn FnMut(&str),
) -> Result<(ClassifierNet, TrainHistory)> {
    let mut net = build_classifier_net(cfg.seed)?;
    net.set_material_ids(&known_ids(prepared))?;
    let tc = crate::models::TrainConfig {
        checkpoint: Some(layout.classifier_checkpoint()),
        ..cfg.classifier.clone()
    };
    let history = train_with(
        &mut net,
        &prepared.train,
        &prepared.val,
        &tc,
        progress_epochs("classifier", progress),
    )?;
    write_loss_csv(&layout.classifier_loss(), &history)?;
    Ok((net, history))
}

/// Loads a trained encoder-decoder from its checkpoint.
pub fn load_reconstruction(layout: &Layout) -> Result<VisuoTactileNet> {
    let mut net = build_visuotactile_net(0)?;
    checkpoint::load_graph(&mut net.graph, &layout.recon_checkpoint())?;
    Ok(net)
}

/// Loads a trained classifier; class ids come from the prepared training set.
pub fn load_classifier(layout: &Layout, prepared: &Prepared) -> Result<ClassifierNet> {
    let mut net = build_classifier_net(0)?;
    net.set_material_ids(&known_ids(prepared))?;
    checkpoint::load_graph(&mut net.graph, &layout.classifier_checkpoint())?;
    Ok(net)
}

fn refs(v: &[SampleRecord]) -> Vec<&SampleRecord> {
    v.iter().collect()
}

fn known_records(p: &Prepared) -> Vec<SampleRecord> {
    p.train.iter().chain(&p.val).chain(&p.test).cloned().collect()
}

pub fn embeddings_csv(embeddings: &[LatentEmbedding]) -> String {
    let mut s = String::from("material_id,known,samples");
    for i in 1..=LATENT {
        write!(s, ",z{i}").expect("string");
    }
    s.push('\n');
    for e in embeddings {
        write!(s, "{},{},{}", e.material_id, e.known, e.samples).expect("string");
        for z in e.z {
            write!(s, ",{z:.12e}").expect("string");
        }
        s.push('\n');
    }
    s
}

/// Embeds every material with both networks and writes the CSVs.
pub fn embed(
    recon: &VisuoTactileNet,
    classifier: &ClassifierNet,
    prepared: &Prepared,
    layout: &Layout,
) -> Result<(Vec<LatentEmbedding>, Vec<LatentEmbedding>)> {
    let known = known_records(prepared);
    let r = embed_materials(recon, &known, &prepared.unknown)?;
    let c = embed_classifier(classifier, &known, &prepared.unknown)?;
    write(&layout.embeddings("recon"), &embeddings_csv(&r))?;
    write(&layout.embeddings("classifier"), &embeddings_csv(&c))?;
    Ok((r, c))
}

/// Reads an embeddings CSV written by [`embed`].
pub fn read_embeddings(path: &Path) -> Result<Vec<LatentEmbedding>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |n: usize| Error::format(path, format!("line {}: malformed row", n + 1));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 3 + LATENT {
                return Err(bad(n));
            }
            let mut z = [0.0; LATENT];
            for (i, v) in z.iter_mut().enumerate() {
                *v = f[3 + i].parse().map_err(|_| bad(n))?;
            }
            Ok(LatentEmbedding {
                material_id: f[0].parse().map_err(|_| bad(n))?,
                known: f[1].parse().map_err(|_| bad(n))?,
                samples: f[2].parse().map_err(|_| bad(n))?,
                z,
            })
        })
        .collect()
}

/// Correlation matrix plus scatter files for every axis pair and property.
pub fn analyze(
    net: &str,
    embeddings: &[LatentEmbedding],
    scores: &BTreeMap<usize, PropertyScores>,
    layout: &Layout,
) -> Result<CorrelationMatrix> {
    let matrix = latent_property_correlation(embeddings, scores)?;
    write(&layout.correlations(net), &matrix.to_string())?;
    let dir = layout.scatter(net);
    mkdir(&dir)?;
    for i in 0..LATENT {
        for j in i + 1..LATENT {
            for p in 0..PROPERTIES.len() {
                emit_scatter(embeddings, scores, (i, j), p, &dir)?;
            }
        }
    }
    Ok(matrix)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Spread of per-stroke values around their material mean, relative to the
/// spread of material means around the grand mean (both mean L2 distances).
pub fn spread_ratio(groups: &BTreeMap<usize, Vec<Vec<f64>>>) -> f64 {
    let mean = |rows: &[Vec<f64>]| -> Vec<f64> {
        let mut m = vec![0.0; rows[0].len()];
        for r in rows {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b / rows.len() as f64;
            }
        }
        m
    };
    let centers: Vec<Vec<f64>> = groups.values().map(|g| mean(g)).collect();
    let grand = mean(&centers);
    let within: Vec<f64> = groups
        .values()
        .zip(&centers)
        .flat_map(|(g, c)| g.iter().map(move |r| l2(r, c)))
        .collect();
    let between: Vec<f64> = centers.iter().map(|c| l2(c, &grand)).collect();
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    avg(&within) / avg(&between)
}

/// Robustness of latents versus scores of predicted sequences under
/// per-stroke variation (lighting, crop) on the known test-free records.
pub fn robustness(net: &VisuoTactileNet, records: &[SampleRecord]) -> Result<(f64, f64)> {
    let mut latents: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    let mut scores: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for part in records.chunks(32) {
        let images: Vec<&Tensor> = part.iter().map(|r| &r.image).collect();
        let z = net.infer_latents(&images)?;
        let pred = net.predict_tactile(&images)?;
        for ((r, z), p) in part.iter().zip(z).zip(pred) {
            latents.entry(r.material_id).or_default().push(z.to_vec());
            scores
                .entry(r.material_id)
                .or_default()
                .push(vec![PropertyScores::of(&p).combined]);
        }
    }
    Ok((spread_ratio(&latents), spread_ratio(&scores)))
}

/// Median latent distance between two crops of one image, and median
/// distance between material embeddings.
pub fn crop_consistency(
    net: &VisuoTactileNet,
    manifest: &[ManifestEntry],
    embeddings: &[LatentEmbedding],
    known: &[usize],
) -> Result<(f64, f64)> {
    let mut pairs = Vec::new();
    for m in known {
        let Some(entry) = manifest.iter().find(|e| e.material_id == *m && e.stroke_id == 0) else {
            continue;
        };
        let img = RawImage::read_png(&entry.image)?;
        let crops = augment_subset(&img, &[0, 37])?;
        let z = net.infer_latents(&[&crops[0], &crops[1]])?;
        pairs.push(l2(&z[0], &z[1]));
    }
    let mut between = Vec::new();
    for (a, ea) in embeddings.iter().enumerate() {
        for eb in &embeddings[a + 1..] {
            between.push(l2(&ea.z, &eb.z));
        }
    }
    Ok((median(pairs), median(between)))
}

/// Hex SHA-256 of a file.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Ordered `key = value` report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key)?.parse().ok()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Self {
        Report {
            entries: text
                .lines()
                .filter_map(|l| l.split_once(" = "))
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn put_matrix(report: &mut Report, net: &str, m: &CorrelationMatrix) {
    for (i, row) in m.rho.iter().enumerate() {
        for (p, r) in row.iter().enumerate() {
            let v = r.map(|r| format!("{r:.6}")).unwrap_or_else(|| "undefined".into());
            report.put(format!("{net}.rho.z{}.{}", i + 1, PROPERTIES[p]), v);
        }
    }
    for (p, name) in PROPERTIES.iter().enumerate() {
        if let Some((i, r)) = m.best(p) {
            report.put(format!("{net}.best.{name}"), format!("{r:.6}"));
            report.put(format!("{net}.best.{name}.coordinate"), format!("z{}", i + 1));
        }
    }
    let max = m.max_abs().map(|r| format!("{r:.6}")).unwrap_or_else(|| "undefined".into());
    report.put(format!("{net}.max_abs_rho"), max);
}

fn put_history(report: &mut Report, net: &str, h: &TrainHistory) {
    report.put(format!("{net}.epochs"), h.len());
    report.put(format!("{net}.epoch1_train_loss"), format!("{:.6e}", h.train[0]));
    report.put(format!("{net}.final_train_loss"), format!("{:.6e}", h.train[h.len() - 1]));
    report.put(format!("{net}.best_epoch"), h.best_epoch);
    if let Some(v) = h.val[h.best_epoch - 1] {
        report.put(format!("{net}.best_val_loss"), format!("{v:.6e}"));
    }
}

/// Simulate, preprocess, train both networks, embed, analyze, and write
/// `report.txt` under `cfg.out`. `progress` receives one line per step.
pub fn run_pipeline(cfg: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<Report> {
    let layout = Layout::new(&cfg.out);
    stage("setup", mkdir(&layout.root))?;
    progress("simulating");
    let manifest = stage("simulate", simulate(cfg, &layout))?;
    progress("preprocessing");
    let prepared = stage("preprocess", preprocess(cfg, &layout.manifest(), &layout))?;
    progress("training reconstruction network");
    let (recon, recon_hist) = stage("train", train_reconstruction(cfg, &prepared, &layout, progress))?;
    progress("training classifier");
    let (classifier, class_hist) =
        stage("train-classifier", train_classifier(cfg, &prepared, &layout, progress))?;
    progress("embedding");
    let (recon_emb, class_emb) = stage("embed", embed(&recon, &classifier, &prepared, &layout))?;
    progress("analyzing");
    let scores = material_scores(&prepared.strokes);
    let recon_corr = stage("analyze", analyze("recon", &recon_emb, &scores, &layout))?;
    let class_corr = stage("analyze", analyze("classifier", &class_emb, &scores, &layout))?;

    let mut report = Report::default();
    stage("report", (|| -> Result<()> {
        let known = known_ids(&prepared);
        report.put("seed", cfg.seed);
        report.put("materials.known", known.len());
        report.put("materials.unknown", recon_emb.iter().filter(|e| !e.known).count());
        report.put("strokes_per_material", cfg.strokes_per_material);
        report.put("samples.train", prepared.train.len());
        report.put("samples.val", prepared.val.len());
        report.put("samples.test", prepared.test.len());
        report.put("samples.unknown", prepared.unknown.len());

        report.put("recon.parameters", recon.graph.trainable_count());
        put_history(&mut report, "recon", &recon_hist);
        report.put(
            "recon.train_loss_ratio",
            format!("{:.6}", recon_hist.train[recon_hist.len() - 1] / recon_hist.train[0]),
        );
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "undefined".into());
        report.put("recon.val_mse", opt((!prepared.val.is_empty()).then(|| prediction_mse(&recon, &prepared.val)).transpose()?));
        report.put("recon.baseline_val_mse", opt(baseline_mse(&prepared.train, &prepared.val)));
        report.put("recon.test_mse", opt((!prepared.test.is_empty()).then(|| prediction_mse(&recon, &prepared.test)).transpose()?));
        report.put("recon.baseline_test_mse", opt(baseline_mse(&prepared.train, &prepared.test)));

        report.put("classifier.parameters", classifier.graph.trainable_count());
        put_history(&mut report, "classifier", &class_hist);
        report.put("classifier.train_accuracy", format!("{:.6}", classifier.accuracy(&refs(&prepared.train), 32)?));
        if !prepared.test.is_empty() {
            report.put("classifier.test_accuracy", format!("{:.6}", classifier.accuracy(&refs(&prepared.test), 32)?));
        }

        put_matrix(&mut report, "recon", &recon_corr);
        put_matrix(&mut report, "classifier", &class_corr);

        let (latent_spread, score_spread) = robustness(&recon, &known_records(&prepared))?;
        report.put("robustness.latent_spread_ratio", format!("{latent_spread:.6}"));
        report.put("robustness.predicted_score_spread_ratio", format!("{score_spread:.6}"));
        let (crop, between) = crop_consistency(&recon, &manifest, &recon_emb, &known)?;
        report.put("embedding.crop_pair_distance_median", format!("{crop:.6e}"));
        report.put("embedding.inter_material_distance_median", format!("{between:.6e}"));

        write(&layout.root.join("config.txt"), &cfg.to_text())?;
        let mut files = Vec::new();
        walk(&layout.root, &mut files)?;
        for f in files.iter().filter(|f| **f != layout.report()) {
            let rel = f.strip_prefix(&layout.root).unwrap_or(f);
            report.put(format!("artifact.{}", rel.display()), file_hash(f)?);
        }
        write(&layout.report(), &report.to_text())
    })())?;
    Ok(report)
}

/// Re-runs the preprocessing stage from a prepared directory without
/// touching the raw data.
pub fn load_prepared(layout: &Layout) -> Result<Prepared> {
    read_prepared(&layout.prepared())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_of_constant_targets_is_zero() {
        let rec = |v: f64| SampleRecord {
            material_id: 0,
            stroke_id: 0,
            augmentation_id: 0,
            image: Tensor::zeros(&[1]),
            tactile: Tensor::filled(&[4], v),
        };
        let train = [rec(0.5), rec(0.5)];
        assert_eq!(baseline_mse(&train, &[rec(0.5)]), Some(0.0));
        assert_eq!(baseline_mse(&[rec(0.0), rec(1.0)], &[rec(1.0)]), Some(0.25));
        assert_eq!(baseline_mse(&[], &[rec(1.0)]), None);
    }

    #[test]
    fn spread_ratio_zero_for_identical_members() {
        let mut g = BTreeMap::new();
        g.insert(0, vec![vec![0.0, 0.0]; 3]);
        g.insert(1, vec![vec![2.0, 0.0]; 3]);
        assert_eq!(spread_ratio(&g), 0.0);
        g.insert(2, vec![vec![1.0, 1.0], vec![1.0, -1.0]]);
        assert!(spread_ratio(&g) > 0.0);
    }

    #[test]
    fn report_round_trip() {
        let mut r = Report::default();
        r.put("a", 1);
        r.put("b.c", "x y");
        assert_eq!(Report::parse(&r.to_text()), r);
        assert_eq!(r.get_f64("a"), Some(1.0));
    }

    #[test]
    fn embeddings_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let e = vec![LatentEmbedding {
            material_id: 4,
            known: false,
            z: [0.1, -2.5e-7, 3.0, 0.0],
            samples: 10,
        }];
        let path = dir.path().join("e.csv");
        std::fs::write(&path, embeddings_csv(&e)).unwrap();
        assert_eq!(read_embeddings(&path).unwrap(), e);
    }
}
