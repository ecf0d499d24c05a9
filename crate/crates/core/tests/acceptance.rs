//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.
//!
//! Criteria 5 to 8 train the full pipeline on five seeds plus a repeat of
//! seed 1, which takes several hours on one core. `VTL_ACCEPTANCE=1,3,4`
//! restricts the run to a subset.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use visuotactile::gradcheck::{check_network, layer_suite, LAYER_KINDS, SAMPLES_PER_LAYER};
use visuotactile::harness::pipeline::file_hash;
use visuotactile::harness::{run_pipeline, ExperimentConfig, Report};
use visuotactile::layers::conv::{conv_forward, deconv_forward, ConvShape, Geometry};
use visuotactile::models::build_visuotactile_net;
use visuotactile::preprocess::tactile::{CALIBRATION_STEPS, RAW_STEPS, STEPS};
use visuotactile::preprocess::{calibrate, condition, normalize_fit, prepare, AugmentPer, NormMode, PreprocessConfig};
use visuotactile::sim::{generate_dataset, sample_materials, simulate_stroke, StrokeConfig};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn shape_fidelity() -> Outcome {
    let start = Instant::now();
    let net = build_visuotactile_net(1).expect("build");
    let elapsed = start.elapsed();
    let mut chain: Vec<Vec<usize>> = net.shape_chain().into_iter().map(|(_, s)| s).collect();
    let fold = net.graph.node(net.graph.node_id("fold").expect("fold node")).shape.clone();
    chain.insert(6, fold);
    let expected: Vec<Vec<usize>> = vec![
        vec![32, 97, 97],
        vec![32, 45, 45],
        vec![32, 21, 21],
        vec![32, 9, 9],
        vec![4],
        vec![160],
        vec![1, 4, 4, 10],
        vec![32, 4, 4, 12],
        vec![32, 4, 4, 25],
        vec![32, 5, 5, 46],
        vec![3, 4, 4, 90],
    ];
    let ok = chain == expected && elapsed < Duration::from_secs(1);
    outcome(ok, format!("chain {chain:?}, built in {elapsed:.2?}"))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut reports = layer_suite(11).expect("layer suite");
    reports.push(check_network(11).expect("network check"));
    let elapsed = start.elapsed();
    let kinds: BTreeSet<&str> = reports.iter().map(|r| r.kind.as_str()).collect();
    let all_kinds = LAYER_KINDS.iter().all(|k| kinds.contains(k));
    let enough = reports
        .iter()
        .filter(|r| r.kind != "network")
        .all(|r| r.entries >= 100 && SAMPLES_PER_LAYER >= 100);
    let passed = reports.iter().all(|r| r.passed());
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let summary: Vec<String> = reports
        .iter()
        .map(|r| format!("{}:{}/{:.1e}", r.kind, r.entries, r.max_rel_error))
        .collect();
    outcome(
        all_kinds && enough && passed && elapsed < Duration::from_secs(120),
        format!("worst {worst:.2e} in {elapsed:.1?} [{}]", summary.join(" ")),
    )
}

fn adjointness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut draws = 0;
    for draw in 0.. {
        if draws == 20 {
            break;
        }
        // Even draws are 2D (singleton leading axis), odd draws 3D.
        let planar = draw % 2 == 0;
        let mut kernel = [0; 3];
        let mut stride = [0; 3];
        let mut padding = [0; 3];
        let mut small = [0; 3];
        for a in 0..3 {
            if planar && a == 0 {
                (kernel[a], stride[a], padding[a], small[a]) = (1, 1, 0, 1);
                continue;
            }
            kernel[a] = rng.random_range(1..=4);
            stride[a] = rng.random_range(1..=3);
            padding[a] = rng.random_range(0..kernel[a]);
            small[a] = rng.random_range(2..=6);
        }
        let geom = Geometry::new(kernel, stride, padding).expect("geometry");
        let Some(big) = geom.deconv_output(small) else { continue };
        assert_eq!(geom.conv_output(big), Some(small), "draw {draw}");
        let (a, b) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let batch = rng.random_range(1..=2);
        let mut vec = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let u = vec(batch * b * big.iter().product::<usize>());
        let v = vec(batch * a * small.iter().product::<usize>());
        let k = vec(a * b * geom.kernel_volume());
        let conv = ConvShape { batch, in_channels: b, out_channels: a, in_dims: big, out_dims: small };
        let deconv = ConvShape { batch, in_channels: a, out_channels: b, in_dims: small, out_dims: big };
        let cu = conv_forward(&u, &k, &vec![0.0; a], &geom, &conv);
        let dv = deconv_forward(&v, &k, &vec![0.0; b], &geom, &deconv);
        let lhs: f64 = cu.iter().zip(&v).map(|(x, y)| x * y).sum();
        let rhs: f64 = u.iter().zip(&dv).map(|(x, y)| x * y).sum();
        worst = worst.max((lhs - rhs).abs());
        draws += 1;
    }
    outcome(worst <= 1e-9, format!("max |<Ku,v> - <u,K'v>| = {worst:.2e} over {draws} draws"))
}

fn preprocessing_counts() -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let materials = sample_materials(15, 4);
    let stroke = StrokeConfig::default();
    let entries = generate_dataset(&materials, 10, &stroke, dir.path()).expect("dataset");
    let cfg = PreprocessConfig {
        augment_per: AugmentPer::Material,
        known_materials: 15,
        ..PreprocessConfig::default()
    };
    let prepared = prepare(&entries, &cfg).expect("prepare");
    let pairs = prepared.train.len();

    let raw = simulate_stroke(&materials[0], &stroke, 0).expect("stroke");
    let calibrated = calibrate(&raw).expect("calibrate");
    let stats = normalize_fit(std::slice::from_ref(&calibrated), NormMode::MinMax).expect("fit");
    let conditioned = condition(&calibrated, &stats).expect("condition");
    let steps = (raw.shape()[3], conditioned.shape()[3]);

    let t = calibrated.shape()[3];
    let worst = calibrated
        .data()
        .chunks(t)
        .map(|row| (row[..CALIBRATION_STEPS].iter().sum::<f64>() / CALIBRATION_STEPS as f64).abs())
        .fold(0.0, f64::max);
    let ok = pairs == 960 && steps == (RAW_STEPS, STEPS) && steps == (900, 90) && worst <= 1e-12;
    outcome(
        ok,
        format!("{pairs} training pairs, {} -> {} steps, calibration mean {worst:.1e}", steps.0, steps.1),
    )
}

struct Run {
    report: Report,
    recon_time: Duration,
}

fn pipeline(seed: u64, out: &Path) -> Run {
    let mut cfg = ExperimentConfig::with_seed(seed);
    cfg.out = out.to_path_buf();
    let mut marks: Vec<(String, Instant)> = Vec::new();
    let report = run_pipeline(&cfg, &mut |msg: &str| {
        if !msg.contains(" epoch ") {
            eprintln!("[seed {seed}] {msg}");
            marks.push((msg.to_string(), Instant::now()));
        }
    })
    .unwrap_or_else(|e| panic!("pipeline seed {seed}: {e}"));
    let at = |name: &str| marks.iter().find(|(m, _)| m == name).map(|(_, t)| *t).expect(name);
    let recon_time = at("training classifier") - at("training reconstruction network");
    Run { report, recon_time }
}

fn num(r: &Report, key: &str) -> f64 {
    r.get_f64(key).unwrap_or(f64::NAN)
}

fn convergence(run: &Run) -> Outcome {
    let r = &run.report;
    let ratio = num(r, "recon.final_train_loss") / num(r, "recon.epoch1_train_loss");
    let (val, base) = (num(r, "recon.val_mse"), num(r, "recon.baseline_val_mse"));
    let epochs = r.get("recon.epochs").unwrap_or("?");
    let minutes = run.recon_time.as_secs_f64() / 60.0;
    outcome(
        epochs == "200" && ratio <= 0.1 && val < base && minutes <= 30.0,
        format!("{epochs} epochs, train ratio {ratio:.4}, val {val:.4e} vs baseline {base:.4e}, {minutes:.1} min"),
    )
}

fn property_recovery(runs: &[Run]) -> Outcome {
    let mut passes = 0;
    let mut parts = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let c = num(&run.report, "recon.best.combined");
        let f = num(&run.report, "recon.best.friction");
        let known = num(&run.report, "materials.known");
        let unknown = num(&run.report, "materials.unknown");
        let ok = c >= 0.8 && f >= 0.7 && known == 15.0 && unknown == 10.0;
        passes += ok as usize;
        parts.push(format!("s{seed}: combined {c:.3} friction {f:.3}"));
    }
    outcome(passes >= 3, format!("{passes}/5 seeds [{}]", parts.join("; ")))
}

fn classifier_contrast(runs: &[Run]) -> Outcome {
    let mut accurate = 0;
    let mut weaker = 0;
    let mut parts = Vec::new();
    for (seed, run) in SEEDS.iter().zip(runs) {
        let acc = num(&run.report, "classifier.train_accuracy");
        let c = num(&run.report, "classifier.max_abs_rho");
        let r = num(&run.report, "recon.max_abs_rho");
        accurate += (acc >= 0.95) as usize;
        weaker += (c < r) as usize;
        parts.push(format!("s{seed}: acc {acc:.3} |rho| cls {c:.3} rec {r:.3}"));
    }
    outcome(
        accurate == SEEDS.len() && weaker >= 3,
        format!("accuracy >= 95% on {accurate}/5, weaker on {weaker}/5 [{}]", parts.join("; ")),
    )
}

fn determinism(dir: &Path, first_hash: &str) -> Outcome {
    pipeline(1, dir);
    let second = file_hash(&dir.join("report.txt")).expect("hash");
    outcome(first_hash == second, format!("{first_hash} vs {second}"))
}

fn main() -> ExitCode {
    let selected: BTreeSet<u32> = match std::env::var("VTL_ACCEPTANCE") {
        Ok(list) => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        Err(_) => (1..=8).collect(),
    };
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id: u32, name: &'static str, o: Outcome| {
        println!("criterion {id} {name}: {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    let want = |id: u32| selected.contains(&id);

    if want(1) {
        record(1, "shape fidelity", shape_fidelity());
    }
    if want(2) {
        record(2, "gradient suite", gradient_suite());
    }
    if want(3) {
        record(3, "adjointness", adjointness());
    }
    if want(4) {
        record(4, "preprocessing counts", preprocessing_counts());
    }

    if (5..=8).any(want) {
        let root = tempfile::tempdir().expect("tempdir");
        let seeds: &[u64] = if want(6) || want(7) { &SEEDS } else { &SEEDS[..1] };
        let runs: Vec<Run> = seeds.iter().map(|&s| pipeline(s, &root.path().join(format!("seed{s}")))).collect();
        if want(5) {
            record(5, "training convergence", convergence(&runs[0]));
        }
        if want(6) {
            record(6, "latent property recovery", property_recovery(&runs));
        }
        if want(7) {
            record(7, "classifier contrast", classifier_contrast(&runs));
        }
        if want(8) {
            let dir = root.path().join("seed1");
            let first = file_hash(&dir.join("report.txt")).expect("hash");
            fs::remove_dir_all(&dir).expect("clear seed 1 output");
            record(8, "determinism", determinism(&dir, &first));
        }
    }

    let failed: Vec<String> = results
        .iter()
        .filter(|(_, _, o)| !o.pass)
        .map(|(id, name, _)| format!("{id} ({name})"))
        .collect();
    if failed.is_empty() {
        println!("acceptance: all {} selected criteria passed", results.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
