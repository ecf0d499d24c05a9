use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use visuotactile::analysis::material_scores;
use visuotactile::error::Result;
use visuotactile::gradcheck;
use visuotactile::harness::import::import_dataset;
use visuotactile::harness::pipeline::{self, Layout};
use visuotactile::harness::{run_pipeline, ExperimentConfig};

/// Visuo-tactile learning experiments: simulate, preprocess, train, analyze.
#[derive(Parser)]
#[command(name = "vtl", version, arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Seed for every random component; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Experiment directory; overrides the config file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic materials, images and tactile recordings.
    Simulate,
    /// Build normalized training records from a manifest.
    Preprocess {
        /// Defaults to `<out>/data/manifest.txt`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the image-to-tactile encoder-decoder.
    Train,
    /// Train the material classifier.
    TrainClassifier,
    /// Write per-material latent embeddings for both networks.
    Embed,
    /// Correlate embeddings with tactile property scores.
    Analyze,
    /// Check analytic gradients against central differences.
    Gradcheck,
    /// Run every stage and write report.txt.
    Pipeline,
    /// Convert a directory of recorded materials into a manifest.
    ImportPaperDataset {
        /// One subdirectory per material with paired png and csv files.
        #[arg(long)]
        source: PathBuf,
    },
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn log(line: &str) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<()> {
    let cfg = config(&cli.common)?;
    let layout = Layout::new(&cfg.out);
    let mut progress = log;
    match cli.command {
        Command::Simulate => {
            std::fs::create_dir_all(&layout.root)
                .map_err(|e| visuotactile::error::Error::io(&layout.root, e))?;
            let entries = pipeline::simulate(&cfg, &layout)?;
            println!("{} recordings in {}", entries.len(), layout.data().display());
        }
        Command::Preprocess { manifest } => {
            let manifest = manifest.unwrap_or_else(|| layout.manifest());
            let p = pipeline::preprocess(&cfg, &manifest, &layout)?;
            println!(
                "train {} val {} test {} unknown {} -> {}",
                p.train.len(),
                p.val.len(),
                p.test.len(),
                p.unknown.len(),
                layout.prepared().display()
            );
        }
        Command::Train => {
            let p = pipeline::load_prepared(&layout)?;
            let (_, h) = pipeline::train_reconstruction(&cfg, &p, &layout, &mut progress)?;
            println!("best epoch {} -> {}", h.best_epoch, layout.recon_checkpoint().display());
        }
        Command::TrainClassifier => {
            let p = pipeline::load_prepared(&layout)?;
            let (net, h) = pipeline::train_classifier(&cfg, &p, &layout, &mut progress)?;
            let train: Vec<_> = p.train.iter().collect();
            println!(
                "best epoch {}, train accuracy {:.4} -> {}",
                h.best_epoch,
                net.accuracy(&train, 32)?,
                layout.classifier_checkpoint().display()
            );
        }
        Command::Embed => {
            let p = pipeline::load_prepared(&layout)?;
            let recon = pipeline::load_reconstruction(&layout)?;
            let classifier = pipeline::load_classifier(&layout, &p)?;
            let (r, _) = pipeline::embed(&recon, &classifier, &p, &layout)?;
            println!("{} materials embedded", r.len());
        }
        Command::Analyze => {
            let p = pipeline::load_prepared(&layout)?;
            let scores = material_scores(&p.strokes);
            for net in ["recon", "classifier"] {
                let path = layout.embeddings(net);
                if !path.exists() && net == "classifier" {
                    continue;
                }
                let e = pipeline::read_embeddings(&path)?;
                let m = pipeline::analyze(net, &e, &scores, &layout)?;
                println!("{net}\n{m}");
            }
        }
        Command::Gradcheck => {
            let seed = cfg.seed;
            let mut reports = gradcheck::layer_suite(seed)?;
            reports.push(gradcheck::check_network(seed)?);
            let mut ok = true;
            for r in &reports {
                println!("{:<10} entries {:>4} max_rel_error {:.3e}", r.kind, r.entries, r.max_rel_error);
                ok &= r.passed();
            }
            if !ok {
                return Err(visuotactile::error::Error::Data(format!(
                    "gradient check exceeded tolerance {:e}",
                    gradcheck::TOLERANCE
                )));
            }
        }
        Command::Pipeline => {
            let report = run_pipeline(&cfg, &mut progress)?;
            println!("{}", layout.report().display());
            for key in ["recon.best.combined", "recon.best.friction", "classifier.max_abs_rho"] {
                if let Some(v) = report.get(key) {
                    println!("{key} = {v}");
                }
            }
        }
        Command::ImportPaperDataset { source } => {
            let (entries, names) = import_dataset(&source, &layout.data())?;
            println!("{} materials, {} recordings -> {}", names.len(), entries.len(), layout.manifest().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{}", e.render());
                    ExitCode::from(1)
                }
            }
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
