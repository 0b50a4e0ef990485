//! Command-line front end. Log verbosity follows `CELLDET_LOG` (default `info`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{info, warn};

use celldet::data::{list_images, write_dataset, DataConfig, Dataset, Split};
use celldet::gradcheck::{check_all, check_op, op_names, OP_TOLERANCE};
use celldet::harness::{evaluate, infer, report_json, train, Checkpoint, TrainConfig, TrainOutputs, Trainer};
use celldet::model::ModelConfig;
use celldet::tensor::complexity::{conv_flops, mhsa_flops, ComplexityParams};
use celldet::{Error, Result};

/// Exit status when some, but not all, inference inputs were unreadable.
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "celldet", version, about = "Cell centroid and dimension detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes the best checkpoint to --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_config: PathBuf,
        #[arg(long)]
        train_config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint (usually `<stem>.last.ckpt`).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detect cells in every image of a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = celldet::codec::DEFAULT_THRESHOLD)]
        threshold: f32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long)]
        op: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print attention and convolution operation counts.
    Flops {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        d: u64,
        #[arg(long)]
        h: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        f: u64,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::GenData { config, out } => {
            let cfg: DataConfig = read_json(&config)?;
            let manifest = write_dataset(&cfg, &out)?;
            info!("wrote {} samples to {}", manifest.samples.len(), out.display());
        }
        Command::Train {
            data,
            model_config,
            train_config,
            out,
            resume,
        } => {
            let model_cfg: ModelConfig = read_json(&model_config)?;
            model_cfg.validate()?;
            let train_cfg: TrainConfig = read_json(&train_config)?;
            let dataset = Dataset::open(&data)?;
            let mut trainer = match resume {
                Some(path) => Trainer::from_checkpoint(Checkpoint::load(&path)?)?,
                None => Trainer::new(train_cfg, model_cfg)?,
            };
            let size = trainer.state.model.config.input_size;
            let encode = trainer.config.encode;
            let train_set = dataset.examples(Split::Train, size, &encode)?;
            let val_set = dataset.examples(Split::Val, size, &encode)?;
            info!(
                "training on {} samples, validating on {}, {} parameters",
                train_set.len(),
                val_set.len(),
                trainer.state.model.param_count()
            );
            let outputs = TrainOutputs::for_checkpoint(&out);
            train(&mut trainer, &train_set, &val_set, &outputs, None)?;
            info!("best checkpoint {}, metrics {}", outputs.best.display(), outputs.metrics.display());
        }
        Command::Eval { ckpt, data, split, out } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let model = ckpt.model()?;
            let examples = Dataset::open(&data)?.examples(split, model.config.input_size, &ckpt.meta.train.encode)?;
            let json = report_json(&evaluate(&model, &examples)?)?;
            println!("{json}");
            if let Some(path) = out {
                fs::write(path, format!("{json}\n"))?;
            }
        }
        Command::Infer {
            ckpt,
            images,
            threshold,
            out,
        } => {
            let model = Checkpoint::load(&ckpt)?.model()?;
            let paths = list_images(&images)?;
            let outcome = infer(&model, &paths, threshold, &out)?;
            info!("{} detections in {} images", outcome.detections, outcome.processed);
            if !outcome.failed.is_empty() {
                warn!("{} images could not be read", outcome.failed.len());
                return Ok(ExitCode::from(EXIT_PARTIAL));
            }
        }
        Command::Gradcheck { op, seed } => {
            let reports = match op {
                Some(name) => check_op(&name, seed)?,
                None => check_all(seed)?,
            };
            let mut failed = 0;
            for r in &reports {
                let ok = r.max_rel_error < OP_TOLERANCE;
                failed += usize::from(!ok);
                println!(
                    "{:<18} shape {}  seed {}  rel err {:.3e}  {}",
                    r.op,
                    r.variant,
                    r.seed,
                    r.max_rel_error,
                    if ok { "ok" } else { "FAIL" }
                );
            }
            if failed > 0 {
                eprintln!("{failed} of {} checks exceeded {OP_TOLERANCE:e}", reports.len());
                return Ok(ExitCode::FAILURE);
            }
            if reports.is_empty() {
                eprintln!("no checks ran; known ops: {}", op_names().join(", "));
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Flops { n, d, h, k, f } => {
            let p = ComplexityParams::new(n, d, h, k, f)?;
            println!("mhsa_flops {}", mhsa_flops(&p));
            println!("conv_flops {}", conv_flops(&p));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("CELLDET_LOG", "info")).init();
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
