use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::eval::{evaluate_examples, stack_inputs};
use super::optim::{Adam, PlateauConfig, PlateauState};
use crate::codec::EncodeParams;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::metrics::LossTerms;
use crate::model::{Model, ModelConfig};
use crate::tensor::NormMode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_min_delta: f64,
    pub min_lr: f64,
    pub seed: u64,
    #[serde(default)]
    pub encode: EncodeParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// 15 epochs at batch size 4.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 4,
            initial_lr: 1e-3,
            plateau_patience: 5,
            plateau_factor: 0.1,
            plateau_min_delta: 1e-4,
            min_lr: 1e-6,
            seed: 0,
            encode: EncodeParams::default(),
        }
    }

    /// 50 epochs at batch size 4 from a learning rate of 1e-4.
    pub fn paper_scale() -> Self {
        TrainConfig {
            epochs: 50,
            initial_lr: 1e-4,
            ..Self::desk()
        }
    }

    pub fn plateau(&self) -> PlateauConfig {
        PlateauConfig {
            patience: self.plateau_patience,
            factor: self.plateau_factor,
            min_delta: self.plateau_min_delta,
            min_lr: self.min_lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.initial_lr > 0.0 && self.min_lr > 0.0 && self.min_lr <= self.initial_lr) {
            return Err(Error::Config(format!(
                "need 0 < min_lr <= initial_lr, got min_lr {} and initial_lr {}",
                self.min_lr, self.initial_lr
            )));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) || self.plateau_patience == 0 {
            return Err(Error::Config("plateau_factor must lie in (0, 1) and plateau_patience be positive".into()));
        }
        Ok(())
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_centroid_mean_iou: f64,
    pub val_dimensions_ssim: f64,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_loss,val_loss,val_centroid_mean_iou,val_dimensions_ssim";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:.8},{:.8},{:.8},{:.8}",
            self.epoch, self.lr, self.train_loss, self.val_loss, self.val_centroid_mean_iou, self.val_dimensions_ssim
        )
    }
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        let _ = writeln!(s, "{}", m.csv_row());
    }
    s
}

/// Mutable training state; everything a checkpoint must restore.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    pub plateau: PlateauState,
    /// Completed epochs.
    pub epoch: usize,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochMetrics>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainState,
}

/// Training-example order for `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

impl Trainer {
    pub fn new(config: TrainConfig, model_config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(model_config, config.seed)?;
        Ok(Trainer {
            state: TrainState {
                model,
                adam: Adam::new(),
                plateau: PlateauState::new(config.initial_lr),
                epoch: 0,
                best_val_loss: None,
                history: Vec::new(),
            },
            config,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let (config, state) = ckpt.into_state()?;
        Ok(Trainer { config, state })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_state(&self.config, &self.state)
    }

    pub fn lr(&self) -> f64 {
        self.state.plateau.lr
    }

    /// One optimizer step on `batch`; returns the batch loss terms.
    pub fn step(&mut self, batch: &[&Example]) -> Result<LossTerms> {
        let input = stack_inputs(batch)?;
        let targets: Vec<_> = batch.iter().map(|e| e.targets.clone()).collect();
        let model = &mut self.state.model;
        let mut pass = model.forward(&input, NormMode::Train)?;
        let (loss, terms) = pass.loss(&targets)?;
        if !terms.total().is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: self.state.epoch,
                batch: 0,
            });
        }
        let grads = pass.graph.backward(loss)?.into_named();
        model.apply_norm_updates(&pass.norm_updates)?;
        let lr = self.state.plateau.lr;
        self.state.adam.step(&mut model.params, &grads, lr)?;
        Ok(terms)
    }

    /// A full pass over `train` followed by validation and the schedule update.
    pub fn run_epoch(&mut self, train: &[Example], val: &[Example]) -> Result<EpochMetrics> {
        if train.is_empty() {
            return Err(Error::Dataset("training split is empty".into()));
        }
        let epoch = self.state.epoch;
        let lr = self.lr();
        let order = epoch_order(train.len(), self.config.seed, epoch);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let terms = self.step(&batch).map_err(|e| match e {
                Error::NonFiniteLoss { epoch, .. } => Error::NonFiniteLoss { epoch, batch: b },
                other => other,
            })?;
            total += terms.total();
            batches += 1;
        }
        let train_loss = total / batches as f64;
        let (val_loss, iou, ssim) = if val.is_empty() {
            (train_loss, f64::NAN, f64::NAN)
        } else {
            let r = evaluate_examples(&self.state.model, val, self.config.batch_size)?;
            (r.loss, r.scores.centroid_mean_iou, r.scores.dimensions_ssim)
        };
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            lr,
            train_loss,
            val_loss,
            val_centroid_mean_iou: iou,
            val_dimensions_ssim: ssim,
        };
        let cfg = self.config.plateau();
        self.state.plateau.observe(val_loss, &cfg);
        self.state.epoch += 1;
        self.state.history.push(metrics.clone());
        Ok(metrics)
    }
}

/// Paths written by [`train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutputs {
    pub best: PathBuf,
    pub last: PathBuf,
    pub metrics: PathBuf,
}

impl TrainOutputs {
    /// `<stem>.last.ckpt` and `<stem>.metrics.csv` next to `best`.
    pub fn for_checkpoint(best: &Path) -> Self {
        let stem = best.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        let dir = best.parent().unwrap_or(Path::new(""));
        TrainOutputs {
            best: best.to_path_buf(),
            last: dir.join(format!("{stem}.last.ckpt")),
            metrics: dir.join(format!("{stem}.metrics.csv")),
        }
    }
}

/// Runs the remaining epochs. After each epoch the metrics CSV and last
/// checkpoint are rewritten; the best checkpoint (lowest validation loss)
/// is kept at `outputs.best`. `stop_after` ends early after that many
/// completed epochs.
pub fn train(
    trainer: &mut Trainer,
    train: &[Example],
    val: &[Example],
    outputs: &TrainOutputs,
    stop_after: Option<usize>,
) -> Result<()> {
    let end = stop_after.map_or(trainer.config.epochs, |s| s.min(trainer.config.epochs));
    while trainer.state.epoch < end {
        let m = trainer.run_epoch(train, val)?;
        info!(
            "epoch {} lr {:e} train {:.5} val {:.5} iou {:.4} ssim {:.4}",
            m.epoch, m.lr, m.train_loss, m.val_loss, m.val_centroid_mean_iou, m.val_dimensions_ssim
        );
        let improved = trainer.state.best_val_loss.is_none_or(|b| m.val_loss < b);
        if improved {
            trainer.state.best_val_loss = Some(m.val_loss);
        }
        let ckpt = trainer.checkpoint();
        if improved {
            ckpt.save(&outputs.best)?;
        }
        ckpt.save(&outputs.last)?;
        fs::write(&outputs.metrics, metrics_csv(&trainer.state.history))?;
    }
    Ok(())
}
