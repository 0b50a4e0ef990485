//! Saves a freshly initialized trainer to a checkpoint, reloads it and
//! confirms the predictions are unchanged.
//!
//! cargo run --example checkpoint -- [path]

use std::path::PathBuf;

use celldet::harness::{Checkpoint, TrainConfig, Trainer};
use celldet::model::ModelConfig;
use celldet::tensor::Tensor;

fn main() -> celldet::Result<()> {
    let path = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "model.ckpt".into()));
    let trainer = Trainer::new(TrainConfig::desk(), ModelConfig::tiny(32))?;
    trainer.checkpoint().save(&path)?;
    let loaded = Checkpoint::load(&path)?;
    let model = loaded.model()?;

    let x = Tensor::full([1, 32, 32, 3], 0.5);
    let a = trainer.state.model.predict(&x)?;
    let b = model.predict(&x)?;
    println!(
        "{} bytes, {} parameters, epoch {}, predictions identical: {}",
        std::fs::metadata(&path)?.len(),
        model.param_count(),
        loaded.meta.epoch,
        a == b
    );
    Ok(())
}
