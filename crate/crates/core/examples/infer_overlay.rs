//! Trains a small model for a few epochs, then runs inference on generated PNGs
//! and writes a detections CSV plus overlays.
//!
//! cargo run --example infer_overlay -- [out_dir]

use std::path::PathBuf;

use celldet::data::io::write_gray;
use celldet::data::{build_dataset, prepare_example, DataConfig, Example, SynthConfig};
use celldet::harness::{infer, TrainConfig, Trainer};
use celldet::model::ModelConfig;

fn main() -> celldet::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "infer_out".into()));
    let images_dir = out.join("images");
    std::fs::create_dir_all(&images_dir)?;

    let data = DataConfig {
        num_samples: 60,
        synth: SynthConfig {
            image_size: 64,
            ..SynthConfig::default()
        },
        ..DataConfig::desk()
    };
    let model_cfg = ModelConfig {
        input_size: 64,
        ..ModelConfig::desk()
    };
    let train_cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::desk()
    };
    let samples = build_dataset(&data)?;
    let examples: Vec<Example> = samples
        .iter()
        .map(|s| prepare_example(s.id, &s.image, &s.mask, 64, &train_cfg.encode))
        .collect::<celldet::Result<_>>()?;
    let mut trainer = Trainer::new(train_cfg, model_cfg)?;
    for _ in 0..10 {
        let m = trainer.run_epoch(&examples[..52], &examples[52..])?;
        println!("epoch {} val loss {:.5}", m.epoch, m.val_loss);
    }

    let mut paths = Vec::new();
    for s in &samples[52..] {
        let p = images_dir.join(format!("sample_{:03}.png", s.id));
        write_gray(&p, &s.image)?;
        paths.push(p);
    }
    let outcome = infer(&trainer.state.model, &paths, 0.5, &out)?;
    println!("{} detections across {} images, written to {}", outcome.detections, outcome.processed, out.display());
    Ok(())
}
