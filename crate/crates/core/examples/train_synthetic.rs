//! Trains the desk-profile detector on an in-memory synthetic dataset and
//! reports test-split scores.
//!
//! cargo run --example train_synthetic -- [epochs] [num_samples]

use std::time::Instant;

use celldet::data::{build_dataset, prepare_example, split_indices, DataConfig, Example};
use celldet::harness::{evaluate, TrainConfig, Trainer};
use celldet::model::ModelConfig;

fn main() -> celldet::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(15, |s| s.parse().expect("epochs"));
    let num_samples = args.next().map_or(250, |s| s.parse().expect("num_samples"));

    let data_cfg = DataConfig {
        num_samples,
        ..DataConfig::desk()
    };
    let model_cfg = ModelConfig::desk();
    let train_cfg = TrainConfig {
        epochs,
        ..TrainConfig::desk()
    };

    let t0 = Instant::now();
    let samples = build_dataset(&data_cfg)?;
    let examples: Vec<Example> = samples
        .iter()
        .map(|s| prepare_example(s.id, &s.image, &s.mask, model_cfg.input_size, &train_cfg.encode))
        .collect::<celldet::Result<_>>()?;
    let [tr, va, te] = split_indices(examples.len(), data_cfg.master_seed());
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let (train, val, test) = (pick(&tr), pick(&va), pick(&te));
    println!("data: {} / {} / {} in {:.1?}", train.len(), val.len(), test.len(), t0.elapsed());

    let mut trainer = Trainer::new(train_cfg, model_cfg)?;
    for _ in 0..epochs {
        let m = trainer.run_epoch(&train, &val)?;
        println!(
            "epoch {:>2}  lr {:.0e}  train {:.5}  val {:.5}  iou {:.4}  ssim {:.4}  [{:.0?}]",
            m.epoch,
            m.lr,
            m.train_loss,
            m.val_loss,
            m.val_centroid_mean_iou,
            m.val_dimensions_ssim,
            t0.elapsed()
        );
    }
    let report = evaluate(&trainer.state.model, &test)?;
    println!(
        "test: centroid MeanIoU {:.4}, dimensions SSIM {:.4}",
        report.centroid_mean_iou, report.dimensions_ssim
    );
    Ok(())
}
