//! Independent reference implementations and fixtures shared by the test targets.
#![allow(dead_code)]

use celldet::codec::CellAnnotation;
use celldet::data::{build_dataset, prepare_example, split_indices, synth_generate, DataConfig, Example, SynthConfig};
use celldet::grid::BinaryMask;
use celldet::harness::TrainConfig;

/// MeanIoU by counting pixel sets of each class directly.
pub fn brute_mean_iou(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let mut total = 0.0;
    for class in [false, true] {
        let p: Vec<usize> = (0..pred.len()).filter(|&i| pred.data()[i] == class).collect();
        let g: Vec<usize> = (0..gt.len()).filter(|&i| gt.data()[i] == class).collect();
        let inter = p.iter().filter(|i| g.contains(i)).count();
        let union = p.len() + g.len() - inter;
        total += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    total / 2.0
}

/// SSIM written out term by term from the luminance/contrast/structure formula.
pub fn direct_ssim(x: &[f32], y: &[f32], l: f64) -> f64 {
    let n = x.len() as f64;
    let mu_x: f64 = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mu_y: f64 = y.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|&v| (v as f64 - mu_x).powi(2)).sum::<f64>() / n;
    let syy: f64 = y.iter().map(|&v| (v as f64 - mu_y).powi(2)).sum::<f64>() / n;
    let sxy: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a as f64 - mu_x) * (b as f64 - mu_y))
        .sum::<f64>()
        / n;
    let c1 = (0.01 * l) * (0.01 * l);
    let c2 = (0.03 * l) * (0.03 * l);
    (2.0 * mu_x * mu_y + c1) * (2.0 * sxy + c2) / ((mu_x * mu_x + mu_y * mu_y + c1) * (sxx + syy + c2))
}

/// Scalar Huber with transition point 1, averaged.
pub fn scalar_huber(y: &[f32], y_hat: &[f32]) -> f64 {
    let mut s = 0.0;
    for (&a, &b) in y.iter().zip(y_hat) {
        let r = (a as f64 - b as f64).abs();
        s += if r <= 1.0 { 0.5 * r * r } else { r - 0.5 };
    }
    s / y.len() as f64
}

/// Layouts of well-separated cells drawn from the synthetic generator.
pub fn separated_layout(seed: u64) -> (usize, Vec<CellAnnotation>) {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let sample = synth_generate(&cfg).expect("synthetic layout");
    (cfg.image_size, sample.cells.iter().map(|c| c.annotation()).collect())
}

/// A small in-memory dataset at `size`, split into train/val/test.
pub fn small_splits(num_samples: usize, size: usize, seed: u64) -> [Vec<Example>; 3] {
    let cfg = DataConfig {
        num_samples,
        synth: SynthConfig {
            image_size: size,
            cell_axis_range: [6.0, 12.0],
            cell_count_range: [2, 4],
            seed,
            ..SynthConfig::default()
        },
        ..DataConfig::desk()
    };
    splits(&cfg, size, &TrainConfig::desk())
}

pub fn splits(cfg: &DataConfig, size: usize, train: &TrainConfig) -> [Vec<Example>; 3] {
    let samples = build_dataset(cfg).expect("dataset");
    let examples: Vec<Example> = samples
        .iter()
        .map(|s| prepare_example(s.id, &s.image, &s.mask, size, &train.encode).expect("example"))
        .collect();
    split_indices(examples.len(), cfg.master_seed()).map(|idx| idx.iter().map(|&i| examples[i].clone()).collect())
}
