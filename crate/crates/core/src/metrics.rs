//! Regression losses and detection metrics.
//!
//! * Huber loss with transition point 1.0, mean-reduced.
//! * Total loss `L_heatmap + ½·L_height + ½·L_width`.
//! * Two-class (background, centroid) mean intersection-over-union.
//! * Global single-window SSIM with constants `(0.01·L)²` and `(0.03·L)²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DetectionMaps, Plane};

pub const HEATMAP_WEIGHT: f64 = 1.0;
pub const HEIGHT_WEIGHT: f64 = 0.5;
pub const WIDTH_WEIGHT: f64 = 0.5;

/// Heatmap threshold used when scoring centroid masks.
pub const EVAL_THRESHOLD: f32 = 0.5;

/// Dynamic range of normalized maps.
pub const UNIT_RANGE: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub heatmap: f64,
    pub height: f64,
    pub width: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        HEATMAP_WEIGHT * self.heatmap + HEIGHT_WEIGHT * self.height + WIDTH_WEIGHT * self.width
    }
}

/// Huber penalty of one residual.
#[inline]
pub fn huber_term(residual: f64) -> f64 {
    let a = residual.abs();
    if a <= 1.0 {
        0.5 * residual * residual
    } else {
        a - 0.5
    }
}

/// Mean Huber loss between targets `y` and predictions `y_hat`.
pub fn huber(y: &[f32], y_hat: &[f32]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::shape("huber", &[y.len()], &[y_hat.len()]));
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&a, &b)| huber_term(a as f64 - b as f64))
        .sum();
    Ok(sum / y.len() as f64)
}

fn huber_planes(target: &Plane, pred: &Plane) -> Result<f64> {
    if !target.same_dims(pred) {
        let (th, tw) = target.dims();
        let (ph, pw) = pred.dims();
        return Err(Error::shape("total_loss", &[th, tw], &[ph, pw]));
    }
    huber(target.data(), pred.data())
}

pub fn total_loss(outputs: &DetectionMaps, targets: &DetectionMaps) -> Result<LossTerms> {
    Ok(LossTerms {
        heatmap: huber_planes(&targets.heatmap, &outputs.heatmap)?,
        height: huber_planes(&targets.height_map, &outputs.height_map)?,
        width: huber_planes(&targets.width_map, &outputs.width_map)?,
    })
}

/// Pixel is foreground iff its value is `>= t`.
pub fn threshold_heatmap(heatmap: &Plane, t: f32) -> BinaryMask {
    heatmap.map(|&v| v >= t)
}

/// Per-class pixel counts; index 0 is background, 1 is foreground.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: [u64; 2],
    pub fp: [u64; 2],
    pub fn_: [u64; 2],
}

impl ConfusionCounts {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        if !pred.same_dims(gt) {
            let (a, b) = (pred.dims(), gt.dims());
            return Err(Error::shape("mean_iou", &[a.0, a.1], &[b.0, b.1]));
        }
        let mut c = ConfusionCounts::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            let (p, g) = (p as usize, g as usize);
            if p == g {
                c.tp[g] += 1;
            } else {
                c.fp[p] += 1;
                c.fn_[g] += 1;
            }
        }
        Ok(c)
    }

    /// IoU of one class; a class absent from both masks scores 1.
    pub fn iou(&self, class: usize) -> f64 {
        let denom = self.tp[class] + self.fp[class] + self.fn_[class];
        if denom == 0 {
            1.0
        } else {
            self.tp[class] as f64 / denom as f64
        }
    }

    pub fn mean_iou(&self) -> f64 {
        (self.iou(0) + self.iou(1)) / 2.0
    }
}

pub fn mean_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(ConfusionCounts::from_masks(pred, gt)?.mean_iou())
}

/// Population statistics entering the SSIM formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimStats {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
    pub range: f64,
}

impl SsimStats {
    pub fn compute(x1: &[f32], x2: &[f32], range: f64) -> Result<Self> {
        if x1.len() != x2.len() || x1.is_empty() {
            return Err(Error::shape("ssim", &[x1.len()], &[x2.len()]));
        }
        if range.is_nan() || range <= 0.0 {
            return Err(Error::invalid("ssim", format!("dynamic range must be positive, got {range}")));
        }
        let n = x1.len() as f64;
        let mean1 = x1.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mean2 = x2.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut var1, mut var2, mut cov) = (0.0, 0.0, 0.0);
        for (&a, &b) in x1.iter().zip(x2) {
            let (da, db) = (a as f64 - mean1, b as f64 - mean2);
            var1 += da * da;
            var2 += db * db;
            cov += da * db;
        }
        Ok(SsimStats {
            mean1,
            mean2,
            var1: var1 / n,
            var2: var2 / n,
            cov: cov / n,
            range,
        })
    }

    pub fn ssim(&self) -> f64 {
        let c1 = (0.01 * self.range).powi(2);
        let c2 = (0.03 * self.range).powi(2);
        ((2.0 * self.mean1 * self.mean2 + c1) * (2.0 * self.cov + c2))
            / ((self.mean1.powi(2) + self.mean2.powi(2) + c1) * (self.var1 + self.var2 + c2))
    }
}

/// Global (single-window) structural similarity of two equally sized maps.
pub fn ssim(x1: &Plane, x2: &Plane, range: f64) -> Result<f64> {
    if !x1.same_dims(x2) {
        let (a, b) = (x1.dims(), x2.dims());
        return Err(Error::shape("ssim", &[a.0, a.1], &[b.0, b.1]));
    }
    Ok(SsimStats::compute(x1.data(), x2.data(), range)?.ssim())
}

/// Centroid MeanIoU and dimension SSIM of one prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub centroid_mean_iou: f64,
    pub dimensions_ssim: f64,
}

/// Thresholds both heatmaps at [`EVAL_THRESHOLD`] for MeanIoU and averages
/// the SSIM of the height and width maps.
pub fn score(pred: &DetectionMaps, target: &DetectionMaps) -> Result<DetectionScores> {
    let iou = mean_iou(
        &threshold_heatmap(&pred.heatmap, EVAL_THRESHOLD),
        &threshold_heatmap(&target.heatmap, EVAL_THRESHOLD),
    )?;
    let s_h = ssim(&pred.height_map, &target.height_map, UNIT_RANGE)?;
    let s_w = ssim(&pred.width_map, &target.width_map, UNIT_RANGE)?;
    Ok(DetectionScores {
        centroid_mean_iou: iou,
        dimensions_ssim: 0.5 * (s_h + s_w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::new(h, w);
        for &(x, y) in on {
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(huber(&[2.0], &[0.0]).unwrap(), 1.5);
        assert_eq!(huber(&[0.5], &[0.0]).unwrap(), 0.125);
        assert_eq!(huber(&[-3.0], &[0.0]).unwrap(), 2.5);
        assert!(huber(&[1.0], &[]).is_err());
    }

    #[test]
    fn huber_smooth_at_transition() {
        let h = 1e-6;
        let left = (huber_term(1.0) - huber_term(1.0 - h)) / h;
        let right = (huber_term(1.0 + h) - huber_term(1.0)) / h;
        assert!((left - right).abs() < 1e-4);
    }

    #[test]
    fn total_weights() {
        let t = LossTerms {
            heatmap: 1.0,
            height: 1.0,
            width: 1.0,
        };
        assert_eq!(t.total(), 2.0);
    }

    #[test]
    fn iou_worked_example() {
        let gt = mask(4, 4, &[(0, 0), (1, 0), (0, 1), (1, 1)]);
        let pred = mask(4, 4, &[(0, 0), (1, 0), (3, 3)]);
        let c = ConfusionCounts::from_masks(&pred, &gt).unwrap();
        assert_eq!(c.iou(1), 2.0 / 5.0);
        assert_eq!(c.iou(0), 11.0 / 14.0);
        assert!((c.mean_iou() - 0.592_857).abs() < 1e-6);
    }

    #[test]
    fn iou_edge_cases() {
        let gt = mask(3, 3, &[(1, 1)]);
        assert_eq!(mean_iou(&gt, &gt).unwrap(), 1.0);
        let empty = BinaryMask::new(3, 3);
        let c = ConfusionCounts::from_masks(&empty, &gt).unwrap();
        assert_eq!(c.iou(1), 0.0);
        assert_eq!(mean_iou(&empty, &empty).unwrap(), 1.0);
        assert!(mean_iou(&BinaryMask::new(2, 3), &empty).is_err());
    }

    #[test]
    fn ssim_cases() {
        let a = Plane::from_fn(4, 5, |x, y| (x * y) as f32 / 20.0);
        assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-9);
        let ones = Plane::filled(3, 3, 1.0);
        let zeros = Plane::filled(3, 3, 0.0);
        let expected = (1e-4 * 9e-4) / ((1.0 + 1e-4) * 9e-4);
        assert!((ssim(&ones, &zeros, 1.0).unwrap() - expected).abs() < 1e-12);
        assert!(ssim(&ones, &zeros, 0.0).is_err());
        assert!(ssim(&ones, &a, 1.0).is_err());
    }

    #[test]
    fn threshold_boundary_inclusive() {
        let p = Plane::from_vec(1, 3, vec![0.49, 0.5, 0.51]).unwrap();
        assert_eq!(threshold_heatmap(&p, 0.5).data(), &[false, true, true]);
    }
}
