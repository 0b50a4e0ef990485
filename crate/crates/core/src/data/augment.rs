//! Geometric augmentations by inverse mapping.
//!
//! Every op defines, for each output pixel, the source location it samples.
//! Images are sampled bilinearly with edge clamping, masks by nearest
//! neighbour with zero outside, so a mask never gains a label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_kernel, LabelMask, Plane};

pub const AUGMENTATION_NAMES: [&str; 4] = ["shift", "rotate", "grid_distortion", "elastic"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Augmentation {
    /// Translation by `(dx, dy)` pixels.
    Shift { dx: f32, dy: f32 },
    /// Counter-clockwise rotation about the image centre.
    Rotate { degrees: f32 },
    /// Random displacement of a `grid × grid` control lattice; interior
    /// control points move by up to `limit` cell sizes.
    GridDistortion { grid: usize, limit: f32 },
    /// Smoothed random displacement field with peak magnitude `alpha` pixels.
    Elastic { alpha: f32, sigma: f32 },
}

/// Magnitudes from which dataset augmentations are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Chance that a sample is augmented at all.
    pub probability: f32,
    pub ops: Vec<String>,
    pub max_shift: f32,
    pub max_rotation: f32,
    pub grid_size: usize,
    pub grid_limit: f32,
    pub elastic_alpha: f32,
    pub elastic_sigma: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            probability: 0.5,
            ops: AUGMENTATION_NAMES.iter().map(|s| s.to_string()).collect(),
            max_shift: 8.0,
            max_rotation: 180.0,
            grid_size: 4,
            grid_limit: 0.2,
            elastic_alpha: 2.0,
            elastic_sigma: 6.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for name in &self.ops {
            if !AUGMENTATION_NAMES.contains(&name.as_str()) {
                return Err(Error::UnknownAugmentation(name.clone()));
            }
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("augment probability {} outside [0, 1]", self.probability)));
        }
        if self.grid_size == 0 || self.elastic_sigma <= 0.0 {
            return Err(Error::Config("grid_size and elastic_sigma must be positive".into()));
        }
        Ok(())
    }
}

impl Augmentation {
    /// Draws the parameters of the op called `name`.
    pub fn sample(name: &str, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(match name {
            "shift" => Augmentation::Shift {
                dx: rng.random_range(-cfg.max_shift..=cfg.max_shift).round(),
                dy: rng.random_range(-cfg.max_shift..=cfg.max_shift).round(),
            },
            "rotate" => Augmentation::Rotate {
                degrees: rng.random_range(-cfg.max_rotation..=cfg.max_rotation),
            },
            "grid_distortion" => Augmentation::GridDistortion {
                grid: cfg.grid_size,
                limit: cfg.grid_limit,
            },
            "elastic" => Augmentation::Elastic {
                alpha: cfg.elastic_alpha,
                sigma: cfg.elastic_sigma,
            },
            other => return Err(Error::UnknownAugmentation(other.to_string())),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Augmentation::Shift { .. } => "shift",
            Augmentation::Rotate { .. } => "rotate",
            Augmentation::GridDistortion { .. } => "grid_distortion",
            Augmentation::Elastic { .. } => "elastic",
        }
    }
}

/// `(cos, sin)` with exact values at multiples of 90°.
fn exact_sin_cos(degrees: f32) -> (f32, f32) {
    let turns = degrees / 90.0;
    if turns == turns.round() {
        return match (turns.round() as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
    }
    let (s, c) = degrees.to_radians().sin_cos();
    (c, s)
}

/// Where a point moves to under a shift or rotation, for bookkeeping.
pub fn forward_point(aug: &Augmentation, x: f32, y: f32, height: usize, width: usize) -> Option<(f32, f32)> {
    match *aug {
        Augmentation::Shift { dx, dy } => Some((x + dx, y + dy)),
        Augmentation::Rotate { degrees } => {
            let (c, s) = exact_sin_cos(degrees);
            let (ox, oy) = ((width as f32 - 1.0) / 2.0, (height as f32 - 1.0) / 2.0);
            let (u, v) = (x - ox, y - oy);
            // Image rows grow downwards, so a counter-clockwise turn on screen
            // negates the usual sign of the sine.
            Some((ox + c * u + s * v, oy - s * u + c * v))
        }
        _ => None,
    }
}

/// Bilinear sample with clamp-to-edge.
pub fn sample_bilinear(img: &Plane, x: f32, y: f32) -> f32 {
    let (h, w) = img.dims();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (tx, ty) = (x - x0 as f32, y - y0 as f32);
    let top = img.get(x0, y0) * (1.0 - tx) + img.get(x1, y0) * tx;
    let bottom = img.get(x0, y1) * (1.0 - tx) + img.get(x1, y1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Nearest-neighbour sample; zero outside the mask.
pub fn sample_nearest(mask: &LabelMask, x: f32, y: f32) -> u32 {
    let (xr, yr) = (x.round(), y.round());
    if xr < 0.0 || yr < 0.0 || xr >= mask.width() as f32 || yr >= mask.height() as f32 {
        return 0;
    }
    *mask.get(xr as usize, yr as usize)
}

fn warp(image: &Plane, mask: &LabelMask, source: impl Fn(usize, usize) -> (f32, f32)) -> (Plane, LabelMask) {
    let (h, w) = image.dims();
    let mut out_img = Plane::new(h, w);
    let mut out_mask = LabelMask::new(h, w);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = source(x, y);
            out_img.set(x, y, sample_bilinear(image, sx, sy));
            out_mask.set(x, y, sample_nearest(mask, sx, sy));
        }
    }
    (out_img, out_mask)
}

fn grid_field(h: usize, w: usize, grid: usize, limit: f32, rng: &mut ChaCha8Rng) -> (Plane, Plane) {
    let n = grid + 1;
    let (cell_x, cell_y) = (w as f32 / grid as f32, h as f32 / grid as f32);
    let mut ctrl = vec![(0.0f32, 0.0f32); n * n];
    for j in 1..grid {
        for i in 1..grid {
            ctrl[j * n + i] = (
                rng.random_range(-limit..=limit) * cell_x,
                rng.random_range(-limit..=limit) * cell_y,
            );
        }
    }
    let at = |x: usize, y: usize, pick: fn((f32, f32)) -> f32| {
        let u = x as f32 / (w.max(2) - 1) as f32 * grid as f32;
        let v = y as f32 / (h.max(2) - 1) as f32 * grid as f32;
        let (i0, j0) = ((u.floor() as usize).min(grid - 1), (v.floor() as usize).min(grid - 1));
        let (tu, tv) = (u - i0 as f32, v - j0 as f32);
        let c = |i: usize, j: usize| pick(ctrl[j * n + i]);
        let top = c(i0, j0) * (1.0 - tu) + c(i0 + 1, j0) * tu;
        let bottom = c(i0, j0 + 1) * (1.0 - tu) + c(i0 + 1, j0 + 1) * tu;
        top * (1.0 - tv) + bottom * tv
    };
    (
        Plane::from_fn(h, w, |x, y| at(x, y, |p| p.0)),
        Plane::from_fn(h, w, |x, y| at(x, y, |p| p.1)),
    )
}

fn elastic_field(h: usize, w: usize, alpha: f32, sigma: f32, rng: &mut ChaCha8Rng) -> (Plane, Plane) {
    let kernel = gaussian_kernel(sigma);
    let mut smooth = || {
        let noise = Plane::from_fn(h, w, |_, _| rng.random_range(-1.0f32..=1.0));
        let field = noise.convolve_separable(&kernel);
        let peak = field.data().iter().fold(0.0f32, |m, v| m.max(v.abs()));
        if peak > 0.0 {
            field.map(|v| v / peak * alpha)
        } else {
            field
        }
    };
    let fx = smooth();
    let fy = smooth();
    (fx, fy)
}

/// Applies `aug` to an image and its instance mask. Random fields derive
/// from `seed`.
pub fn augment(image: &Plane, mask: &LabelMask, aug: &Augmentation, seed: u64) -> Result<(Plane, LabelMask)> {
    if !image.same_dims(mask) {
        let (a, b) = (image.dims(), mask.dims());
        return Err(Error::shape("augment", &[a.0, a.1], &[b.0, b.1]));
    }
    let (h, w) = image.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match *aug {
        Augmentation::Shift { dx, dy } => warp(image, mask, |x, y| (x as f32 - dx, y as f32 - dy)),
        Augmentation::Rotate { degrees } => {
            // Inverse map: rotate the output location back by the same angle.
            let inverse = Augmentation::Rotate { degrees: -degrees };
            warp(image, mask, |x, y| {
                forward_point(&inverse, x as f32, y as f32, h, w).expect("rotation maps every point")
            })
        }
        Augmentation::GridDistortion { grid, limit } => {
            if grid == 0 {
                return Err(Error::invalid("augment", "grid size must be positive"));
            }
            let (fx, fy) = grid_field(h, w, grid, limit, &mut rng);
            warp(image, mask, |x, y| (x as f32 + fx.get(x, y), y as f32 + fy.get(x, y)))
        }
        Augmentation::Elastic { alpha, sigma } => {
            if !(sigma > 0.0) {
                return Err(Error::invalid("augment", "elastic sigma must be positive"));
            }
            let (fx, fy) = elastic_field(h, w, alpha, sigma, &mut rng);
            warp(image, mask, |x, y| (x as f32 + fx.get(x, y), y as f32 + fy.get(x, y)))
        }
    })
}

/// Resamples to `size × size`: bilinear with half-pixel centres for the
/// image, nearest for the mask.
pub fn resize_to_input(image: &Plane, mask: Option<&LabelMask>, size: usize) -> (Plane, Option<LabelMask>) {
    let (h, w) = image.dims();
    if (h, w) == (size, size) {
        return (image.clone(), mask.cloned());
    }
    let (sx, sy) = (w as f32 / size as f32, h as f32 / size as f32);
    let src = |d: usize, scale: f32| (d as f32 + 0.5) * scale - 0.5;
    let img = Plane::from_fn(size, size, |x, y| sample_bilinear(image, src(x, sx), src(y, sy)));
    let mask = mask.map(|m| {
        let (mh, mw) = m.dims();
        LabelMask::from_fn(size, size, |x, y| {
            let mx = (((x as f32 + 0.5) * sx).floor() as usize).min(mw - 1);
            let my = (((y as f32 + 0.5) * sy).floor() as usize).min(mh - 1);
            *m.get(mx, my)
        })
    });
    (img, mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (Plane, LabelMask) {
        let img = Plane::from_fn(10, 10, |x, y| (x * 10 + y) as f32 / 100.0);
        let mask = LabelMask::from_fn(10, 10, |x, y| if (3..6).contains(&x) && (2..5).contains(&y) { 4 } else { 0 });
        (img, mask)
    }

    #[test]
    fn zero_shift_is_identity() {
        let (img, mask) = sample();
        let (a, b) = augment(&img, &mask, &Augmentation::Shift { dx: 0.0, dy: 0.0 }, 0).unwrap();
        assert_eq!((a, b), (img, mask));
    }

    #[test]
    fn quarter_turns_are_exact() {
        let (img, mask) = sample();
        let mut cur = (img.clone(), mask.clone());
        for _ in 0..4 {
            cur = augment(&cur.0, &cur.1, &Augmentation::Rotate { degrees: 90.0 }, 0).unwrap();
        }
        assert_eq!(cur, (img.clone(), mask.clone()));
        let full = augment(&img, &mask, &Augmentation::Rotate { degrees: 360.0 }, 0).unwrap();
        assert_eq!(full, (img, mask));
    }

    #[test]
    fn quarter_turn_direction() {
        let (img, mask) = sample();
        let (_, m) = augment(&img, &mask, &Augmentation::Rotate { degrees: 90.0 }, 0).unwrap();
        // Counter-clockwise: the top-left pixel moves to the bottom-left.
        let (x, y) = forward_point(&Augmentation::Rotate { degrees: 90.0 }, 0.0, 0.0, 10, 10).unwrap();
        assert_eq!((x, y), (0.0, 9.0));
        assert_eq!(*m.get(2, 6), 4);
    }

    #[test]
    fn unknown_op_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = Augmentation::sample("flip", &AugmentConfig::default(), &mut rng);
        assert!(matches!(err, Err(Error::UnknownAugmentation(name)) if name == "flip"));
    }

    #[test]
    fn resize_identity_and_halving() {
        let (img, mask) = sample();
        let (a, b) = resize_to_input(&img, Some(&mask), 10);
        assert_eq!((a, b.unwrap()), (img.clone(), mask.clone()));
        let (small, m) = resize_to_input(&img, Some(&mask), 5);
        assert_eq!(small.dims(), (5, 5));
        assert!(m.unwrap().data().iter().all(|&v| v == 0 || v == 4));
    }
}
