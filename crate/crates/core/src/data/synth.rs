use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::CellAnnotation;
use crate::error::{Error, Result};
use crate::grid::{LabelMask, Plane};

/// Placement attempts per cell before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Synthetic microscopy parameters. Axis lengths are full diameters in pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Inclusive range of cells per image.
    pub cell_count_range: [usize; 2],
    pub cell_axis_range: [f32; 2],
    pub intensity_range: [f32; 2],
    pub background_level: f32,
    pub noise_std: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 96,
            cell_count_range: [3, 8],
            cell_axis_range: [8.0, 18.0],
            intensity_range: [0.5, 0.95],
            background_level: 0.1,
            noise_std: 0.03,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [c0, c1] = self.cell_count_range;
        let [a0, a1] = self.cell_axis_range;
        let [i0, i1] = self.intensity_range;
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        if c0 > c1 {
            return bad(format!("cell_count_range {c0}..{c1} is empty"));
        }
        if !(a0 >= 3.0 && a0 <= a1) {
            return bad(format!("cell_axis_range must satisfy 3 <= min <= max, got [{a0}, {a1}]"));
        }
        if a1 >= self.image_size as f32 {
            return bad(format!("cell axes up to {a1} px do not fit a {} px image", self.image_size));
        }
        if !(i0 <= i1 && (0.0..=1.0).contains(&i0) && i1 <= 1.0) {
            return bad(format!("intensity_range must lie in [0, 1], got [{i0}, {i1}]"));
        }
        if !(0.0..=1.0).contains(&self.background_level) || self.noise_std < 0.0 {
            return bad("background_level must lie in [0, 1] and noise_std be nonnegative".into());
        }
        Ok(())
    }
}

/// One rendered cell as drawn by the generator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedCell {
    pub id: u32,
    pub cx: f32,
    pub cy: f32,
    /// Semi-axes before rotation.
    pub a: f32,
    pub b: f32,
    pub angle: f32,
    pub intensity: f32,
}

impl PlantedCell {
    /// Axis-aligned extent of the rotated ellipse.
    pub fn extent(&self) -> (f32, f32) {
        let (s, c) = self.angle.sin_cos();
        let w = 2.0 * ((self.a * c).powi(2) + (self.b * s).powi(2)).sqrt();
        let h = 2.0 * ((self.a * s).powi(2) + (self.b * c).powi(2)).sqrt();
        (w, h)
    }

    pub fn annotation(&self) -> CellAnnotation {
        let (w, h) = self.extent();
        CellAnnotation {
            id: self.id,
            cx: self.cx,
            cy: self.cy,
            w,
            h,
        }
    }

    /// Normalized radius of `(x, y)`; `<= 1` inside the ellipse.
    fn radius2(&self, x: f32, y: f32) -> f32 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSample {
    /// Grayscale intensities in `[0, 1]`.
    pub image: Plane,
    pub mask: LabelMask,
    pub cells: Vec<PlantedCell>,
}

fn place_cells(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<PlantedCell>> {
    let [c0, c1] = cfg.cell_count_range;
    let count = rng.random_range(c0..=c1);
    let [a0, a1] = cfg.cell_axis_range;
    let [i0, i1] = cfg.intensity_range;
    let size = cfg.image_size as f32;
    let mut cells: Vec<PlantedCell> = Vec::with_capacity(count);
    for id in 1..=count as u32 {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let major = rng.random_range(a0..=a1);
            let minor = rng.random_range(a0..=major);
            let angle = rng.random_range(0.0..std::f32::consts::PI);
            let r = major / 2.0;
            // Keep the whole ellipse one pixel inside the border.
            let (lo, hi) = (r + 1.0, size - 2.0 - r);
            if lo >= hi {
                continue;
            }
            let cx = rng.random_range(lo..hi);
            let cy = rng.random_range(lo..hi);
            let clear = cells
                .iter()
                .all(|o| (o.cx - cx).hypot(o.cy - cy) >= (2.0 * o.a).max(major) + 1.0);
            if clear {
                cells.push(PlantedCell {
                    id,
                    cx,
                    cy,
                    a: r,
                    b: minor / 2.0,
                    angle,
                    intensity: rng.random_range(i0..=i1),
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Placement {
                count,
                max_axis: a1,
                size: cfg.image_size,
                attempts: MAX_PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(cells)
}

/// Renders cells with a dome-shaped intensity profile over a noisy
/// background. The mask labels match `cells[i].id`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cells = place_cells(cfg, &mut rng)?;
    let n = cfg.image_size;
    let mut image = Plane::filled(n, n, cfg.background_level);
    let mut mask = LabelMask::new(n, n);
    for cell in &cells {
        let x0 = (cell.cx - cell.a - 1.0).floor().max(0.0) as usize;
        let y0 = (cell.cy - cell.a - 1.0).floor().max(0.0) as usize;
        let x1 = ((cell.cx + cell.a + 1.0).ceil() as usize).min(n - 1);
        let y1 = ((cell.cy + cell.a + 1.0).ceil() as usize).min(n - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let r2 = cell.radius2(x as f32, y as f32);
                if r2 <= 1.0 {
                    mask.set(x, y, cell.id);
                    let dome = (1.0 - 0.6 * r2).sqrt();
                    let v = cfg.background_level + (cell.intensity - cfg.background_level) * dome;
                    image.set(x, y, v);
                }
            }
        }
    }
    if cfg.noise_std > 0.0 {
        let noise = Normal::new(0.0f32, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        for v in image.data_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(SynthSample { image, mask, cells })
}
