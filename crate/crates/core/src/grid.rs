//! Row-major 2-D grids: float maps, label masks and binary masks.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Float map (heatmaps, dimension maps, grayscale images).
pub type Plane = Grid<f32>;
/// Instance labels, 0 = background.
pub type LabelMask = Grid<u32>;
pub type BinaryMask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T: Clone + Default> Grid<T> {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::default())
    }
}

impl<T> Grid<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(
                "grid",
                format!("{height}x{width} grid needs {} values, got {}", height * width, data.len()),
            ));
        }
        Ok(Grid { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        let i = self.index(x, y);
        self.data[i] = v;
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.dims() == other.dims()
    }
}

impl Grid<f32> {
    /// Single-channel view as an `[1, h, w, 1]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![1, self.height, self.width, 1], self.data.clone())
    }

    /// Extracts channel `channel` of image `index` from an NHWC tensor.
    pub fn from_tensor_channel(t: &Tensor, index: usize, channel: usize) -> Result<Self> {
        let [n, h, w, c] = *t.shape() else {
            return Err(Error::invalid("grid", format!("expected NHWC tensor, got {:?}", t.shape())));
        };
        if index >= n || channel >= c {
            return Err(Error::invalid("grid", format!("image {index} channel {channel} out of range for {:?}", t.shape())));
        }
        let base = index * h * w * c;
        let data = (0..h * w).map(|p| t.data()[base + p * c + channel]).collect();
        Ok(Grid {
            height: h,
            width: w,
            data,
        })
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Separable zero-padded convolution with a symmetric odd-length kernel,
    /// applied along rows then columns.
    pub fn convolve_separable(&self, kernel: &[f32]) -> Plane {
        let (h, w) = self.dims();
        let r = (kernel.len() / 2) as isize;
        let mut tmp = vec![0.0f32; h * w];
        for y in 0..h {
            let row = &self.data[y * w..(y + 1) * w];
            for x in 0..w {
                let mut s = 0.0f32;
                for (k, &kv) in kernel.iter().enumerate() {
                    let xx = x as isize + k as isize - r;
                    if xx >= 0 && (xx as usize) < w {
                        s += kv * row[xx as usize];
                    }
                }
                tmp[y * w + x] = s;
            }
        }
        let mut out = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0f32;
                for (k, &kv) in kernel.iter().enumerate() {
                    let yy = y as isize + k as isize - r;
                    if yy >= 0 && (yy as usize) < h {
                        s += kv * tmp[yy as usize * w + x];
                    }
                }
                out[y * w + x] = s;
            }
        }
        Grid {
            height: h,
            width: w,
            data: out,
        }
    }
}

/// Normalized Gaussian taps over `[-ceil(3σ), ceil(3σ)]`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as i32;
    let s2 = 2.0 * (sigma as f64).powi(2);
    let raw: Vec<f64> = (-r..=r).map(|k| (-(k as f64).powi(2) / s2).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

/// The three per-pixel maps a detector predicts or is trained against:
/// centroid heatmap, normalized cell height and normalized cell width.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionMaps {
    pub heatmap: Plane,
    pub height_map: Plane,
    pub width_map: Plane,
}

/// Training targets produced by the label encoder.
pub type LabelMaps = DetectionMaps;
/// One image's worth of model predictions.
pub type ModelOutputs = DetectionMaps;

impl DetectionMaps {
    pub fn zeros(height: usize, width: usize) -> Self {
        DetectionMaps {
            heatmap: Plane::new(height, width),
            height_map: Plane::new(height, width),
            width_map: Plane::new(height, width),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.heatmap.dims()
    }

    pub fn check_consistent(&self) -> Result<()> {
        if !self.heatmap.same_dims(&self.height_map) || !self.heatmap.same_dims(&self.width_map) {
            return Err(Error::invalid(
                "detection maps",
                format!(
                    "map sizes differ: heatmap {:?}, height {:?}, width {:?}",
                    self.heatmap.dims(),
                    self.height_map.dims(),
                    self.width_map.dims()
                ),
            ));
        }
        Ok(())
    }
}
