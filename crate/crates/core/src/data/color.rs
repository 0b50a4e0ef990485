//! Min-max scaling and spectral pseudocoloring.

use crate::grid::Plane;
use crate::tensor::Tensor;

/// Sixteen control points at `i / 15` sampled from the `gist_ncar` colormap.
pub const NCAR_LUT: [[f32; 3]; 16] = [
    [0.0000, 0.0000, 0.5020],
    [0.0000, 0.2660, 0.2827],
    [0.0000, 0.3874, 1.0000],
    [0.0000, 0.9308, 1.0000],
    [0.0000, 0.9804, 0.5731],
    [0.1499, 0.9408, 0.0000],
    [0.4538, 0.9104, 0.0000],
    [0.6968, 1.0000, 0.2030],
    [1.0000, 0.9711, 0.0000],
    [1.0000, 0.8066, 0.0211],
    [1.0000, 0.4404, 0.0220],
    [1.0000, 0.0560, 0.0000],
    [0.9463, 0.0269, 1.0000],
    [0.7378, 0.3147, 0.9717],
    [0.9486, 0.6637, 0.9556],
    [0.9961, 0.9725, 0.9961],
];

/// Piecewise-linear LUT lookup; `v` is clamped to `[0, 1]`.
pub fn colormap(v: f32) -> [f32; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let pos = v * (NCAR_LUT.len() - 1) as f32;
    let i = (pos.floor() as usize).min(NCAR_LUT.len() - 2);
    let t = pos - i as f32;
    let (lo, hi) = (NCAR_LUT[i], NCAR_LUT[i + 1]);
    [0, 1, 2].map(|c| lo[c] + t * (hi[c] - lo[c]))
}

/// Maps a grayscale plane to `[h, w, 3]` colors.
pub fn pseudocolor(gray: &Plane) -> Vec<[f32; 3]> {
    gray.data().iter().map(|&v| colormap(v)).collect()
}

/// Pseudocolored image as an `[1, h, w, 3]` tensor.
pub fn pseudocolor_tensor(gray: &Plane) -> Tensor {
    let (h, w) = gray.dims();
    let data = pseudocolor(gray).into_iter().flatten().collect();
    Tensor::new(vec![1, h, w, 3], data).expect("pseudocolor preserves size")
}

/// Affine rescale to `[0, 1]`; a constant image maps to zeros.
pub fn minmax_normalize(image: &Plane) -> Plane {
    let (lo, hi) = image
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return image.map(|_| 0.0);
    }
    image.map(|&v| (v - lo) / range)
}
