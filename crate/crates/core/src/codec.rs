//! Bounding-ellipse label codec.
//!
//! Cells are described by centroid, width and height. Encoding turns a set
//! of cells into three `H×W` targets:
//!
//! * a centroid heatmap: each cell contributes a filled ellipse with
//!   semi-axes `(α·w/2, α·h/2)`, Gaussian-blurred with
//!   `σ = max(1, min(w, h)/8)` and rescaled to peak 1; cells are composited
//!   with an elementwise max so overlaps never exceed 1;
//! * height and width maps: a `β·w × β·h` rectangle centred on the
//!   centroid holding `h/H` (resp. `w/W`). Later ids overwrite earlier ones.
//!
//! Decoding thresholds the heatmap, takes each 8-connected component's
//! heatmap maximum as the centroid and reads the dimensions there.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_kernel, BinaryMask, DetectionMaps, LabelMask, LabelMaps, Plane};

/// Default heatmap threshold for decoding.
pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// One annotated cell. Coordinates are pixel indices (`x` = column, `y` = row).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAnnotation {
    pub id: u32,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl CellAnnotation {
    /// Rescales position and extent by independent x/y factors.
    pub fn scaled(&self, sx: f32, sy: f32) -> Self {
        CellAnnotation {
            id: self.id,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            w: self.w * sx,
            h: self.h * sy,
        }
    }
}

/// A decoded bounding ellipse with its heatmap score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeParams {
    /// Ellipse extent relative to the cell extent.
    pub ellipse_scale: f32,
    /// Dimension-rectangle extent relative to the cell extent.
    pub rect_scale: f32,
    pub min_sigma: f32,
    /// `σ = max(min_sigma, min(w, h) / sigma_divisor)`.
    pub sigma_divisor: f32,
}

impl Default for EncodeParams {
    fn default() -> Self {
        EncodeParams {
            ellipse_scale: 0.5,
            rect_scale: 0.3,
            min_sigma: 1.0,
            sigma_divisor: 8.0,
        }
    }
}

impl EncodeParams {
    pub fn sigma(&self, w: f32, h: f32) -> f32 {
        (w.min(h) / self.sigma_divisor).max(self.min_sigma)
    }
}

// ------------------------------------------------------------ mask → cells

#[derive(Default)]
struct Accum {
    sum_x: u64,
    sum_y: u64,
    count: u64,
    min_x: usize,
    max_x: usize,
    min_y: usize,
    max_y: usize,
}

/// One annotation per positive label, ascending by id. The centroid is the
/// mean member-pixel coordinate; `w`/`h` span the tight bounding box.
pub fn annotations_from_instance_mask(mask: &LabelMask) -> Vec<CellAnnotation> {
    let mut acc: BTreeMap<u32, Accum> = BTreeMap::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            let label = *mask.get(x, y);
            if label == 0 {
                continue;
            }
            let a = acc.entry(label).or_insert_with(|| Accum {
                min_x: x,
                max_x: x,
                min_y: y,
                max_y: y,
                ..Default::default()
            });
            a.sum_x += x as u64;
            a.sum_y += y as u64;
            a.count += 1;
            a.min_x = a.min_x.min(x);
            a.max_x = a.max_x.max(x);
            a.min_y = a.min_y.min(y);
            a.max_y = a.max_y.max(y);
        }
    }
    acc.into_iter()
        .map(|(id, a)| CellAnnotation {
            id,
            cx: (a.sum_x as f64 / a.count as f64) as f32,
            cy: (a.sum_y as f64 / a.count as f64) as f32,
            w: (a.max_x - a.min_x + 1) as f32,
            h: (a.max_y - a.min_y + 1) as f32,
        })
        .collect()
}

// ------------------------------------------------------------ rasterization

#[inline]
fn in_ellipse(x: f64, y: f64, cx: f64, cy: f64, a: f64, b: f64) -> bool {
    let dx = (x - cx) / a;
    let dy = (y - cy) / b;
    dx * dx + dy * dy <= 1.0
}

/// Pixels `(x, y)` with `((x - cx)/a)² + ((y - cy)/b)² <= 1`, clipped to the image.
pub fn rasterize_ellipse(cx: f32, cy: f32, a: f32, b: f32, height: usize, width: usize) -> BinaryMask {
    let mut m = BinaryMask::new(height, width);
    if !(a > 0.0 && b > 0.0) {
        return m;
    }
    let (cx, cy, a, b) = (cx as f64, cy as f64, a as f64, b as f64);
    let x0 = (cx - a).floor().max(0.0) as usize;
    let y0 = (cy - b).floor().max(0.0) as usize;
    let x1 = ((cx + a).ceil().max(-1.0) as isize).min(width as isize - 1);
    let y1 = ((cy + b).ceil().max(-1.0) as isize).min(height as isize - 1);
    if x1 < 0 || y1 < 0 {
        return m;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            if in_ellipse(x as f64, y as f64, cx, cy, a, b) {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// The blurred, peak-normalized centroid blob of one cell on a local canvas
/// whose top-left pixel is `(left, top)` in image coordinates.
struct Blob {
    left: i64,
    top: i64,
    w: usize,
    h: usize,
    values: Vec<f32>,
}

fn centroid_blob(cell: &CellAnnotation, params: &EncodeParams) -> Blob {
    // Semi-axes of at least one pixel keep every cell's blob non-empty.
    let a = (params.ellipse_scale * cell.w / 2.0).max(1.0) as f64;
    let b = (params.ellipse_scale * cell.h / 2.0).max(1.0) as f64;
    let kernel = gaussian_kernel(params.sigma(cell.w, cell.h));
    let r = (kernel.len() / 2) as i64;
    let (cx, cy) = (cell.cx as f64, cell.cy as f64);
    let left = (cx - a).floor() as i64 - r;
    let right = (cx + a).ceil() as i64 + r;
    let top = (cy - b).floor() as i64 - r;
    let bottom = (cy + b).ceil() as i64 + r;
    let (w, h) = ((right - left + 1) as usize, (bottom - top + 1) as usize);
    let mut canvas = vec![0.0f32; w * h];
    for j in 0..h {
        for i in 0..w {
            let (x, y) = ((left + i as i64) as f64, (top + j as i64) as f64);
            if in_ellipse(x, y, cx, cy, a, b) {
                canvas[j * w + i] = 1.0;
            }
        }
    }
    let canvas = Plane::from_vec(h, w, canvas).expect("canvas size");
    let mut values = canvas.convolve_separable(&kernel).into_vec();
    let peak = values.iter().copied().fold(0.0f32, f32::max);
    if peak > 0.0 {
        values.iter_mut().for_each(|v| *v /= peak);
    }
    Blob {
        left,
        top,
        w,
        h,
        values,
    }
}

fn check_annotation(a: &CellAnnotation, height: usize, width: usize) -> Result<()> {
    let inside = a.cx >= 0.0 && a.cy >= 0.0 && a.cx <= (width - 1) as f32 && a.cy <= (height - 1) as f32;
    if !inside || !a.cx.is_finite() || !a.cy.is_finite() {
        return Err(Error::AnnotationOutOfBounds {
            id: a.id,
            cx: a.cx,
            cy: a.cy,
            width,
            height,
        });
    }
    if !(a.w >= 1.0 && a.h >= 1.0) {
        return Err(Error::invalid(
            "encode",
            format!("annotation {} has extent {}x{}, expected at least 1x1", a.id, a.w, a.h),
        ));
    }
    Ok(())
}

/// Builds heatmap, height map and width map targets for `annotations`.
pub fn encode(annotations: &[CellAnnotation], height: usize, width: usize, params: &EncodeParams) -> Result<LabelMaps> {
    for a in annotations {
        check_annotation(a, height, width)?;
    }
    let mut ordered: Vec<&CellAnnotation> = annotations.iter().collect();
    ordered.sort_by_key(|a| a.id);

    let mut maps = DetectionMaps::zeros(height, width);
    for cell in &ordered {
        let blob = centroid_blob(cell, params);
        for j in 0..blob.h {
            let y = blob.top + j as i64;
            if y < 0 || y >= height as i64 {
                continue;
            }
            for i in 0..blob.w {
                let x = blob.left + i as i64;
                if x < 0 || x >= width as i64 {
                    continue;
                }
                let v = blob.values[j * blob.w + i];
                let (x, y) = (x as usize, y as usize);
                if v > *maps.heatmap.get(x, y) {
                    maps.heatmap.set(x, y, v);
                }
            }
        }
    }

    for cell in &ordered {
        let half_w = (params.rect_scale * cell.w / 2.0).max(1.0);
        let half_h = (params.rect_scale * cell.h / 2.0).max(1.0);
        let hv = cell.h / height as f32;
        let wv = cell.w / width as f32;
        let x0 = (cell.cx - half_w).ceil().max(0.0) as usize;
        let x1 = ((cell.cx + half_w).floor() as isize).min(width as isize - 1);
        let y0 = (cell.cy - half_h).ceil().max(0.0) as usize;
        let y1 = ((cell.cy + half_h).floor() as isize).min(height as isize - 1);
        if x1 < 0 || y1 < 0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                maps.height_map.set(x, y, hv);
                maps.width_map.set(x, y, wv);
            }
        }
    }
    Ok(maps)
}

// ------------------------------------------------------------ decoding

/// 8-connected components in raster order of their first pixel.
pub fn connected_components(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !mask.data()[i] || seen[i] {
                continue;
            }
            seen[i] = true;
            queue.push_back((x, y));
            let mut comp = Vec::new();
            while let Some((cx, cy)) = queue.pop_front() {
                comp.push((cx, cy));
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let (nx, ny) = (cx as isize + dx, cy as isize + dy);
                        if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if mask.data()[j] && !seen[j] {
                            seen[j] = true;
                            queue.push_back((nx as usize, ny as usize));
                        }
                    }
                }
            }
            comps.push(comp);
        }
    }
    comps
}

/// Smallest decoded extent; dimension maps that read zero at a peak still
/// yield a positive size.
pub const MIN_DECODED_EXTENT: f32 = 1.0;

pub fn decode(outputs: &DetectionMaps, threshold: f32) -> Result<Vec<Detection>> {
    outputs.check_consistent()?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("decode", format!("threshold must lie in (0, 1), got {threshold}")));
    }
    let (h, w) = outputs.dims();
    let mask = outputs.heatmap.map(|&v| v >= threshold);
    let mut dets = Vec::new();
    for comp in connected_components(&mask) {
        // Raster-order scan with a strict comparison breaks ties towards the
        // smallest row, then column.
        let mut best: Option<(usize, usize, f32)> = None;
        let mut pixels = comp;
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        for (x, y) in pixels {
            let v = *outputs.heatmap.get(x, y);
            if best.is_none_or(|(_, _, b)| v > b) {
                best = Some((x, y, v));
            }
        }
        let (x, y, score) = best.expect("components are non-empty");
        dets.push(Detection {
            cx: x as f32,
            cy: y as f32,
            w: (outputs.width_map.get(x, y) * w as f32).max(MIN_DECODED_EXTENT),
            h: (outputs.height_map.get(x, y) * h as f32).max(MIN_DECODED_EXTENT),
            score,
        });
    }
    Ok(dets)
}

/// Greedy nearest-centroid matching of detections to annotations. Returns
/// `(annotation index, detection index, centroid distance)` triples.
pub fn match_detections(annotations: &[CellAnnotation], detections: &[Detection]) -> Vec<(usize, usize, f32)> {
    let mut pairs: Vec<(f32, usize, usize)> = Vec::new();
    for (i, a) in annotations.iter().enumerate() {
        for (j, d) in detections.iter().enumerate() {
            pairs.push(((a.cx - d.cx).hypot(a.cy - d.cy), i, j));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut used_a = vec![false; annotations.len()];
    let mut used_d = vec![false; detections.len()];
    let mut out = Vec::new();
    for (dist, i, j) in pairs {
        if !used_a[i] && !used_d[j] {
            used_a[i] = true;
            used_d[j] = true;
            out.push((i, j, dist));
        }
    }
    out.sort_by_key(|&(i, _, _)| i);
    out
}

/// Heatmap plane of a mask, `1.0` for set pixels.
pub fn mask_to_plane(mask: &BinaryMask) -> Plane {
    mask.map(|&b| if b { 1.0 } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(id: u32, cx: f32, cy: f32, w: f32, h: f32) -> CellAnnotation {
        CellAnnotation { id, cx, cy, w, h }
    }

    #[test]
    fn rectangle_annotation() {
        let mut m = LabelMask::new(10, 10);
        for y in 2..=6 {
            for x in 4..=6 {
                m.set(x, y, 1);
            }
        }
        let a = annotations_from_instance_mask(&m);
        assert_eq!(a, vec![cell(1, 5.0, 4.0, 3.0, 5.0)]);
    }

    #[test]
    fn annotations_sorted_by_id() {
        let mut m = LabelMask::new(6, 6);
        m.set(0, 0, 7);
        m.set(5, 5, 2);
        let ids: Vec<u32> = annotations_from_instance_mask(&m).iter().map(|a| a.id).collect();
        assert_eq!(ids, vec![2, 7]);
        assert!(annotations_from_instance_mask(&LabelMask::new(4, 4)).is_empty());
    }

    #[test]
    fn ellipse_degenerate_and_area() {
        let m = rasterize_ellipse(5.0, 5.0, 0.5, 0.5, 11, 11);
        assert_eq!(m.data().iter().filter(|&&b| b).count(), 1);
        assert!(*m.get(5, 5));
        let r = 7.0f32;
        let m = rasterize_ellipse(20.0, 20.0, r, r, 41, 41);
        let count = m.data().iter().filter(|&&b| b).count() as f32;
        let area = std::f32::consts::PI * r * r;
        assert!((count - area).abs() / area < 0.1);
    }

    #[test]
    fn ellipse_clipped_at_border() {
        let m = rasterize_ellipse(0.0, 0.0, 3.0, 2.0, 5, 5);
        assert!(*m.get(0, 0) && *m.get(3, 0) && *m.get(0, 2));
        assert!(!*m.get(3, 2));
        let off = rasterize_ellipse(-20.0, -20.0, 3.0, 3.0, 5, 5);
        assert!(off.data().iter().all(|b| !b));
    }

    #[test]
    fn single_cell_encoding() {
        let maps = encode(&[cell(1, 50.0, 50.0, 20.0, 30.0)], 100, 100, &EncodeParams::default()).unwrap();
        assert!((maps.height_map.get(50, 50) - 0.30).abs() < 1e-6);
        assert!((maps.width_map.get(50, 50) - 0.20).abs() < 1e-6);
        let (mut best, mut at) = (f32::MIN, (0, 0));
        for y in 0..100 {
            for x in 0..100 {
                if *maps.heatmap.get(x, y) > best {
                    best = *maps.heatmap.get(x, y);
                    at = (x, y);
                }
            }
        }
        assert_eq!(at, (50, 50));
        assert_eq!(best, 1.0);
        assert_eq!(*maps.height_map.get(0, 0), 0.0);
    }

    #[test]
    fn empty_encoding_is_zero() {
        let maps = encode(&[], 8, 9, &EncodeParams::default()).unwrap();
        assert_eq!(maps, DetectionMaps::zeros(8, 9));
        assert!(decode(&maps, 0.5).unwrap().is_empty());
    }

    #[test]
    fn out_of_bounds_rejected() {
        let err = encode(&[cell(3, 12.0, 2.0, 4.0, 4.0)], 10, 10, &EncodeParams::default());
        assert!(matches!(err, Err(Error::AnnotationOutOfBounds { id: 3, .. })));
    }

    #[test]
    fn later_id_wins_overlap() {
        let cells = [cell(2, 10.0, 10.0, 20.0, 20.0), cell(1, 11.0, 10.0, 10.0, 12.0)];
        let maps = encode(&cells, 30, 30, &EncodeParams::default()).unwrap();
        assert!((maps.width_map.get(10, 10) - 20.0 / 30.0).abs() < 1e-6);
    }

    #[test]
    fn roundtrip_single_cell() {
        let c = cell(1, 31.4, 22.7, 14.0, 9.0);
        let maps = encode(&[c], 64, 64, &EncodeParams::default()).unwrap();
        let dets = decode(&maps, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        let d = dets[0];
        assert!((d.cx - c.cx).hypot(d.cy - c.cy) <= 2.0);
        assert!((d.w - c.w).abs() / c.w <= 0.1 && (d.h - c.h).abs() / c.h <= 0.1);
        assert_eq!(d.score, 1.0);
    }

    #[test]
    fn decode_tie_breaks_to_first_row_then_column() {
        let mut maps = DetectionMaps::zeros(4, 4);
        for (x, y) in [(2, 1), (1, 2), (2, 2)] {
            maps.heatmap.set(x, y, 0.9);
        }
        let dets = decode(&maps, 0.5).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!((dets[0].cx, dets[0].cy), (2.0, 1.0));
        assert_eq!((dets[0].w, dets[0].h), (MIN_DECODED_EXTENT, MIN_DECODED_EXTENT));
    }

    #[test]
    fn components_are_eight_connected() {
        let mut m = BinaryMask::new(3, 3);
        m.set(0, 0, true);
        m.set(1, 1, true);
        m.set(2, 0, true);
        assert_eq!(connected_components(&m).len(), 1);
    }

    #[test]
    fn greedy_matching() {
        let a = [cell(1, 0.0, 0.0, 2.0, 2.0), cell(2, 10.0, 0.0, 2.0, 2.0)];
        let d = [
            Detection { cx: 9.0, cy: 0.0, w: 2.0, h: 2.0, score: 1.0 },
            Detection { cx: 1.0, cy: 0.0, w: 2.0, h: 2.0, score: 1.0 },
        ];
        let m = match_detections(&a, &d);
        assert_eq!(m, vec![(0, 1, 1.0), (1, 0, 1.0)]);
    }
}
