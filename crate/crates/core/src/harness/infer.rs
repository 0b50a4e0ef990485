use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::codec::{decode, rasterize_ellipse, Detection};
use crate::data::io::{read_gray, write_rgb};
use crate::data::{model_input, resize_to_input};
use crate::error::{Error, Result};
use crate::grid::Plane;
use crate::model::Model;

pub const DETECTIONS_HEADER: &str = "image,cx,cy,w,h,score";
pub const DETECTIONS_FILE: &str = "detections.csv";
pub const OVERLAY_COLOR: [f32; 3] = [1.0, 0.0, 0.0];

/// Detects cells in a grayscale image of any size; coordinates are returned
/// in the image's own pixel frame.
pub fn detect(model: &Model, gray: &Plane, threshold: f32) -> Result<Vec<Detection>> {
    let size = model.config.input_size;
    let (h, w) = gray.dims();
    let (resized, _) = resize_to_input(gray, None, size);
    let outputs = model.predict(&model_input(&resized))?;
    let dets = decode(&outputs[0], threshold)?;
    let (sx, sy) = (w as f32 / size as f32, h as f32 / size as f32);
    Ok(dets
        .into_iter()
        .map(|d| Detection {
            cx: (d.cx + 0.5) * sx - 0.5,
            cy: (d.cy + 0.5) * sy - 0.5,
            w: d.w * sx,
            h: d.h * sy,
            score: d.score,
        })
        .collect())
}

/// CSV rows (no header) with two-decimal fixed formatting.
pub fn detection_rows(image: &str, dets: &[Detection]) -> String {
    let mut s = String::new();
    for d in dets {
        let _ = writeln!(s, "{image},{:.2},{:.2},{:.2},{:.2},{:.2}", d.cx, d.cy, d.w, d.h, d.score);
    }
    s
}

/// RGB copy of `gray` with each detection's bounding ellipse outlined.
pub fn draw_overlay(gray: &Plane, dets: &[Detection]) -> Vec<[f32; 3]> {
    let (h, w) = gray.dims();
    let mut rgb: Vec<[f32; 3]> = gray.data().iter().map(|&v| [v; 3]).collect();
    for d in dets {
        let inside = rasterize_ellipse(d.cx, d.cy, d.w / 2.0, d.h / 2.0, h, w);
        for y in 0..h {
            for x in 0..w {
                if !*inside.get(x, y) {
                    continue;
                }
                let edge = x == 0
                    || y == 0
                    || x + 1 == w
                    || y + 1 == h
                    || !*inside.get(x - 1, y)
                    || !*inside.get(x + 1, y)
                    || !*inside.get(x, y - 1)
                    || !*inside.get(x, y + 1);
                if edge {
                    rgb[y * w + x] = OVERLAY_COLOR;
                }
            }
        }
    }
    rgb
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InferOutcome {
    pub processed: usize,
    pub detections: usize,
    pub failed: Vec<PathBuf>,
}

/// Writes `detections.csv` and one `<stem>_overlay.png` per readable image.
/// Unreadable images are skipped with a warning; an error is returned only
/// if none could be processed.
pub fn infer(model: &Model, images: &[PathBuf], threshold: f32, out_dir: &Path) -> Result<InferOutcome> {
    fs::create_dir_all(out_dir)?;
    let mut csv = String::from(DETECTIONS_HEADER);
    csv.push('\n');
    let mut outcome = InferOutcome::default();
    for path in images {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("image").to_string();
        let gray = match read_gray(path) {
            Ok(g) => g,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                outcome.failed.push(path.clone());
                continue;
            }
        };
        let dets = detect(model, &gray, threshold)?;
        csv.push_str(&detection_rows(&name, &dets));
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let (h, w) = gray.dims();
        write_rgb(&out_dir.join(format!("{stem}_overlay.png")), h, w, &draw_overlay(&gray, &dets))?;
        outcome.processed += 1;
        outcome.detections += dets.len();
    }
    if outcome.processed == 0 {
        return Err(Error::Dataset(format!("none of the {} input images could be read", images.len())));
    }
    fs::write(out_dir.join(DETECTIONS_FILE), csv)?;
    Ok(outcome)
}
