//! Cell Tracking Challenge directory layout:
//!
//! ```text
//! <root>/<seq>/t000.tif
//! <root>/<seq>_GT/SEG/man_seg000.tif
//! ```
//!
//! Segmentation ground truth usually exists for a subset of frames only.

use std::fs;
use std::path::{Path, PathBuf};

use super::io::{read_gray, read_mask};
use crate::error::{Error, Result};
use crate::grid::{LabelMask, Plane};

#[derive(Clone, Debug, PartialEq)]
pub struct CtcFrame {
    /// Frame number as written in the file name, e.g. `"007"`.
    pub frame: String,
    pub path: PathBuf,
    pub image: Plane,
    pub mask: Option<LabelMask>,
}

fn frame_digits<'a>(name: &'a str, prefix: &str) -> Option<&'a str> {
    let stem = name.strip_suffix(".tif").or_else(|| name.strip_suffix(".tiff"))?;
    let digits = stem.strip_prefix(prefix)?;
    (!digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())).then_some(digits)
}

/// Loads every frame of `sequence` with its segmentation mask if present.
pub fn load_ctc_sequence(root: &Path, sequence: &str) -> Result<Vec<CtcFrame>> {
    let img_dir = root.join(sequence);
    let seg_dir = root.join(format!("{sequence}_GT")).join("SEG");
    let listing = fs::read_dir(&img_dir).map_err(|e| Error::Dataset(format!("{}: {e}", img_dir.display())))?;
    let mut frames = Vec::new();
    for entry in listing {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let Some(digits) = frame_digits(&name, "t") else { continue };
        let seg = seg_dir.join(format!("man_seg{digits}.tif"));
        let mask = if seg.exists() { Some(read_mask(&seg)?) } else { None };
        frames.push(CtcFrame {
            frame: digits.to_string(),
            image: read_gray(&path)?,
            path,
            mask,
        });
    }
    frames.sort_by(|a, b| a.frame.len().cmp(&b.frame.len()).then_with(|| a.frame.cmp(&b.frame)));
    Ok(frames)
}

/// Image files (`png`, `tif`, `tiff`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::Dataset(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "tif" | "tiff")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::io::write_mask;
    use image::{ImageBuffer, Luma};

    #[test]
    fn loads_frames_and_masks() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("01");
        let seg = dir.path().join("01_GT/SEG");
        fs::create_dir_all(&seq).unwrap();
        fs::create_dir_all(&seg).unwrap();
        for t in ["000", "001"] {
            let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(6, 4, |x, _| Luma([x as u16 * 1000]));
            img.save(seq.join(format!("t{t}.tif"))).unwrap();
        }
        let mask = LabelMask::from_fn(4, 6, |x, _| if x > 2 { 3 } else { 0 });
        write_mask(&seg.join("man_seg001.tif"), &mask).unwrap();
        fs::write(seq.join("notes.txt"), "x").unwrap();

        let frames = load_ctc_sequence(dir.path(), "01").unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].frame, "000");
        assert!(frames[0].mask.is_none());
        assert_eq!(frames[1].mask.as_ref().unwrap(), &mask);
        assert_eq!(frames[1].image.dims(), (4, 6));
    }

    #[test]
    fn missing_sequence_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_ctc_sequence(dir.path(), "02").is_err());
    }
}
