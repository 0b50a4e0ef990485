//! PNG/TIFF reading and writing for grayscale images, RGB images and 16-bit masks.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::grid::{LabelMask, Plane};

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes `[0, 1]` intensities as an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, img: &Plane) -> Result<()> {
    let (h, w) = img.dims();
    let buf = GrayImage::from_raw(w as u32, h as u32, img.data().iter().map(|&v| to_u8(v)).collect())
        .expect("buffer matches dimensions");
    buf.save(path)?;
    Ok(())
}

/// Writes `[0, 1]` colors as an 8-bit RGB PNG.
pub fn write_rgb(path: &Path, height: usize, width: usize, pixels: &[[f32; 3]]) -> Result<()> {
    let raw = pixels.iter().flat_map(|p| p.map(to_u8)).collect();
    let buf = RgbImage::from_raw(width as u32, height as u32, raw).expect("buffer matches dimensions");
    buf.save(path)?;
    Ok(())
}

/// Writes an instance mask as 16-bit grayscale.
pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    let (h, w) = mask.dims();
    let mut raw = Vec::with_capacity(h * w);
    for &v in mask.data() {
        let v = u16::try_from(v).map_err(|_| Error::Dataset(format!("label {v} does not fit 16 bits")))?;
        raw.push(v);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer matches dimensions");
    buf.save(path)?;
    Ok(())
}

/// Reads any supported image as grayscale in `[0, 1]` (relative to its bit depth).
pub fn read_gray(path: &Path) -> Result<Plane> {
    let img = image::open(path)?;
    let luma = img.to_luma32f();
    let (w, h) = luma.dimensions();
    Plane::from_vec(h as usize, w as usize, luma.into_raw())
}

/// Reads an instance mask, keeping raw label values.
pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u32> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Dataset(format!(
                "{}: expected a single-channel mask, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    LabelMask::from_vec(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_roundtrip_keeps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let m = LabelMask::from_fn(5, 7, |x, y| (x * 1000 + y) as u32);
        for name in ["m.png", "m.tif"] {
            let p = dir.path().join(name);
            write_mask(&p, &m).unwrap();
            assert_eq!(read_mask(&p).unwrap(), m);
        }
    }

    #[test]
    fn gray_roundtrip_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        let img = Plane::from_fn(4, 3, |x, y| (x + y) as f32 / 5.0);
        write_gray(&p, &img).unwrap();
        let back = read_gray(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
