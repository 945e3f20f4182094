//! Image and mask files to and from the core raster types.

use std::path::Path;

use crr_core::{Image, Mask};

use crate::error::{file_err, Result};

pub const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "bmp", "tif", "tiff"];

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

/// RGB with values in `[0, 1]`; gray and alpha inputs are converted.
pub fn load_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| file_err(path, e))?.to_rgb32f();
    let (w, h) = img.dimensions();
    Ok(Image::from_vec(h as usize, w as usize, 3, img.into_raw())?)
}

/// Any non-zero pixel is anomalous.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| file_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| u8::from(v != 0)).collect();
    Ok(Mask::from_vec(h as usize, w as usize, data)?)
}

pub fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| file_err(path, e))?;
    Ok((h as usize, w as usize))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| file_err(p, e))?;
    }
    Ok(())
}

/// Writes an RGB (or gray, replicated) image as 8-bit PNG.
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let mut buf = Vec::with_capacity(img.height * img.width * 3);
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..3 {
                let v = img.get(y, x, c.min(img.channels - 1)).clamp(0.0, 1.0);
                buf.push((v * 255.0).round() as u8);
            }
        }
    }
    image::RgbImage::from_raw(img.width as u32, img.height as u32, buf)
        .expect("buffer sized from the image")
        .save(path)
        .map_err(|e| file_err(path, e))
}

/// Writes a mask as an 8-bit PNG with values 0 and 255.
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let buf = mask.data.iter().map(|&v| v * 255).collect();
    image::GrayImage::from_raw(mask.width as u32, mask.height as u32, buf)
        .expect("buffer sized from the mask")
        .save(path)
        .map_err(|e| file_err(path, e))
}
