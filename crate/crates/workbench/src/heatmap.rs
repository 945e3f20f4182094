//! Display panels and raw score sidecars.

use std::path::Path;

use crr_core::{Grid, Image};

use crate::error::{file_err, Error, Result};
use crate::imageio::save_image;

/// Black-red-yellow-white ramp; every channel is non-decreasing in `t`.
pub fn heat_color(t: f64) -> [f32; 3] {
    let t = t.clamp(0.0, 1.0) as f32;
    [
        (3.0 * t).clamp(0.0, 1.0),
        (3.0 * t - 1.0).clamp(0.0, 1.0),
        (3.0 * t - 2.0).clamp(0.0, 1.0),
    ]
}

pub const OVERLAY_ALPHA: f32 = 0.5;

/// Min-max scaled copy for display only; a constant map becomes all zero.
pub fn display_normalize(map: &Grid) -> Vec<f64> {
    let (lo, hi) = map.min_max();
    if hi > lo {
        map.values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; map.values.len()]
    }
}

/// `[input | heat | overlay]` side by side.
pub fn heatmap_panel(image: &Image, map: &Grid) -> Result<Image> {
    if (image.height, image.width) != (map.height, map.width) {
        return Err(Error::Config(format!(
            "score map {}x{} does not match image {}x{}",
            map.height, map.width, image.height, image.width
        )));
    }
    let t = display_normalize(map);
    let (h, w) = (image.height, image.width);
    Ok(Image::from_fn(h, 3 * w, 3, |y, x, c| {
        let (panel, px) = (x / w, x % w);
        let src = image.get(y, px, c.min(image.channels - 1));
        let heat = heat_color(t[y * w + px])[c];
        match panel {
            0 => src,
            1 => heat,
            _ => (1.0 - OVERLAY_ALPHA) * src + OVERLAY_ALPHA * heat,
        }
    }))
}

pub fn export_heatmap(image: &Image, map: &Grid, out: &Path) -> Result<()> {
    save_image(&heatmap_panel(image, map)?, out)
}

/// Raw little-endian f64 values, row-major.
pub fn write_scores(map: &Grid, path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| file_err(p, e))?;
    }
    let bytes: Vec<u8> = map.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| file_err(path, e))
}

pub fn read_scores(path: &Path, height: usize, width: usize) -> Result<Grid> {
    let bytes = std::fs::read(path).map_err(|e| file_err(path, e))?;
    if bytes.len() != height * width * 8 {
        return Err(file_err(path, format!("expected {} bytes for {height}x{width}", height * width * 8)));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Grid::new(height, width, values)?)
}
