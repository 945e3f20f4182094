//! Final anomaly map and image-level score.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::image::Grid;
use crate::resize::resize_grid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Weight of the encoder/decoder discrepancy map.
    pub lambda1: f64,
    /// Weight of the segmentation prediction.
    pub lambda2: f64,
    /// Top-count for the image score; `None` means 0.1% of the pixels.
    pub top_t: Option<usize>,
    pub fpr_limit: f64,
    /// When false the map is the upsampled discrepancy alone.
    pub use_segnet: bool,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.7,
            lambda2: 0.3,
            top_t: None,
            fpr_limit: 0.3,
            use_segnet: true,
        }
    }
}

impl ScoringConfig {
    pub fn top_t_for(&self, pixels: usize) -> usize {
        self.top_t.unwrap_or_else(|| default_top_t(pixels)).clamp(1, pixels.max(1))
    }
}

/// Pixel-level map plus the image-level score derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyMap {
    pub map: Grid,
    pub image_score: f64,
}

/// `max(1, ceil(0.001 * pixels))`.
pub fn default_top_t(pixels: usize) -> usize {
    (pixels as f64 * 1e-3).ceil().max(1.0) as usize
}

/// `resize(lambda1 * up(d_map) + lambda2 * seg)` at `size x size`, where
/// `up` is bilinear. `seg` may be given at any resolution and is brought to
/// `size` first.
pub fn anomaly_map(
    d_map: &Grid,
    seg: Option<&Grid>,
    lambda1: f64,
    lambda2: f64,
    size: usize,
) -> Result<Grid> {
    if lambda1 < 0.0 || lambda2 < 0.0 {
        return param_err("lambda1 and lambda2 must be non-negative");
    }
    let d = resize_grid(d_map, size, size);
    let values = match seg {
        Some(seg) => {
            let s = resize_grid(seg, size, size);
            d.values
                .iter()
                .zip(&s.values)
                .map(|(a, b)| lambda1 * a + lambda2 * b)
                .collect()
        }
        None => d.values.iter().map(|a| lambda1 * a).collect(),
    };
    Ok(Grid {
        height: size,
        width: size,
        values,
    })
}

/// Mean of the `top_t` largest values.
pub fn image_score(map: &[f64], top_t: usize) -> Result<f64> {
    if top_t == 0 || top_t > map.len() {
        return param_err(format!("top count {top_t} outside 1..={}", map.len()));
    }
    if top_t == map.len() {
        return Ok(map.iter().sum::<f64>() / top_t as f64);
    }
    let mut v = map.to_vec();
    v.select_nth_unstable_by(top_t - 1, |a, b| b.total_cmp(a));
    let mut top = v[..top_t].to_vec();
    top.sort_by(|a, b| b.total_cmp(a));
    Ok(top.iter().sum::<f64>() / top_t as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_score_examples() {
        assert_eq!(image_score(&[5.0, 3.0, 1.0, 0.0], 2).unwrap(), 4.0);
        assert_eq!(image_score(&[5.0, 3.0, 1.0, 0.0], 1).unwrap(), 5.0);
        assert_eq!(image_score(&[5.0, 3.0, 1.0, 0.0], 4).unwrap(), 2.25);
        assert!(image_score(&[1.0], 0).is_err());
        assert!(image_score(&[1.0], 2).is_err());
    }

    #[test]
    fn constant_inputs_give_constant_map() {
        let d = Grid::filled(4, 4, 2.0);
        let s = Grid::filled(16, 16, 0.5);
        let m = anomaly_map(&d, Some(&s), 0.7, 0.3, 16).unwrap();
        assert!(m.values.iter().all(|&v| (v - (0.7 * 2.0 + 0.3 * 0.5)).abs() < 1e-15));
    }

    #[test]
    fn without_segmentation_term() {
        let d = Grid::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let s = Grid::filled(4, 4, 9.0);
        let a = anomaly_map(&d, Some(&s), 0.7, 0.0, 4).unwrap();
        let up = resize_grid(&d, 4, 4);
        for (x, y) in a.values.iter().zip(&up.values) {
            assert_eq!(*x, 0.7 * y);
        }
    }

    #[test]
    fn default_top_count() {
        assert_eq!(default_top_t(1), 1);
        assert_eq!(default_top_t(64 * 64), 5);
        assert_eq!(default_top_t(392 * 392), 154);
    }
}
