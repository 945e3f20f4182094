//! Foreground estimation for placing synthetic anomalies.

use serde::{Deserialize, Serialize};

use crate::image::{Image, Mask};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForegroundMethod {
    /// Otsu split on intensity, polarity chosen so the border is background,
    /// largest 8-connected component kept.
    #[default]
    Threshold,
    /// Whole frame (texture categories).
    Full,
}

/// Otsu threshold over the distinct values of `gray`: returns `t` such that
/// `{v > t}` vs `{v <= t}` maximises between-class variance. `None` when
/// fewer than two distinct values exist.
pub fn otsu_threshold(gray: &[f32]) -> Option<f32> {
    let mut sorted: Vec<f32> = gray.to_vec();
    sorted.sort_by(f32::total_cmp);
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().map(|&v| v as f64).sum();
    let mut best: Option<(f64, f32)> = None;
    let mut below_count = 0.0;
    let mut below_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i];
        while i < sorted.len() && sorted[i] == v {
            below_count += 1.0;
            below_sum += sorted[i] as f64;
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let above_count = n - below_count;
        let mu0 = below_sum / below_count;
        let mu1 = (total - below_sum) / above_count;
        let score = below_count * above_count * (mu0 - mu1).powi(2);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, v));
        }
    }
    best.map(|(_, t)| t)
}

pub fn foreground_mask(image: &Image, method: ForegroundMethod) -> Mask {
    let (h, w) = (image.height, image.width);
    match method {
        ForegroundMethod::Full => Mask::ones(h, w),
        ForegroundMethod::Threshold => {
            let gray = image.to_gray();
            let Some(t) = otsu_threshold(&gray) else {
                return Mask::ones(h, w);
            };
            let bright = Mask::from_fn(h, w, |y, x| gray[y * w + x] > t);
            let border: Vec<bool> = (0..h)
                .flat_map(|y| (0..w).map(move |x| (y, x)))
                .filter(|&(y, x)| y == 0 || x == 0 || y + 1 == h || x + 1 == w)
                .map(|(y, x)| bright.get(y, x))
                .collect();
            let bright_border = border.iter().filter(|&&b| b).count();
            let fg = if 2 * bright_border > border.len() {
                Mask::from_fn(h, w, |y, x| !bright.get(y, x))
            } else {
                bright
            };
            let fg = fg.largest_component();
            if fg.is_empty() {
                Mask::ones(h, w)
            } else {
                fg
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_image() -> Image {
        Image::from_fn(32, 32, 3, |y, x, _| {
            if (12..20).contains(&y) && (10..18).contains(&x) {
                0.9
            } else {
                0.0
            }
        })
    }

    /// Exhaustive oracle: every candidate threshold scored directly.
    fn brute_force_split(gray: &[f32]) -> f32 {
        let mut candidates: Vec<f32> = gray.to_vec();
        candidates.sort_by(f32::total_cmp);
        candidates.dedup();
        let mut best = (f64::NEG_INFINITY, 0.0f32);
        for &t in &candidates[..candidates.len() - 1] {
            let (lo, hi): (Vec<f64>, Vec<f64>) = (
                gray.iter().filter(|&&v| v <= t).map(|&v| v as f64).collect(),
                gray.iter().filter(|&&v| v > t).map(|&v| v as f64).collect(),
            );
            let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
            let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
            let s = lo.len() as f64 * hi.len() as f64 * (m0 - m1).powi(2);
            if s > best.0 {
                best = (s, t);
            }
        }
        best.1
    }

    #[test]
    fn constant_image_is_all_foreground() {
        let img = Image::filled(16, 16, 3, 0.4);
        assert_eq!(foreground_mask(&img, ForegroundMethod::Full), Mask::ones(16, 16));
        assert_eq!(foreground_mask(&img, ForegroundMethod::Threshold), Mask::ones(16, 16));
    }

    #[test]
    fn bright_square_on_black() {
        let img = square_image();
        let gray = img.to_gray();
        let t = brute_force_split(&gray);
        let oracle = Mask::from_fn(32, 32, |y, x| gray[y * 32 + x] > t);
        let fg = foreground_mask(&img, ForegroundMethod::Threshold);
        assert_eq!(fg, oracle);
        assert_eq!(fg.count(), 64);
        assert!(fg.get(12, 10) && fg.get(19, 17) && !fg.get(11, 10));
    }

    #[test]
    fn dark_object_on_bright_background() {
        let img = Image::from_fn(20, 20, 1, |y, x, _| {
            if (5..12).contains(&y) && (6..10).contains(&x) {
                0.1
            } else {
                0.8
            }
        });
        let fg = foreground_mask(&img, ForegroundMethod::Threshold);
        assert_eq!(fg.count(), 28);
        assert!(fg.get(5, 6));
    }

    #[test]
    fn otsu_matches_brute_force_on_noisy_values() {
        let gray: Vec<f32> = (0..200).map(|i| ((i * 37 % 101) as f32) / 100.0).collect();
        assert_eq!(otsu_threshold(&gray).unwrap(), brute_force_split(&gray));
    }
}
