//! Per-region overlap (PRO) curve and its normalised area.

use crate::error::{param_err, Error, Result};
use crate::image::{Grid, Mask};

/// PRO curve as (global FPR, mean per-region overlap) points, starting at
/// (0, 0). Pixels count as predicted anomalous when `score > t`, with `t`
/// swept over the distinct score values from high to low. Regions are the
/// 8-connected components of every ground-truth mask, each weighted equally.
pub fn pro_curve(maps: &[Grid], gts: &[Mask]) -> Result<Vec<(f64, f64)>> {
    if maps.len() != gts.len() {
        return param_err(format!("{} maps but {} masks", maps.len(), gts.len()));
    }
    // region id per pixel: 0 = normal, r >= 1 = region r
    let mut scores = Vec::new();
    let mut region = Vec::new();
    let mut region_sizes = vec![0usize];
    for (map, gt) in maps.iter().zip(gts) {
        if map.height != gt.height || map.width != gt.width {
            return param_err(format!(
                "score map {}x{} does not match mask {}x{}",
                map.height, map.width, gt.height, gt.width
            ));
        }
        if map.values.iter().any(|v| v.is_nan()) {
            return param_err("score map contains NaN");
        }
        let (labels, n) = gt.components();
        let offset = region_sizes.len() as u32 - 1;
        region_sizes.extend(std::iter::repeat_n(0, n));
        for (&s, &l) in map.values.iter().zip(&labels) {
            let id = if l == 0 { 0 } else { l + offset };
            region_sizes[id as usize] += usize::from(id != 0);
            scores.push(s);
            region.push(id);
        }
    }
    let n_regions = region_sizes.len() - 1;
    if n_regions == 0 {
        return Err(Error::UndefinedMetric("AUPRO needs at least one anomalous pixel".into()));
    }
    let n_normal = region.iter().filter(|&&r| r == 0).count();
    if n_normal == 0 {
        return Err(Error::UndefinedMetric("AUPRO needs at least one normal pixel".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let inv_size: Vec<f64> = region_sizes.iter().map(|&n| 1.0 / n.max(1) as f64).collect();
    let mut overlap_sum = 0.0;
    let mut fp = 0usize;
    let mut curve = vec![(0.0, 0.0)];
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == s {
            j += 1;
        }
        if j == order.len() {
            // the lowest score is never strictly exceeded
            break;
        }
        for &p in &order[i..j] {
            let r = region[p] as usize;
            if r == 0 {
                fp += 1;
            } else {
                overlap_sum += inv_size[r];
            }
        }
        curve.push((fp as f64 / n_normal as f64, overlap_sum / n_regions as f64));
        i = j;
    }
    Ok(curve)
}

/// Trapezoidal area under `curve` over `[0, fpr_limit]`, divided by
/// `fpr_limit`. The segment crossing the limit is interpolated linearly; a
/// curve that stops short of the limit is held at its last value.
pub fn integrate_to_limit(curve: &[(f64, f64)], fpr_limit: f64) -> f64 {
    let mut area = 0.0;
    let mut last = (0.0, 0.0);
    for &(x, y) in curve {
        if x >= fpr_limit {
            if x > last.0 {
                let t = (fpr_limit - last.0) / (x - last.0);
                let y_lim = last.1 + t * (y - last.1);
                area += (fpr_limit - last.0) * (last.1 + y_lim) / 2.0;
            }
            return area / fpr_limit;
        }
        area += (x - last.0) * (last.1 + y) / 2.0;
        last = (x, y);
    }
    area += (fpr_limit - last.0) * last.1;
    area / fpr_limit
}

/// Normalised area under the PRO curve up to `fpr_limit`.
pub fn aupro(maps: &[Grid], gts: &[Mask], fpr_limit: f64) -> Result<f64> {
    if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
        return param_err(format!("fpr_limit {fpr_limit} outside (0, 1]"));
    }
    let curve = pro_curve(maps, gts)?;
    Ok(integrate_to_limit(&curve, fpr_limit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_region_gt() -> Mask {
        Mask::from_fn(6, 6, |y, x| (y < 2 && x < 2) || ((3..5).contains(&y) && (3..5).contains(&x)))
    }

    #[test]
    fn perfect_prediction_is_one() {
        let gt = two_region_gt();
        let map = Grid::new(6, 6, gt.data.iter().map(|&v| v as f64).collect()).unwrap();
        assert_eq!(aupro(&[map], &[gt], 0.3).unwrap(), 1.0);
    }

    #[test]
    fn constant_prediction_is_zero() {
        let gt = two_region_gt();
        assert_eq!(aupro(&[Grid::filled(6, 6, 0.0)], &[gt], 0.3).unwrap(), 0.0);
    }

    #[test]
    fn regions_are_weighted_equally() {
        // one region fully found at FPR 0, the other never
        let gt = Mask::from_fn(4, 8, |y, x| (y == 0 && x == 0) || (y >= 2 && x >= 4));
        let map = Grid::new(4, 8, (0..32).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect()).unwrap();
        let v = aupro(&[map], &[gt], 0.3).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_regions_is_undefined() {
        let r = aupro(&[Grid::filled(3, 3, 0.0)], &[Mask::zeros(3, 3)], 0.3);
        assert!(matches!(r, Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn integration_interpolates_at_limit() {
        let v = integrate_to_limit(&[(0.0, 0.0), (0.6, 0.6)], 0.3);
        assert!((v - 0.15).abs() < 1e-15);
    }
}
