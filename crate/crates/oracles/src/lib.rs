//! Slow, obviously-correct reference computations. Everything here works on
//! plain slices and shares no code with the crates under test.

/// `P(s+ > s-) + P(s+ = s-) / 2` by enumerating every positive/negative pair.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn distinct_desc(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(|a, b| b.partial_cmp(a).unwrap());
    t.dedup();
    t
}

/// (precision, recall) at every threshold `score >= t`, highest first.
fn pr_points(scores: &[f64], labels: &[bool]) -> Vec<(f64, f64)> {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    distinct_desc(scores)
        .into_iter()
        .map(|t| {
            let mut tp = 0.0;
            let mut predicted = 0.0;
            for (s, &l) in scores.iter().zip(labels) {
                if *s >= t {
                    predicted += 1.0;
                    if l {
                        tp += 1.0;
                    }
                }
            }
            (tp / predicted, tp / pos)
        })
        .collect()
}

pub fn average_precision_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for (p, r) in pr_points(scores, labels) {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    ap
}

pub fn f1_max_sweep(scores: &[f64], labels: &[bool]) -> f64 {
    pr_points(scores, labels)
        .into_iter()
        .map(|(p, r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
        .fold(0.0, f64::max)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// 8-connected regions of a binary mask via union-find; returns one pixel
/// index list per region.
pub fn regions(h: usize, w: usize, mask: &[u8]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..h * w).collect();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mask[i] == 0 {
                continue;
            }
            for (dy, dx) in [(0i64, 1i64), (1, -1), (1, 0), (1, 1)] {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if mask[j] != 0 {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..h * w {
        if mask[i] != 0 {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(i);
        }
    }
    groups.into_values().collect()
}

/// One image for [`aupro_sweep`]: (height, width, scores, binary mask).
pub type ProImage = (usize, usize, Vec<f64>, Vec<u8>);

/// Brute-force normalised AUPRO: for every distinct threshold `t` the
/// prediction `score > t` is rebuilt and scored from scratch; the curve is
/// integrated with trapezoids up to `limit`, interpolated at the limit and
/// held flat past its last point.
pub fn aupro_sweep(images: &[ProImage], limit: f64) -> f64 {
    let all: Vec<f64> = images.iter().flat_map(|im| im.2.iter().copied()).collect();
    let mut region_sets: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut normal_total = 0usize;
    for (k, (h, w, _, m)) in images.iter().enumerate() {
        for r in regions(*h, *w, m) {
            region_sets.push((k, r));
        }
        normal_total += m.iter().filter(|&&v| v == 0).count();
    }
    let mut curve = vec![(0.0f64, 0.0f64)];
    for t in distinct_desc(&all) {
        let mut fp = 0usize;
        for (_, _, s, m) in images {
            fp += s.iter().zip(m).filter(|(v, g)| **v > t && **g == 0).count();
        }
        let mut pro = 0.0;
        for (k, r) in &region_sets {
            let s = &images[*k].2;
            let hit = r.iter().filter(|&&i| s[i] > t).count();
            pro += hit as f64 / r.len() as f64;
        }
        pro /= region_sets.len() as f64;
        curve.push((fp as f64 / normal_total as f64, pro));
    }
    let mut area = 0.0;
    for pair in curve.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x0 >= limit {
            break;
        }
        if x1 <= limit {
            area += (x1 - x0) * (y0 + y1) / 2.0;
        } else {
            let y_lim = y0 + (y1 - y0) * (limit - x0) / (x1 - x0);
            area += (limit - x0) * (y0 + y_lim) / 2.0;
        }
    }
    let (x_last, y_last) = *curve.last().unwrap();
    if x_last < limit {
        area += (limit - x_last) * y_last;
    }
    area / limit
}

/// Bilinear resize, half-pixel centres, evaluated pixel by pixel.
pub fn bilinear(h: usize, w: usize, v: &[f64], out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        for ox in 0..out_w {
            let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).max(0.0);
            let sx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).max(0.0);
            let y0 = (sy.floor() as usize).min(h - 1);
            let x0 = (sx.floor() as usize).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fy = if y1 == y0 { 0.0 } else { sy - y0 as f64 };
            let fx = if x1 == x0 { 0.0 } else { sx - x0 as f64 };
            let a = v[y0 * w + x0];
            let b = v[y0 * w + x1];
            let c = v[y1 * w + x0];
            let d = v[y1 * w + x1];
            out.push(a * (1.0 - fy) * (1.0 - fx) + b * (1.0 - fy) * fx + c * fy * (1.0 - fx) + d * fy * fx);
        }
    }
    out
}

/// Cosine of two vectors with the product of norms floored at `eps`.
pub fn cosine(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb).max(eps)
}

/// Per-pixel focal term `-alpha (1 - p_t)^gamma ln p_t`.
pub fn focal_term(p: f64, positive: bool, alpha: f64, gamma: f64) -> f64 {
    let pt = if positive { p } else { 1.0 - p };
    -alpha * (1.0 - pt).powf(gamma) * pt.ln()
}

pub fn bce_term(p: f64, positive: bool) -> f64 {
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_checks() {
        assert_eq!(auroc_pairs(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]), 0.75);
        let ap = average_precision_sweep(&[0.9, 0.8, 0.7], &[true, false, true]);
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        assert!((f1_max_sweep(&[0.9, 0.8, 0.7], &[true, false, true]) - 0.8).abs() < 1e-12);
        assert_eq!(regions(3, 3, &[1, 0, 0, 0, 1, 0, 0, 0, 1]).len(), 1);
        assert_eq!(regions(3, 3, &[1, 0, 1, 0, 0, 0, 1, 0, 1]).len(), 4);
    }
}
