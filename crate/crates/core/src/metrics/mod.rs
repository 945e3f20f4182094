//! Threshold-sweep detection and localisation metrics.
//!
//! All ranking metrics depend only on the order of the scores, so any
//! strictly monotone transform of the scores leaves them unchanged.

mod pro;
mod report;

use crate::error::{param_err, Error, Result};

pub use pro::{aupro, integrate_to_limit, pro_curve};
pub use report::{
    evaluate_class, mad_summary, ClassMetrics, ClassPredictions, ImageMetrics, MetricsReport,
    PixelMetrics, METRIC_NAMES,
};

/// Cumulative (true positive, false positive) counts after admitting each
/// group of tied scores, highest score first. A sample is predicted
/// positive at threshold `t` when `score >= t`.
pub(crate) fn sweep(scores: &[f64], labels: &[bool]) -> Result<(Vec<(usize, usize)>, usize, usize)> {
    if scores.len() != labels.len() {
        return param_err(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return param_err("scores contain NaN");
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((tp, fp));
    }
    Ok((points, positives, negatives))
}

/// Area under the ROC curve; ties earn half credit, so this equals
/// `P(s+ > s-) + P(s+ = s-) / 2` over all positive/negative pairs.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (points, pos, neg) = sweep(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both positive and negative samples".into(),
        ));
    }
    // trapezoids in count space, scaled once at the end
    let mut area = 0.0;
    let (mut ptp, mut pfp) = (0usize, 0usize);
    for &(tp, fp) in &points {
        area += (fp - pfp) as f64 * (tp + ptp) as f64;
        ptp = tp;
        pfp = fp;
    }
    Ok(area / (2.0 * pos as f64 * neg as f64))
}

/// Area under the precision/recall step curve: the sum over thresholds of
/// the recall increment times the precision at that threshold.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (points, pos, _) = sweep(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "average precision needs at least one positive".into(),
        ));
    }
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for &(tp, fp) in &points {
        if tp > prev_tp {
            ap += (tp - prev_tp) as f64 * tp as f64 / (tp + fp) as f64;
            prev_tp = tp;
        }
    }
    Ok(ap / pos as f64)
}

/// Maximum F1 over the thresholds induced by distinct score values.
pub fn f1_max(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (points, pos, _) = sweep(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("F1-max needs at least one positive".into()));
    }
    Ok(points
        .iter()
        .map(|&(tp, fp)| 2.0 * tp as f64 / (tp + fp + pos) as f64)
        .fold(0.0, f64::max))
}

/// ROC operating points `(fpr, tpr)`, starting at `(0, 0)`.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (points, pos, neg) = sweep(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC needs both positive and negative samples".into(),
        ));
    }
    let mut out = vec![(0.0, 0.0)];
    out.extend(points.iter().map(|&(tp, fp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)));
    Ok(out)
}

/// Precision/recall points `(recall, precision)`, one per threshold.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (points, pos, _) = sweep(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedMetric("PR curve needs at least one positive".into()));
    }
    Ok(points
        .iter()
        .map(|&(tp, fp)| (tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn curves_end_at_full_recall() {
        let s = [0.9, 0.8, 0.8, 0.1];
        let l = b(&[1, 0, 1, 0]);
        let roc = roc_curve(&s, &l).unwrap();
        assert_eq!(roc, vec![(0.0, 0.0), (0.0, 0.5), (0.5, 1.0), (1.0, 1.0)]);
        let pr = pr_curve(&s, &l).unwrap();
        assert_eq!(pr[0], (0.5, 1.0));
        assert_eq!(*pr.last().unwrap(), (1.0, 0.5));
        assert!(roc_curve(&s, &b(&[1, 1, 1, 1])).is_err());
    }

    #[test]
    fn auroc_examples() {
        let s = [0.1, 0.4, 0.35, 0.8];
        assert_eq!(auroc(&s, &b(&[0, 0, 1, 1])).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &b(&[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &b(&[1, 1, 0, 0])).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5, 0.5], &b(&[0, 1])).unwrap(), 0.5);
        assert!(matches!(
            auroc(&[0.1, 0.2], &b(&[1, 1])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ap_examples() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &b(&[1, 0, 1])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &b(&[1, 1, 0])).unwrap(), 1.0);
        for n in 1..8usize {
            let scores: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
            let mut labels = vec![false; n];
            labels[n - 1] = true;
            let ap = average_precision(&scores, &labels).unwrap();
            assert!((ap - 1.0 / n as f64).abs() < 1e-15);
        }
        assert!(average_precision(&[0.3], &b(&[0])).is_err());
    }

    #[test]
    fn f1_examples() {
        let f = f1_max(&[0.9, 0.8, 0.7], &b(&[1, 0, 1])).unwrap();
        assert!((f - 0.8).abs() < 1e-15);
        assert_eq!(f1_max(&[0.9, 0.1], &b(&[1, 0])).unwrap(), 1.0);
        assert_eq!(f1_max(&[0.2, 0.9, 0.4], &b(&[1, 1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_and_nan() {
        assert!(auroc(&[0.1], &b(&[0, 1])).is_err());
        assert!(f1_max(&[f64::NAN, 0.1], &b(&[0, 1])).is_err());
    }
}
