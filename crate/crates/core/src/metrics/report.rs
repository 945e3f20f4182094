//! Per-class evaluation and the dataset-level summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{aupro, auroc, average_precision, f1_max};
use crate::error::{param_err, Result};
use crate::image::{Grid, Mask};

/// Canonical metric keys, in table column order.
pub const METRIC_NAMES: [&str; 7] = [
    "image_auroc",
    "image_ap",
    "image_f1max",
    "pixel_auroc",
    "pixel_ap",
    "pixel_f1max",
    "pixel_aupro",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub auroc: f64,
    pub ap: f64,
    pub f1max: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PixelMetrics {
    pub auroc: f64,
    pub ap: f64,
    pub f1max: f64,
    pub aupro: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub image: ImageMetrics,
    pub pixel: PixelMetrics,
    pub mad: f64,
}

impl ClassMetrics {
    pub fn values(&self) -> [f64; 7] {
        [
            self.image.auroc,
            self.image.ap,
            self.image.f1max,
            self.pixel.auroc,
            self.pixel.ap,
            self.pixel.f1max,
            self.pixel.aupro,
        ]
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        METRIC_NAMES
            .iter()
            .zip(self.values())
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    fn from_values(v: [f64; 7]) -> Self {
        let mut m = Self {
            image: ImageMetrics {
                auroc: v[0],
                ap: v[1],
                f1max: v[2],
            },
            pixel: PixelMetrics {
                auroc: v[3],
                ap: v[4],
                f1max: v[5],
                aupro: v[6],
            },
            mad: 0.0,
        };
        m.mad = v.iter().sum::<f64>() / 7.0;
        m
    }
}

/// Arithmetic mean of the seven metrics named in [`METRIC_NAMES`].
pub fn mad_summary(fields: &BTreeMap<String, f64>) -> Result<f64> {
    let mut sum = 0.0;
    for name in METRIC_NAMES {
        match fields.get(name) {
            Some(v) => sum += v,
            None => return param_err(format!("metric `{name}` missing")),
        }
    }
    Ok(sum / METRIC_NAMES.len() as f64)
}

/// Everything needed to score one class: one entry per test image.
#[derive(Clone, Debug, Default)]
pub struct ClassPredictions {
    pub image_scores: Vec<f64>,
    pub image_labels: Vec<bool>,
    pub maps: Vec<Grid>,
    pub masks: Vec<Mask>,
}

/// Image metrics pool the class's test images, pixel metrics pool every
/// pixel of those images.
pub fn evaluate_class(pred: &ClassPredictions, fpr_limit: f64) -> Result<ClassMetrics> {
    let (s, l) = (&pred.image_scores, &pred.image_labels);
    let mut pixel_scores = Vec::new();
    let mut pixel_labels = Vec::new();
    for (map, mask) in pred.maps.iter().zip(&pred.masks) {
        if map.height != mask.height || map.width != mask.width {
            return param_err("score map and mask shapes differ");
        }
        pixel_scores.extend_from_slice(&map.values);
        pixel_labels.extend(mask.data.iter().map(|&v| v != 0));
    }
    Ok(ClassMetrics::from_values([
        auroc(s, l)?,
        average_precision(s, l)?,
        f1_max(s, l)?,
        auroc(&pixel_scores, &pixel_labels)?,
        average_precision(&pixel_scores, &pixel_labels)?,
        f1_max(&pixel_scores, &pixel_labels)?,
        aupro(&pred.maps, &pred.masks, fpr_limit)?,
    ]))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub image: ImageMetrics,
    pub pixel: PixelMetrics,
    pub mad: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

impl MetricsReport {
    /// Dataset figures are the unweighted mean over classes.
    pub fn from_classes(per_class: BTreeMap<String, ClassMetrics>) -> Result<Self> {
        if per_class.is_empty() {
            return param_err("no classes to summarise");
        }
        let n = per_class.len() as f64;
        let mut acc = [0.0; 7];
        for m in per_class.values() {
            for (a, v) in acc.iter_mut().zip(m.values()) {
                *a += v;
            }
        }
        let mean = ClassMetrics::from_values(acc.map(|v| v / n));
        Ok(Self {
            image: mean.image,
            pixel: mean.pixel,
            mad: mean.mad,
            per_class,
        })
    }

    pub fn mean(&self) -> ClassMetrics {
        ClassMetrics {
            image: self.image,
            pixel: self.pixel,
            mad: self.mad,
        }
    }

    /// Aligned text table in percent, one row per class plus the mean.
    pub fn to_table(&self) -> String {
        let name_w = self
            .per_class
            .keys()
            .map(String::len)
            .chain(["Class".len(), "Mean".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$} | {:>21} | {:>29} | {:>6}",
            "", "Image-level", "Pixel-level", ""
        );
        let _ = writeln!(
            out,
            "{:<name_w$} | {:>6} {:>6} {:>7} | {:>6} {:>6} {:>7} {:>7} | {:>6}",
            "Class", "AUROC", "AP", "F1-max", "AUROC", "AP", "F1-max", "AUPRO", "mAD"
        );
        let rule = "-".repeat(name_w + 72);
        let _ = writeln!(out, "{rule}");
        let row = |out: &mut String, name: &str, m: &ClassMetrics| {
            let v = m.values().map(|x| x * 100.0);
            let _ = writeln!(
                out,
                "{:<name_w$} | {:>6.1} {:>6.1} {:>7.1} | {:>6.1} {:>6.1} {:>7.1} {:>7.1} | {:>6.1}",
                name,
                v[0],
                v[1],
                v[2],
                v[3],
                v[4],
                v[5],
                v[6],
                m.mad * 100.0
            );
        };
        for (name, m) in &self.per_class {
            row(&mut out, name, m);
        }
        let _ = writeln!(out, "{rule}");
        row(&mut out, "Mean", &self.mean());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fields(v: [f64; 7]) -> BTreeMap<String, f64> {
        METRIC_NAMES.iter().zip(v).map(|(k, v)| (k.to_string(), v)).collect()
    }

    #[test]
    fn mad_examples() {
        assert_eq!(mad_summary(&fields([1.0; 7])).unwrap(), 1.0);
        let six_zeros = fields([0.0, 0.0, 0.0, 0.7, 0.0, 0.0, 0.0]);
        assert!((mad_summary(&six_zeros).unwrap() - 0.1).abs() < 1e-15);
        let mut missing = fields([1.0; 7]);
        missing.remove("pixel_aupro");
        assert!(mad_summary(&missing).is_err());
    }

    #[test]
    fn report_averages_classes() {
        let a = ClassMetrics::from_values([1.0; 7]);
        let b = ClassMetrics::from_values([0.5; 7]);
        let r = MetricsReport::from_classes(
            [("a".to_string(), a), ("b".to_string(), b)].into_iter().collect(),
        )
        .unwrap();
        assert_eq!(r.image.auroc, 0.75);
        assert_eq!(r.mad, 0.75);
        let table = r.to_table();
        assert!(table.contains("Mean"));
        assert!(table.contains("75.0"));
    }
}
