//! Confusion matrices and the segmentation metrics derived from them.
//!
//! Precision, recall, F1 and IoU are macro averages over the included
//! classes. A class is included when it appears in the ground truth or the
//! prediction (and, unless `include_background`, is not class 0). Per-class
//! ratios with a zero denominator count as 0.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::hypercube::LabelMask;

/// Column header of the per-experiment metrics CSV.
pub const METRICS_CSV_HEADER: &str = "experiment,bands,backbone,decoder,precision,recall,f1,accuracy,miou";

/// `counts[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub miou: f64,
    /// `None` for classes excluded from the averages.
    pub per_class_iou: Vec<Option<f64>>,
    pub per_class: Vec<Option<ClassMetrics>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        ConfusionMatrix {
            counts: vec![0; c * c],
            class_names,
        }
    }

    pub fn from_counts(class_names: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        let c = class_names.len();
        if counts.len() != c * c {
            return Err(Error::Shape(format!("{c} classes need {} counts, got {}", c * c, counts.len())));
        }
        Ok(ConfusionMatrix { counts, class_names })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes() + pred]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one pixel pair per position.
    pub fn accumulate_labels(&mut self, predicted: &[u8], truth: &[u8]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::Shape(format!(
                "prediction has {} pixels, truth has {}",
                predicted.len(),
                truth.len()
            )));
        }
        let c = self.num_classes();
        if let Some(&bad) = predicted.iter().chain(truth).find(|&&l| l as usize >= c) {
            return Err(Error::Validation(format!("class index {bad} out of range for {c} classes")));
        }
        for (&p, &t) in predicted.iter().zip(truth) {
            self.counts[t as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn accumulate(&mut self, predicted: &LabelMask, truth: &LabelMask) -> Result<()> {
        if predicted.height() != truth.height() || predicted.width() != truth.width() {
            return Err(Error::Shape(format!(
                "prediction is {}x{}, truth is {}x{}",
                predicted.height(),
                predicted.width(),
                truth.height(),
                truth.width()
            )));
        }
        self.accumulate_labels(predicted.labels(), truth.labels())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.class_names.len() != self.class_names.len() {
            return Err(Error::Shape("cannot merge confusion matrices of different sizes".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    fn row_sum(&self, c: usize) -> u64 {
        (0..self.num_classes()).map(|p| self.get(c, p)).sum()
    }

    fn col_sum(&self, c: usize) -> u64 {
        (0..self.num_classes()).map(|t| self.get(t, c)).sum()
    }

    /// Fraction of pixels whose truth lies in `classes` that were predicted
    /// correctly.
    pub fn subset_accuracy(&self, classes: &[usize]) -> f64 {
        let correct: u64 = classes.iter().map(|&c| self.get(c, c)).sum();
        let total: u64 = classes.iter().map(|&c| self.row_sum(c)).sum();
        ratio(correct, total)
    }

    pub fn compute(&self, include_background: bool) -> Result<MetricReport> {
        if self.total() == 0 {
            return Err(Error::Validation("confusion matrix is empty".into()));
        }
        let c = self.num_classes();
        let first = if include_background { 0 } else { 1 };
        let mut per_class = vec![None; c];
        for (k, slot) in per_class.iter_mut().enumerate().skip(first) {
            let tp = self.get(k, k);
            let in_truth = self.row_sum(k);
            let in_pred = self.col_sum(k);
            if in_truth == 0 && in_pred == 0 {
                continue;
            }
            let fp = in_pred - tp;
            let fn_ = in_truth - tp;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            *slot = Some(ClassMetrics {
                precision,
                recall,
                f1,
                iou: ratio(tp, tp + fp + fn_),
            });
        }
        let included: Vec<&ClassMetrics> = per_class.iter().flatten().collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if included.is_empty() {
                0.0
            } else {
                included.iter().map(|m| f(m)).sum::<f64>() / included.len() as f64
            }
        };
        let counted: Vec<usize> = (first..c).collect();
        let accuracy = if include_background {
            ratio((0..c).map(|k| self.get(k, k)).sum(), self.total())
        } else {
            self.subset_accuracy(&counted)
        };
        Ok(MetricReport {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
            accuracy,
            miou: mean(|m| m.iou),
            per_class_iou: per_class.iter().map(|m| m.as_ref().map(|m| m.iou)).collect(),
            per_class,
        })
    }

    /// Grid CSV: header `truth\pred,<names>`, one row per ground-truth class.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("truth\\pred");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (t, name) in self.class_names.iter().enumerate() {
            out.push_str(name);
            for p in 0..self.num_classes() {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }
}

/// One metrics CSV row in [`METRICS_CSV_HEADER`] order.
pub fn metrics_csv_row(experiment: &str, bands: usize, backbone: &str, decoder: &str, report: &MetricReport) -> String {
    format!(
        "{experiment},{bands},{backbone},{decoder},{:.6},{:.6},{:.6},{:.6},{:.6}",
        report.precision, report.recall, report.f1, report.accuracy, report.miou
    )
}
