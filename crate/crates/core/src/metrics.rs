//! Binary classification metrics over a confusion matrix.
//!
//! Ratios with a zero denominator are reported as `None` and serialize as
//! `null`; they are never NaN.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Label;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
}

/// Counts with `Affected` as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn record(&mut self, actual: Label, predicted: Label) {
        match (actual, predicted) {
            (Label::Affected, Label::Affected) => self.tp += 1,
            (Label::Healthy, Label::Healthy) => self.tn += 1,
            (Label::Healthy, Label::Affected) => self.fp += 1,
            (Label::Affected, Label::Healthy) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Fraction correct, `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

impl FromIterator<(Label, Label)> for ConfusionMatrix {
    fn from_iter<I: IntoIterator<Item = (Label, Label)>>(iter: I) -> Self {
        let mut cm = ConfusionMatrix::default();
        for (actual, predicted) in iter {
            cm.record(actual, predicted);
        }
        cm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub specificity: Option<f64>,
}

impl MetricsReport {
    /// Copy with every defined value rounded to six decimal places.
    pub fn rounded(&self) -> MetricsReport {
        let r = |v: Option<f64>| v.map(|x| (x * 1e6).round() / 1e6);
        MetricsReport {
            accuracy: r(self.accuracy),
            precision: r(self.precision),
            recall: r(self.recall),
            f1: r(self.f1),
            specificity: r(self.specificity),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    // Harmonic mean; defined whenever both inputs are and their sum is positive.
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(MetricsReport {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        f1,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
    })
}
