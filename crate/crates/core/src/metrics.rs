//! Binary classification scores for monthly direction calls.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn from_labels(truth: &[u8], pred: &[u8]) -> Result<Self> {
        if truth.len() != pred.len() {
            bail!(Validation, "{} labels but {} predictions", truth.len(), pred.len());
        }
        let mut c = Self::default();
        for (&t, &p) in truth.iter().zip(pred) {
            match (t, p) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (0, 1) => c.fp += 1,
                (1, 0) => c.fn_ += 1,
                _ => bail!(Validation, "labels must be 0 or 1, got ({t}, {p})"),
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub acc: f64,
    pub macro_f1: f64,
    pub mcc: f64,
    pub counts: Confusion,
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Accuracy, macro-averaged F1 over both classes, and Matthews correlation.
///
/// A class absent from both truth and predictions contributes an F1 of 0.
/// MCC is 0 whenever any marginal is empty.
pub fn score(c: &Confusion) -> Result<MetricsRow> {
    let n = c.total();
    if n == 0 {
        bail!(Validation, "no predictions to score");
    }
    let acc = (c.tp + c.tn) as f64 / n as f64;
    let macro_f1 = 0.5 * (f1(c.tp, c.fp, c.fn_) + f1(c.tn, c.fn_, c.fp));
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if denom == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / libm::sqrt(denom)
    };
    Ok(MetricsRow {
        acc,
        macro_f1,
        mcc,
        counts: *c,
    })
}

pub fn compute_metrics(truth: &[u8], pred: &[u8]) -> Result<MetricsRow> {
    score(&Confusion::from_labels(truth, pred)?)
}
