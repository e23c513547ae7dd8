use serde::Serialize;

use super::ExperimentError;

/// `F_β = (1+β²)·P·R / (β²·P + R)`. Returns `(value, undefined)`; when
/// `P = R = 0` the value is 0 and `undefined` is set.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> (f64, bool) {
    let b2 = beta * beta;
    let denom = b2 * precision + recall;
    if denom == 0.0 {
        return (0.0, true);
    }
    ((1.0 + b2) * precision * recall / denom, false)
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    f_beta(precision, recall, 1.0).0
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a ratio had a zero denominator and was reported as 0.
    pub undefined: bool,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let (precision, u1) = ratio(tp, tp + fp);
        let (recall, u2) = ratio(tp, tp + fn_);
        let (f1, u3) = f_beta(precision, recall, 1.0);
        Self {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
            undefined: u1 || u2 || u3,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn f_beta(&self, beta: f64) -> f64 {
        f_beta(self.precision, self.recall, beta).0
    }

    /// Mean of precision, recall and F1 over runs; counts are summed.
    pub fn mean(runs: &[Metrics]) -> Metrics {
        if runs.is_empty() {
            return Metrics::default();
        }
        let n = runs.len() as f64;
        let avg = |f: fn(&Metrics) -> f64| runs.iter().map(f).sum::<f64>() / n;
        Metrics {
            tp: runs.iter().map(|m| m.tp).sum(),
            fp: runs.iter().map(|m| m.fp).sum(),
            tn: runs.iter().map(|m| m.tn).sum(),
            fn_: runs.iter().map(|m| m.fn_).sum(),
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            undefined: runs.iter().any(|m| m.undefined),
        }
    }
}

/// Positive class is "malicious" (`true`).
pub fn compute_metrics(predictions: &[bool], labels: &[bool]) -> Result<Metrics, ExperimentError> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(ExperimentError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, tn, fn_))
}
