//! Confusion-matrix statistics with `1 = attacked = positive`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(truth: &[u8], predicted: &[u8]) -> Result<Confusion> {
    if truth.len() != predicted.len() {
        return Err(Error::Argument(format!(
            "label lists differ in length: {} vs {}",
            truth.len(),
            predicted.len()
        )));
    }
    let mut c = Confusion::default();
    for (i, (&y, &p)) in truth.iter().zip(predicted).enumerate() {
        match (y, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fn_ += 1,
            _ => {
                return Err(Error::Argument(format!(
                    "labels must be 0 or 1, got truth {y} / prediction {p} at index {i}"
                )))
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Confusion,
    /// Some ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
}

pub fn metrics(c: &Confusion) -> Result<Metrics> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let accuracy = (tp + tn) / total as f64;
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        counts: *c,
        degenerate,
    })
}

/// Area under the ROC curve of `scores` for `labels` (1 positive), counting ties as
/// half. Equals the Mann-Whitney probability that a random positive outscores a
/// random negative.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Argument("scores and labels differ in length".into()));
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    if pairs.iter().any(|(s, l)| !s.is_finite() || *l > 1) {
        return Err(Error::Argument("scores must be finite and labels binary".into()));
    }
    let n_pos = pairs.iter().filter(|(_, l)| *l == 1).count() as f64;
    let n_neg = pairs.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::Argument("AUC needs both positive and negative samples".into()));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank sum of positives with average ranks for ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i;
        while j + 1 < pairs.len() && pairs[j + 1].0 == pairs[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += pairs[i..=j].iter().filter(|(_, l)| *l == 1).count() as f64 * avg_rank;
        i = j + 1;
    }
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}
