//! Weighted F1, MAE and R² over the three-valued label.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::annotation::UncertaintyLabel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub weighted_f1: f64,
    pub mae: f64,
    /// `None` when every true label is the same.
    pub r2: Option<f64>,
    /// Per class, in label order 0, 0.5, 1.
    pub precision: [f64; 3],
    pub recall: [f64; 3],
    pub f1: [f64; 3],
    pub support: [usize; 3],
    pub n: usize,
}

/// Argmax class of each row.
pub fn argmax_rows<T: Scalar>(scores: ArrayView2<T>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (i, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn evaluate<T: Scalar>(
    scores: ArrayView2<T>,
    truth: &[UncertaintyLabel],
) -> Result<EvalReport, ModelError> {
    if scores.nrows() != truth.len() {
        return Err(ModelError::LengthMismatch(scores.nrows(), truth.len()));
    }
    if scores.ncols() != 3 {
        return Err(ModelError::Shape(format!(
            "expected 3 class scores, got {}",
            scores.ncols()
        )));
    }
    let pred: Vec<UncertaintyLabel> = argmax_rows(scores)
        .into_iter()
        .map(|c| UncertaintyLabel::from_class_index(c).expect("argmax of 3 columns"))
        .collect();
    evaluate_labels(&pred, truth)
}

pub fn evaluate_labels(
    pred: &[UncertaintyLabel],
    truth: &[UncertaintyLabel],
) -> Result<EvalReport, ModelError> {
    if pred.len() != truth.len() {
        return Err(ModelError::LengthMismatch(pred.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let n = truth.len();
    let mut tp = [0usize; 3];
    let mut predicted = [0usize; 3];
    let mut support = [0usize; 3];
    for (p, t) in pred.iter().zip(truth) {
        let (p, t) = (p.class_index(), t.class_index());
        predicted[p] += 1;
        support[t] += 1;
        if p == t {
            tp[t] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut precision = [0.0; 3];
    let mut recall = [0.0; 3];
    let mut f1 = [0.0; 3];
    for c in 0..3 {
        precision[c] = ratio(tp[c], predicted[c]);
        recall[c] = ratio(tp[c], support[c]);
        let s = precision[c] + recall[c];
        f1[c] = if s > 0.0 {
            2.0 * precision[c] * recall[c] / s
        } else {
            0.0
        };
    }
    let weighted_f1 = (0..3).map(|c| f1[c] * support[c] as f64).sum::<f64>() / n as f64;
    let mae = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p.value() - t.value()).abs())
        .sum::<f64>()
        / n as f64;
    let mean = truth.iter().map(|t| t.value()).sum::<f64>() / n as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t.value() - mean).powi(2)).sum();
    let ss_res: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p.value() - t.value()).powi(2))
        .sum();
    let r2 = (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot);
    Ok(EvalReport {
        weighted_f1,
        mae,
        r2,
        precision,
        recall,
        f1,
        support,
        n,
    })
}

/// Binary F1 of `pred` against `truth`; 0 when neither has positives.
pub fn binary_f1(pred: &[bool], truth: &[bool]) -> f64 {
    let tp = pred.iter().zip(truth).filter(|(&p, &t)| p && t).count() as f64;
    let fp = pred.iter().zip(truth).filter(|(&p, &t)| p && !t).count() as f64;
    let fneg = pred.iter().zip(truth).filter(|(&p, &t)| !p && t).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}
