use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Accuracy and macro F1 from one logit row per masked position.
pub fn mlm_metrics(logits: &Matrix, targets: &[usize]) -> Result<(f64, f64)> {
    if targets.is_empty() {
        return Err(Error::invalid("mlm_metrics", "empty target set"));
    }
    if logits.rows() != targets.len() {
        return Err(Error::invalid(
            "mlm_metrics",
            format!("{} logit rows for {} targets", logits.rows(), targets.len()),
        ));
    }
    let predictions: Vec<usize> = (0..logits.rows()).map(|i| argmax(logits.row(i))).collect();
    metrics_from_predictions(&predictions, targets)
}

/// Same scoring when argmax predictions are already available.
/// Accuracy is the fraction of matches; F1 is the macro average over the
/// classes present in the targets, each scored one-vs-rest.
pub fn metrics_from_predictions(predictions: &[usize], targets: &[usize]) -> Result<(f64, f64)> {
    if targets.is_empty() {
        return Err(Error::invalid("mlm_metrics", "empty target set"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::invalid(
            "mlm_metrics",
            format!("{} predictions for {} targets", predictions.len(), targets.len()),
        ));
    }
    let correct = predictions
        .iter()
        .zip(targets)
        .filter(|(p, t)| p == t)
        .count();
    let accuracy = correct as f64 / targets.len() as f64;

    let classes: BTreeSet<usize> = targets.iter().copied().collect();
    let mut f1_sum = 0.0;
    for &class in &classes {
        let tp = predictions
            .iter()
            .zip(targets)
            .filter(|&(&p, &t)| p == class && t == class)
            .count() as f64;
        let fp = predictions
            .iter()
            .zip(targets)
            .filter(|&(&p, &t)| p == class && t != class)
            .count() as f64;
        let fn_ = predictions
            .iter()
            .zip(targets)
            .filter(|&(&p, &t)| p != class && t == class)
            .count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
    }
    Ok((accuracy, f1_sum / classes.len() as f64))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
