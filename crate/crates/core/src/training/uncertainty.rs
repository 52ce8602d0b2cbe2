use serde::Serialize;

use crate::error::{invalid, Result};
use crate::rules::PosteriorPrediction;

/// Per-example predictive uncertainty and whether the posterior mean was right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UncertaintyRow {
    pub example_id: usize,
    pub correct: bool,
    pub entropy: f64,
    pub std: f64,
}

pub fn uncertainty_report(pred: &PosteriorPrediction, labels: &[usize]) -> Result<Vec<UncertaintyRow>> {
    if labels.len() != pred.entropy.len() {
        return Err(invalid(format!("{} labels for {} predictions", labels.len(), pred.entropy.len())));
    }
    let std = pred.predicted_std();
    Ok(pred
        .predicted()
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (p, &l))| UncertaintyRow {
            example_id: i,
            correct: p == l,
            entropy: pred.entropy[i],
            std: std[i],
        })
        .collect())
}

/// Median (mean of the middle pair for even counts); `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median entropy of `(misclassified, correct)` rows.
pub fn entropy_medians(rows: &[UncertaintyRow]) -> (Option<f64>, Option<f64>) {
    let pick = |c: bool| -> Vec<f64> { rows.iter().filter(|r| r.correct == c).map(|r| r.entropy).collect() };
    (median(&pick(false)), median(&pick(true)))
}
