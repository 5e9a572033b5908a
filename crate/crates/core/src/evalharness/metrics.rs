use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent correct.
    pub accuracy: f64,
    /// Unweighted mean of per-class F1, percent. A class that is neither
    /// predicted nor present scores 0 and still counts.
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn metrics(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(Error::Invalid("metrics of an empty prediction set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    if let Some(c) = preds.iter().chain(labels).find(|&&c| c >= n_classes) {
        return Err(Error::Invalid(format!("class {c} outside 0..{n_classes}")));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let correct: u64 = (0..n_classes).map(|c| confusion[c][c]).sum();
    let f1_sum: f64 = (0..n_classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let actual: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let denom = (actual + predicted) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .sum();
    Ok(Metrics {
        accuracy: 100.0 * correct as f64 / preds.len() as f64,
        macro_f1: 100.0 * f1_sum / n_classes as f64,
        confusion,
    })
}
