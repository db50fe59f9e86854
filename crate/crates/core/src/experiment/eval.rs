//! Accuracy and confusion matrices for a trained network.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::NetworkState;

const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes absent from the dataset.
    pub per_class: Vec<Option<f64>>,
}

/// Index of the largest entry; the first one wins ties.
fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Predicted classes in dataset order, without dropout.
pub fn predict_labels(state: &NetworkState, ds: &Dataset) -> Result<Vec<usize>> {
    check_compatible(state, ds)?;
    let all = ds.all_indices();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in all.chunks(CHUNK) {
        let probs = state.predict(ds.matrix(chunk).view())?;
        out.extend(probs.rows().into_iter().map(argmax));
    }
    Ok(out)
}

fn check_compatible(state: &NetworkState, ds: &Dataset) -> Result<()> {
    let spec = state.spec();
    if spec.input_size() != ds.feature_size() || ds.classes > spec.classes {
        return Err(Error::SpecMismatch(format!(
            "network takes {} features and {} classes, dataset `{}` has {} and {}",
            spec.input_size(),
            spec.classes,
            ds.name,
            ds.feature_size(),
            ds.classes
        )));
    }
    Ok(())
}

pub fn evaluate(state: &NetworkState, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::InvalidInput(format!("dataset `{}` is empty", ds.name)));
    }
    let predicted = predict_labels(state, ds)?;
    let k = state.spec().classes;
    let mut confusion = vec![vec![0usize; k]; k];
    for (s, &p) in ds.samples.iter().zip(&predicted) {
        confusion[s.label][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport { samples: ds.len(), accuracy: correct as f64 / ds.len() as f64, confusion, per_class })
}

/// Fraction of correct predictions.
pub fn accuracy(state: &NetworkState, ds: &Dataset) -> Result<f64> {
    Ok(evaluate(state, ds)?.accuracy)
}
