use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Class-conditional probability vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    probs: Vec<f64>,
}

impl Prediction {
    /// Wraps an existing probability vector, checking that it is one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::arg("prediction needs at least one class"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::arg("probabilities must lie in [0, 1]"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(Error::arg(format!("probabilities sum to {s}, not 1")));
        }
        Ok(Prediction { probs })
    }

    pub fn uniform(classes: usize) -> Self {
        Prediction { probs: vec![1.0 / classes as f64; classes] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn classes(&self) -> usize {
        self.probs.len()
    }

    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
            .0
    }
}

/// Softmax of a logit vector with the maximum subtracted first.
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<Prediction> {
    if logits.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericInput("softmax logits"));
    }
    Ok(Prediction { probs: softmax_f64(logits) })
}

fn softmax_f64<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Mean softmax cross-entropy over a `[n, classes]` batch and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, c) = match *logits.shape() {
        [n, c] => (n, c),
        _ => return Err(Error::shape("cross entropy", format!("expected [n, classes], got {:?}", logits.shape()))),
    };
    if labels.len() != n {
        return Err(Error::shape("cross entropy", format!("{} labels for batch of {n}", labels.len())));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks_exact(c).zip(labels) {
        if label >= c {
            return Err(Error::arg(format!("label {label} out of range for {c} classes")));
        }
        let p = softmax_f64(row);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        for (j, pj) in p.into_iter().enumerate() {
            let onehot = if j == label { 1.0 } else { 0.0 };
            grad.push(T::from_f64((pj - onehot) / n as f64));
        }
    }
    Ok((loss / n as f64, Tensor::new(&[n, c], grad)?))
}
