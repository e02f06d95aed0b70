use serde::{Deserialize, Serialize};

use super::kernels::log_sum_exp;
use super::{NnError, Result, Tensor};

/// Tolerance on target rows summing to one.
pub const TARGET_SUM_TOL: f64 = 1e-6;

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    /// All-ones weights: plain cross-entropy.
    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0; num_classes])
    }

    /// `w_c = N / (C * n_c)` with `N = sum(n_c)`.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(NnError::InvalidWeights(format!(
                "class counts must all be positive: {counts:?}"
            )));
        }
        let total: usize = counts.iter().sum();
        let c = counts.len() as f64;
        Ok(Self(counts.iter().map(|&n| total as f64 / (c * n as f64)).collect()))
    }

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(NnError::InvalidWeights(format!(
                "weights must be positive and finite: {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn check_targets(targets: &Tensor, batch: usize, classes: usize) -> Result<()> {
    let (tb, tc) = targets.dims2("targets")?;
    if (tb, tc) != (batch, classes) {
        return Err(NnError::Shape(format!(
            "targets {:?} do not match logits ({batch}, {classes})",
            targets.shape()
        )));
    }
    for (b, row) in targets.data().chunks(classes).enumerate() {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (sum - 1.0).abs() > TARGET_SUM_TOL {
            return Err(NnError::InvalidTarget { row: b, sum });
        }
    }
    Ok(())
}

/// Weighted soft-target cross-entropy and the softmax probabilities.
///
/// `loss = -(1/B) sum_b sum_c w_c y_bc log softmax(z_b)_c`
pub(crate) fn ce_forward(logits: &[f64], targets: &[f64], weights: &[f64], classes: usize) -> (f64, Vec<f64>) {
    let batch = logits.len() / classes;
    let mut probs = vec![0.0; logits.len()];
    let mut total = 0.0;
    for b in 0..batch {
        let z = &logits[b * classes..(b + 1) * classes];
        let y = &targets[b * classes..(b + 1) * classes];
        let lse = log_sum_exp(z);
        let mut row = 0.0;
        for c in 0..classes {
            probs[b * classes + c] = (z[c] - lse).exp();
            if y[c] != 0.0 {
                row += weights[c] * y[c] * (z[c] - lse);
            }
        }
        total -= row;
    }
    (total / batch as f64, probs)
}

/// `d loss / d z_bj = (p_bj * sum_c w_c y_bc - w_j y_bj) / B`
pub(crate) fn ce_backward(probs: &[f64], targets: &[f64], weights: &[f64], classes: usize) -> Vec<f64> {
    let batch = probs.len() / classes;
    let mut grad = vec![0.0; probs.len()];
    for b in 0..batch {
        let y = &targets[b * classes..(b + 1) * classes];
        let mass: f64 = y.iter().zip(weights).map(|(y, w)| y * w).sum();
        for j in 0..classes {
            let i = b * classes + j;
            grad[i] = (probs[i] * mass - weights[j] * y[j]) / batch as f64;
        }
    }
    grad
}

/// Cross-entropy of `logits` `(B, C)` against soft `targets` `(B, C)`.
pub fn cross_entropy(logits: &Tensor, targets: &Tensor, weights: &ClassWeights) -> Result<f64> {
    let (batch, classes) = logits.dims2("logits")?;
    if weights.len() != classes {
        return Err(NnError::Shape(format!(
            "{} class weights for {classes} classes",
            weights.len()
        )));
    }
    check_targets(targets, batch, classes)?;
    let (loss, _) = ce_forward(logits.data(), targets.data(), weights.as_slice(), classes);
    if !loss.is_finite() {
        return Err(NnError::NonFinite("cross_entropy"));
    }
    Ok(loss)
}

/// Row-wise softmax of a `(B, C)` tensor.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, classes) = logits.dims2("logits")?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        let lse = log_sum_exp(row);
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    Ok(out)
}
