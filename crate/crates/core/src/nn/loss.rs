use serde::{Deserialize, Serialize};

use super::{NnError, Result};

/// Per-class loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassWeights(pub Vec<f64>);

impl ClassWeights {
    pub fn uniform(n_classes: usize) -> Self {
        ClassWeights(vec![1.0; n_classes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Inverse frequency `N / (C_present · n_c)`; absent classes get weight 1
/// (they never occur as targets).
pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return Err(NnError::AllEmpty);
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    Ok(ClassWeights(
        counts
            .iter()
            .map(|&c| if c > 0 { n as f64 / (present * c as f64) } else { 1.0 })
            .collect(),
    ))
}

/// Max-subtracted softmax over the classes where `active` is true; inactive
/// classes get probability 0.
pub fn softmax(logits: &[f64], active: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits
        .iter()
        .zip(active)
        .map(|(&l, &a)| if a { (l - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// `−w_t · log softmax(logits)_t` and its gradient `w_t · (softmax − onehot_t)`
/// over all classes.
pub fn weighted_cross_entropy(logits: &[f64], target: usize, w: &ClassWeights) -> Result<(f64, Vec<f64>)> {
    let active = vec![true; logits.len()];
    masked_cross_entropy(logits, target, w, &active)
}

pub(crate) fn masked_cross_entropy(
    logits: &[f64],
    target: usize,
    w: &ClassWeights,
    active: &[bool],
) -> Result<(f64, Vec<f64>)> {
    let c = logits.len();
    if target >= c || !active[target] {
        return Err(NnError::BadTarget { class: target, n_classes: c });
    }
    if w.len() != c {
        return Err(NnError::DimensionMismatch { expected: c, found: w.len() });
    }
    let max = logits
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    let log_p = logits[target] - max - sum.ln();
    let wt = w.0[target];
    let mut grad = softmax(logits, active);
    grad[target] -= 1.0;
    grad.iter_mut().for_each(|g| *g *= wt);
    Ok((-wt * log_p, grad))
}
