use crate::error::{Error, Result};

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of `softmax(logits)` against `label` and its gradient
/// `softmax - one_hot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Domain(format!("label {label} out of range for {} classes", logits.len())));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let lse = m + sum.ln();
    let loss = lse - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}
