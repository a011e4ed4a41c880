//! Softmax + cross-entropy over two classes.

use crate::{Error, Result};

/// Output of [`softmax_cross_entropy`].
pub struct SoftmaxCeOutput {
    /// Mean negative log-likelihood over the batch (regularization penalties
    /// are added by the trainer, not here).
    pub loss: f64,
    /// `[B, 2]` row-stochastic probabilities.
    pub probs: Vec<f64>,
    /// `dL/dlogits` for the mean-NLL term, `[B, 2]`.
    pub d_logits: Vec<f64>,
}

/// Numerically stable row softmax for `[B, 2]` logits.
pub fn softmax_probs(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() % 2 != 0 {
        return Err(Error::ShapeMismatch {
            op: "softmax",
            detail: format!("expected [B, 2] logits, got {} values", logits.len()),
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDivergence("non-finite logits in softmax".into()));
    }
    let mut probs = vec![0.0; logits.len()];
    for b in 0..logits.len() / 2 {
        let (a, c) = (logits[2 * b], logits[2 * b + 1]);
        let m = a.max(c);
        let ea = (a - m).exp();
        let ec = (c - m).exp();
        let z = ea + ec;
        probs[2 * b] = ea / z;
        probs[2 * b + 1] = ec / z;
    }
    Ok(probs)
}

/// Mean negative log-likelihood with the log-sum-exp guard.
/// Labels must be 0 or 1.
pub fn softmax_cross_entropy(logits: &[f64], labels: &[u8]) -> Result<SoftmaxCeOutput> {
    let batch = labels.len();
    if logits.len() != batch * 2 {
        return Err(Error::ShapeMismatch {
            op: "softmax_cross_entropy",
            detail: format!("{} logits for {} labels", logits.len(), batch),
        });
    }
    if let Some(bad) = labels.iter().find(|l| **l > 1) {
        return Err(Error::Data(format!("label {bad} outside {{0, 1}}")));
    }
    let probs = softmax_probs(logits)?;

    let mut loss = 0.0;
    let mut d_logits = vec![0.0; logits.len()];
    let n = batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        let (a, c) = (logits[2 * b], logits[2 * b + 1]);
        let m = a.max(c);
        let log_z = m + ((a - m).exp() + (c - m).exp()).ln();
        let picked = if label == 0 { a } else { c };
        loss += (log_z - picked) / n;
        d_logits[2 * b] = (probs[2 * b] - f64::from(label == 0)) / n;
        d_logits[2 * b + 1] = (probs[2 * b + 1] - f64::from(label == 1)) / n;
    }
    Ok(SoftmaxCeOutput {
        loss,
        probs,
        d_logits,
    })
}
