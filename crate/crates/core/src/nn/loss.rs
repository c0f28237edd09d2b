//! Binary cross-entropy between predicted and target point vectors,
//! `L = -(1/T) Σ [y log ŷ + (1 - y) log(1 - ŷ)]`.

use super::Scalar;
use crate::error::{Error, Result};

fn check_lengths(pred: usize, target: usize) -> Result<()> {
    if pred != target || pred == 0 {
        return Err(Error::shape("bce_loss", format!("prediction length {pred} vs target length {target}")));
    }
    Ok(())
}

/// Loss on probabilities; every prediction must lie strictly inside `(0, 1)`.
pub fn bce_loss<F: Scalar>(pred: &[F], target: &[F]) -> Result<F> {
    check_lengths(pred.len(), target.len())?;
    if pred.iter().any(|&p| !(p > F::zero() && p < F::one())) {
        return Err(Error::Invalid("BCE predictions must lie strictly inside (0, 1)".into()));
    }
    let sum: F = pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| y * p.ln() + (F::one() - y) * (F::one() - p).ln())
        .sum();
    Ok(-sum / F::of(pred.len() as f64))
}

/// `∂L/∂ŷ_i = (ŷ_i - y_i) / (T ŷ_i (1 - ŷ_i))`
pub fn bce_backward<F: Scalar>(pred: &[F], target: &[F]) -> Result<Vec<F>> {
    check_lengths(pred.len(), target.len())?;
    let t = F::of(pred.len() as f64);
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &y)| (p - y) / (t * p * (F::one() - p)))
        .collect())
}

/// Same loss evaluated from logits `z` with `ŷ = sigmoid(z)`, stable for large `|z|`.
pub fn bce_with_logits<F: Scalar>(logits: &[F], target: &[F]) -> Result<F> {
    check_lengths(logits.len(), target.len())?;
    let sum: F = logits
        .iter()
        .zip(target)
        .map(|(&z, &y)| z.max(F::zero()) - z * y + (F::one() + (-z.abs()).exp()).ln())
        .sum();
    Ok(sum / F::of(logits.len() as f64))
}

/// `∂L/∂z_i = (sigmoid(z_i) - y_i) / T`
pub fn bce_with_logits_backward<F: Scalar>(logits: &[F], target: &[F]) -> Result<Vec<F>> {
    check_lengths(logits.len(), target.len())?;
    let t = F::of(logits.len() as f64);
    Ok(logits
        .iter()
        .zip(target)
        .map(|(&z, &y)| (super::ops::sigmoid_scalar(z) - y) / t)
        .collect())
}
