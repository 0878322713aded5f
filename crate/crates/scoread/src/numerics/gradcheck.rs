//! Central-difference gradients: the independent referee for every
//! hand-written backward pass in this crate.

use crate::error::{Error, Result};

/// Estimates the gradient of `loss` at `params` by central differences with
/// step `h`: `g_i = (f(p + h e_i) - f(p - h e_i)) / (2h)`.
///
/// Cost is two loss evaluations per parameter, so this is strictly a testing
/// tool. Fails if any evaluation returns a non-finite value or `h` is not a
/// positive finite number.
pub fn finite_difference_gradient<F>(mut loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive and finite, got {h}")));
    }
    let mut work = params.to_vec();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let original = work[i];
        work[i] = original + h;
        let plus = loss(&work);
        work[i] = original - h;
        let minus = loss(&work);
        work[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at perturbed coordinate {i} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad[i] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}
