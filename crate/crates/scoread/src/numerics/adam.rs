//! Adam optimizer over a flat parameter vector.

use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AdamHyper {
    /// Step size.
    pub learning_rate: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
    /// Denominator stabilizer.
    pub epsilon: f64,
}

impl AdamHyper {
    /// The conventional defaults with a caller-chosen learning rate.
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0,1), got {b}")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Optimizer state: bias-corrected first and second moment estimates plus
/// the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    hyper: AdamHyper,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    /// Fresh state for `parameter_count` parameters.
    pub fn new(parameter_count: usize, hyper: AdamHyper) -> Result<Self> {
        hyper.validate()?;
        Ok(AdamState {
            hyper,
            step: 0,
            first: vec![0.0; parameter_count],
            second: vec![0.0; parameter_count],
        })
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// The hyperparameters this state was built with.
    pub fn hyper(&self) -> &AdamHyper {
        &self.hyper
    }
}

/// One in-place Adam update of `params` from `grads`.
///
/// The per-coordinate step magnitude is bounded by roughly the learning rate
/// (exactly so on the first step, up to bias-correction transients later),
/// which is what makes Adam robust to the raw gradient scale. Non-finite
/// gradients abort with [`Error::Diverged`].
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam expects matching lengths, got params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged { step: state.step as usize, epoch_losses: Vec::new() });
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.first[i] = h.beta1 * state.first[i] + (1.0 - h.beta1) * g;
        state.second[i] = h.beta2 * state.second[i] + (1.0 - h.beta2) * g * g;
        let m_hat = state.first[i] / bc1;
        let v_hat = state.second[i] / bc2;
        params[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
    }
    Ok(())
}
