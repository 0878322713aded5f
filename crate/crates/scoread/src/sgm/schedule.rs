//! The variance-exploding perturbation schedule.
//!
//! Perturbed data is `x_t = x + sigma_t * z` with
//! `sigma_t = sqrt((sigma^(2t) - 1) / (2 ln sigma))`, the accumulated noise
//! scale of a diffusion with geometrically growing coefficient. `sigma_0` is
//! exactly 0 and `sigma_t` grows strictly with `t`; for small `t` it behaves
//! like `sqrt(t)` regardless of the base.

use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Noise schedule parameters: the base `sigma > 1`, the largest usable time
/// `t_max`, and the training-time lower cutoff `t_min` (the score is not
/// queried below it; `1/sigma_t` blows up as `t -> 0`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SigmaSchedule {
    sigma: f64,
    t_min: f64,
    t_max: f64,
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        SigmaSchedule { sigma: 25.0, t_min: 0.01, t_max: 1.0 }
    }
}

impl SigmaSchedule {
    /// Validated constructor: requires `sigma > 1` and `0 < t_min < t_max`.
    pub fn new(sigma: f64, t_min: f64, t_max: f64) -> Result<Self> {
        let schedule = SigmaSchedule { sigma, t_min, t_max };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Re-checks the invariants (useful after deserialization).
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 1.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma base must be finite and > 1, got {}",
                self.sigma
            )));
        }
        if !(self.t_min.is_finite() && self.t_max.is_finite() && 0.0 < self.t_min && self.t_min < self.t_max)
        {
            return Err(Error::InvalidArgument(format!(
                "times must satisfy 0 < t_min < t_max, got t_min = {}, t_max = {}",
                self.t_min, self.t_max
            )));
        }
        Ok(())
    }

    /// The base of the geometric noise growth.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Smallest time at which the score may be queried.
    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    /// Largest valid time.
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Noise scale at time `t in [0, t_max]`.
    ///
    /// Evaluated as `sqrt(expm1(2 t ln sigma) / (2 ln sigma))`, which is the
    /// closed form computed without cancellation for small `t` and gives
    /// `sigma_0 = 0` exactly.
    pub fn sigma_at(&self, t: f64) -> Result<f64> {
        if !(t.is_finite() && (0.0..=self.t_max).contains(&t)) {
            return Err(Error::InvalidArgument(format!(
                "time {t} outside [0, {}]",
                self.t_max
            )));
        }
        let log_sigma = self.sigma.ln();
        Ok(((2.0 * t * log_sigma).exp_m1() / (2.0 * log_sigma)).sqrt())
    }
}

/// Draws `z ~ N(0, I)` and returns `(x + sigma_t * z, z)`. The noise draw is
/// returned because the score-matching target is `-z / sigma_t`.
pub fn perturb(
    x: &[f64],
    t: f64,
    schedule: &SigmaSchedule,
    rng: &mut SeededRng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sigma = schedule.sigma_at(t)?;
    let z = rng.normal_vec(x.len());
    let x_t = x.iter().zip(&z).map(|(v, n)| v + sigma * n).collect();
    Ok((x_t, z))
}
