//! The denoising score-matching objective.
//!
//! For a clean spectrum `x` perturbed to `x_t = x + sigma_t z`, the
//! conditional score of the perturbation kernel is `-(x_t - x)/sigma_t^2 =
//! -z/sigma_t`, so the per-sample objective is
//!
//! ```text
//! lambda(t) * || (-z/sigma_t) - s(x_t, t, c) ||^2
//! ```
//!
//! With the canonical weighting `lambda(t) = sigma_t^2` and the model's
//! noise-scaled parameterization `s = raw/sigma_t`, this collapses to the
//! residual form `|| raw + z ||^2` — no division by `sigma_t` anywhere, which
//! is what keeps small-`t` draws from dominating the gradient.

use super::network::ScoreNetwork;
use super::schedule::SigmaSchedule;
use crate::data_io::ContextSet;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

/// Weighting function `lambda(t)` of the score-matching objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// `lambda(t) = sigma_t^2`: the canonical choice that equalizes the
    /// expected loss across times.
    SigmaSquared,
    /// `lambda(t) = 1`: unweighted; small times dominate.
    Unit,
}

impl Weighting {
    /// The per-sample multiplier applied to the residual `||raw + z||^2`
    /// form of the loss (which already includes one factor of `sigma^2`
    /// relative to the target-vs-score form).
    fn residual_weight(self, sigma: f64) -> f64 {
        match self {
            Weighting::SigmaSquared => 1.0,
            Weighting::Unit => 1.0 / (sigma * sigma),
        }
    }
}

/// One training draw: a perturbation time and the noise vector.
#[derive(Debug, Clone)]
pub struct DsmDraw {
    /// Perturbation time `t`.
    pub t: f64,
    /// The standard normal draw `z` (one entry per band).
    pub noise: Vec<f64>,
}

/// Samples a batch of `(t, z)` draws: `t ~ Uniform(t_lo, t_hi)` and `z ~
/// N(0, I)` per sample.
pub fn sample_draws(
    batch_size: usize,
    bands: usize,
    t_range: (f64, f64),
    rng: &mut SeededRng,
) -> Vec<DsmDraw> {
    (0..batch_size)
        .map(|_| DsmDraw { t: rng.uniform(t_range.0, t_range.1), noise: rng.normal_vec(bands) })
        .collect()
}

/// Loss and parameter gradients on a batch with freshly sampled draws.
///
/// `batch_ctx`, when present, must pair one context per batch row.
pub fn dsm_loss_and_grad(
    net: &ScoreNetwork,
    batch: &[&[f64]],
    batch_ctx: Option<&[&ContextSet]>,
    t_range: (f64, f64),
    weighting: Weighting,
    rng: &mut SeededRng,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let draws = sample_draws(batch.len(), net.arch().bands, t_range, rng);
    dsm_loss_and_grad_with_draws(net, batch, batch_ctx, &draws, weighting)
}

/// Loss and parameter gradients on a batch with caller-supplied draws
/// (frozen draws make the loss a deterministic function of the parameters,
/// which is what finite-difference checks need).
pub fn dsm_loss_and_grad_with_draws(
    net: &ScoreNetwork,
    batch: &[&[f64]],
    batch_ctx: Option<&[&ContextSet]>,
    draws: &[DsmDraw],
    weighting: Weighting,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if draws.len() != batch.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} draws for a batch of {}",
            draws.len(),
            batch.len()
        )));
    }
    if let Some(ctxs) = batch_ctx {
        if ctxs.len() != batch.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} contexts for a batch of {}",
                ctxs.len(),
                batch.len()
            )));
        }
    }
    let bands = net.arch().bands;
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads = vec![0.0; net.param_count()];
    let mut x_t = vec![0.0; bands];
    for (i, (&x, draw)) in batch.iter().zip(draws).enumerate() {
        let sigma = net.schedule().sigma_at(draw.t)?;
        for (out, (v, z)) in x_t.iter_mut().zip(x.iter().zip(&draw.noise)) {
            *out = v + sigma * z;
        }
        let context = batch_ctx.map(|c| c[i]);
        let (raw, cache) = net.forward_cached(&x_t, draw.t, context)?;
        let weight = weighting.residual_weight(sigma);
        let residual: Vec<f64> = raw.iter().zip(&draw.noise).map(|(r, z)| r + z).collect();
        let term = weight * residual.iter().map(|r| r * r).sum::<f64>();
        if !term.is_finite() {
            return Err(Error::Diverged { step: 0, epoch_losses: Vec::new() });
        }
        loss += term;
        let upstream: Vec<f64> = residual.iter().map(|r| 2.0 * weight * inv_batch * r).collect();
        net.backward(&cache, context, &upstream, &mut grads)?;
    }
    loss *= inv_batch;
    if !loss.is_finite() {
        return Err(Error::Diverged { step: 0, epoch_losses: Vec::new() });
    }
    Ok((loss, grads))
}

/// The target-vs-score form of the objective, computed from score vectors:
/// `mean_i lambda(t_i) * ||(-z_i/sigma_i) - s_i||^2`.
///
/// This is the textbook formula; [`dsm_loss_and_grad_with_draws`] computes
/// the algebraically identical residual form. Tests pit the two against each
/// other.
pub fn dsm_loss_from_scores(
    scores: &[Vec<f64>],
    draws: &[DsmDraw],
    schedule: &SigmaSchedule,
    weighting: Weighting,
) -> Result<f64> {
    if scores.len() != draws.len() || scores.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} draws",
            scores.len(),
            draws.len()
        )));
    }
    let mut loss = 0.0;
    for (score, draw) in scores.iter().zip(draws) {
        let sigma = schedule.sigma_at(draw.t)?;
        let lambda = match weighting {
            Weighting::SigmaSquared => sigma * sigma,
            Weighting::Unit => 1.0,
        };
        loss += lambda
            * score
                .iter()
                .zip(&draw.noise)
                .map(|(s, z)| {
                    let d = -z / sigma - s;
                    d * d
                })
                .sum::<f64>();
    }
    Ok(loss / scores.len() as f64)
}
