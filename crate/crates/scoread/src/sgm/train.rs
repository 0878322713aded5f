//! The training loop: Adam over shuffled minibatches with an EMA copy of
//! the parameters as the inference model.

use std::time::Instant;

use super::loss::{dsm_loss_and_grad, Weighting};
use super::network::{ArchConfig, ScoreNetwork};
use super::schedule::SigmaSchedule;
use crate::data_io::{ContextSet, SpectraMatrix};
use crate::error::{Error, Result};
use crate::numerics::{adam_update, AdamHyper, AdamState, SeededRng};

/// RNG stream assignments for one training run (all under the run's seed).
mod streams {
    /// Parameter and Fourier-frequency initialization.
    pub const INIT: u64 = 0;
    /// Minibatch shuffling.
    pub const SHUFFLE: u64 = 1;
    /// Per-sample `(t, z)` draws.
    pub const DRAWS: u64 = 2;
}

/// Training hyperparameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of optimization steps.
    pub steps: usize,
    /// Minibatch size.
    pub batch_size: usize,
    /// Adam learning rate.
    pub learning_rate: f64,
    /// EMA decay for the inference parameters.
    pub ema_decay: f64,
    /// Objective weighting `lambda(t)`.
    pub weighting: Weighting,
    /// Perturbation-time sampling range; must lie within the schedule's
    /// `[t_min, t_max]`. `None` means the full range.
    pub t_range: Option<(f64, f64)>,
    /// RNG seed for initialization, shuffling, and draws.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            ema_decay: 0.999,
            weighting: Weighting::SigmaSquared,
            t_range: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self, schedule: &SigmaSchedule) -> Result<(f64, f64)> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("steps and batch size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidArgument(format!(
                "EMA decay must lie in [0,1), got {}",
                self.ema_decay
            )));
        }
        let range = self.t_range.unwrap_or((schedule.t_min(), schedule.t_max()));
        if !(schedule.t_min() <= range.0 && range.0 < range.1 && range.1 <= schedule.t_max()) {
            return Err(Error::InvalidArgument(format!(
                "t range {range:?} must lie within [{}, {}]",
                schedule.t_min(),
                schedule.t_max()
            )));
        }
        Ok(range)
    }
}

/// What training did: per-epoch mean losses, the last epoch's mean loss,
/// wall-clock time, and the seed, for the run report.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    /// Mean loss of each epoch (one epoch = `floor(N / batch)` minibatches;
    /// the last entry may cover a partial epoch).
    pub epoch_losses: Vec<f64>,
    /// Mean loss of the final (possibly partial) epoch.
    pub final_loss: f64,
    /// Wall-clock seconds spent in the loop.
    pub wall_clock_seconds: f64,
    /// Seed the run was driven by.
    pub seed: u64,
}

/// Trains a fresh score network on `spectra` (optionally with one context
/// per row) and returns the EMA parameters as the inference model.
///
/// Deterministic: initialization, shuffling, and noise draws each use their
/// own RNG stream under `config.seed`, and updates are serial. The EMA
/// parameters are rounded to f32 before the network is returned — models are
/// stored in f32, so the returned network is bit-identical to what a
/// save/load roundtrip yields.
///
/// A non-finite loss or gradient aborts with [`Error::Diverged`], which
/// carries the epoch losses observed before the failure.
pub fn train(
    arch: &ArchConfig,
    schedule: &SigmaSchedule,
    spectra: &SpectraMatrix,
    contexts: Option<&[ContextSet]>,
    config: &TrainConfig,
) -> Result<(ScoreNetwork, TrainReport)> {
    let t_range = config.validate(schedule)?;
    let n = spectra.count();
    if n < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds the {} available spectra",
            config.batch_size, n
        )));
    }
    if arch.bands != spectra.dim() {
        return Err(Error::ShapeMismatch(format!(
            "architecture expects {} bands, spectra have {}",
            arch.bands,
            spectra.dim()
        )));
    }
    match (arch.context.is_some(), contexts) {
        (false, None) => {}
        (true, Some(ctxs)) if ctxs.len() == n => {}
        (true, Some(ctxs)) => {
            return Err(Error::ShapeMismatch(format!(
                "{} contexts for {} spectra",
                ctxs.len(),
                n
            )));
        }
        (true, None) => {
            return Err(Error::InvalidArgument(
                "conditional architecture requires per-pixel contexts".into(),
            ));
        }
        (false, Some(_)) => {
            return Err(Error::InvalidArgument(
                "unconditional architecture given contexts".into(),
            ));
        }
    }

    let start = Instant::now();
    let mut init_rng = SeededRng::new(config.seed, streams::INIT);
    let mut net = ScoreNetwork::init(arch.clone(), *schedule, &mut init_rng)?;
    let mut adam = AdamState::new(
        net.param_count(),
        AdamHyper::with_learning_rate(config.learning_rate),
    )?;
    let mut ema = net.params().to_vec();
    let mut shuffle_rng = SeededRng::new(config.seed, streams::SHUFFLE);
    let mut draw_rng = SeededRng::new(config.seed, streams::DRAWS);

    let steps_per_epoch = (n / config.batch_size).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    shuffle_rng.shuffle(&mut order);
    let mut cursor = 0usize;

    let mut epoch_losses: Vec<f64> = Vec::new();
    let mut epoch_sum = 0.0;
    let mut epoch_steps = 0usize;

    for step in 0..config.steps {
        if cursor + config.batch_size > n {
            shuffle_rng.shuffle(&mut order);
            cursor = 0;
        }
        let indices = &order[cursor..cursor + config.batch_size];
        cursor += config.batch_size;
        let batch: Vec<&[f64]> = indices.iter().map(|&i| spectra.row(i)).collect();
        let ctx_refs: Option<Vec<&ContextSet>> =
            contexts.map(|cs| indices.iter().map(|&i| &cs[i]).collect());
        let step_result = dsm_loss_and_grad(
            &net,
            &batch,
            ctx_refs.as_deref(),
            t_range,
            config.weighting,
            &mut draw_rng,
        )
        .and_then(|(loss, grads)| {
            adam_update(net.params_mut(), &grads, &mut adam)?;
            Ok(loss)
        });
        let loss = match step_result {
            Ok(loss) => loss,
            // Overflow can surface either as a non-finite loss/gradient or as
            // a non-finite intermediate value inside the network; both mean
            // the optimization blew up.
            Err(Error::Diverged { .. }) | Err(Error::NonFinite(_)) => {
                return Err(Error::Diverged { step, epoch_losses });
            }
            Err(other) => return Err(other),
        };
        for (e, p) in ema.iter_mut().zip(net.params()) {
            *e = config.ema_decay * *e + (1.0 - config.ema_decay) * p;
        }
        epoch_sum += loss;
        epoch_steps += 1;
        if epoch_steps == steps_per_epoch {
            epoch_losses.push(epoch_sum / epoch_steps as f64);
            epoch_sum = 0.0;
            epoch_steps = 0;
        }
    }
    if epoch_steps > 0 {
        epoch_losses.push(epoch_sum / epoch_steps as f64);
    }

    // Install the EMA weights, rounded to storage precision.
    for (p, e) in net.params_mut().iter_mut().zip(&ema) {
        *p = *e as f32 as f64;
    }
    let final_loss = *epoch_losses.last().expect("at least one step ran");
    let report = TrainReport {
        final_loss,
        epoch_losses,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        seed: config.seed,
    };
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sgm::loss::dsm_loss_and_grad_with_draws;
    use crate::sgm::loss::sample_draws;
    use crate::sgm::network::ContextArch;

    fn toy_arch(bands: usize) -> ArchConfig {
        ArchConfig {
            bands,
            width: 8,
            blocks: 1,
            kernel: 3,
            fourier_dim: 8,
            film_hidden: 8,
            context: None,
        }
    }

    /// A small Gaussian cloud to learn: N(0.5, 0.05^2 I) in `bands`
    /// dimensions.
    fn toy_spectra(count: usize, bands: usize, seed: u64) -> SpectraMatrix {
        let mut rng = SeededRng::new(seed, 7);
        let values: Vec<f64> =
            (0..count * bands).map(|_| 0.5 + 0.05 * rng.normal()).collect();
        SpectraMatrix::new(count, bands, values).unwrap()
    }

    fn quick_config(steps: usize, seed: u64) -> TrainConfig {
        TrainConfig { steps, batch_size: 32, learning_rate: 2e-3, seed, ..TrainConfig::default() }
    }

    #[test]
    fn equal_seeds_give_bit_identical_models() {
        let arch = toy_arch(4);
        let schedule = SigmaSchedule::default();
        let spectra = toy_spectra(128, 4, 1);
        let config = quick_config(40, 11);
        let (a, _) = train(&arch, &schedule, &spectra, None, &config).unwrap();
        let (b, _) = train(&arch, &schedule, &spectra, None, &config).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.frequencies(), b.frequencies());
        let config2 = TrainConfig { seed: 12, ..config };
        let (c, _) = train(&arch, &schedule, &spectra, None, &config2).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn loss_decreases_on_toy_gaussian() {
        let arch = toy_arch(4);
        let schedule = SigmaSchedule::default();
        let spectra = toy_spectra(256, 4, 2);
        let config = quick_config(400, 3);
        let (_, report) = train(&arch, &schedule, &spectra, None, &config).unwrap();
        let first = report.epoch_losses[0];
        let last = report.final_loss;
        assert!(
            last <= 0.5 * first,
            "expected >= 50% decrease, got {first} -> {last} over {} epochs",
            report.epoch_losses.len()
        );
        assert!(report.epoch_losses.iter().all(|l| l.is_finite() && *l >= 0.0));
    }

    #[test]
    fn divergence_aborts_with_partial_report() {
        let arch = toy_arch(4);
        let schedule = SigmaSchedule::default();
        let spectra = toy_spectra(64, 4, 4);
        // Adam bounds each step by the learning rate, so only a rate this
        // absurd pushes the activations past f64 range and produces a
        // non-finite loss.
        let config = TrainConfig {
            steps: 50,
            batch_size: 32,
            learning_rate: 1e150,
            seed: 5,
            ..TrainConfig::default()
        };
        match train(&arch, &schedule, &spectra, None, &config) {
            Err(Error::Diverged { step, .. }) => {
                assert!(step < 50);
            }
            other => panic!("expected divergence, got {:?}", other.map(|(_, r)| r)),
        }
    }

    #[test]
    fn batch_larger_than_dataset_is_rejected() {
        let arch = toy_arch(4);
        let schedule = SigmaSchedule::default();
        let spectra = toy_spectra(16, 4, 6);
        let config = TrainConfig { batch_size: 32, ..TrainConfig::default() };
        assert!(train(&arch, &schedule, &spectra, None, &config).is_err());
    }

    #[test]
    fn context_arity_mismatches_are_rejected() {
        let schedule = SigmaSchedule::default();
        let spectra = toy_spectra(64, 4, 7);
        let config = quick_config(5, 1);
        let mut cond = toy_arch(4);
        cond.context = Some(ContextArch { count: 2, hidden: 4, encoded: 3 });
        // Conditional arch without contexts.
        assert!(train(&cond, &schedule, &spectra, None, &config).is_err());
        // Unconditional arch with contexts.
        let ctxs: Vec<ContextSet> =
            (0..64).map(|_| ContextSet::new(2, 4, vec![0.1; 8]).unwrap()).collect();
        assert!(train(&toy_arch(4), &schedule, &spectra, Some(&ctxs), &config).is_err());
        // Wrong context count.
        let few: Vec<ContextSet> = ctxs[..10].to_vec();
        assert!(train(&cond, &schedule, &spectra, Some(&few), &config).is_err());
    }

    #[test]
    fn invalid_t_range_is_rejected() {
        let arch = toy_arch(4);
        let schedule = SigmaSchedule::default();
        let spectra = toy_spectra(64, 4, 8);
        let config =
            TrainConfig { t_range: Some((0.001, 1.0)), batch_size: 32, ..TrainConfig::default() };
        assert!(train(&arch, &schedule, &spectra, None, &config).is_err());
    }

    /// A conditional model whose context pathway is all zeros trains exactly
    /// like the unconditional model: the pooled encoding is zero, so its
    /// forward passes, losses, and shared-parameter gradients coincide step
    /// for step.
    #[test]
    fn zeroed_context_encoder_matches_unconditional_training() {
        let bands = 4;
        let schedule = SigmaSchedule::default();
        let mut rng = SeededRng::new(31, 0);
        let off = {
            let mut net =
                ScoreNetwork::init(toy_arch(bands), schedule, &mut SeededRng::new(31, 5)).unwrap();
            let n = net.param_count();
            let noise = rng.normal_vec(n);
            for (p, z) in net.params_mut().iter_mut().zip(noise) {
                *p = 0.2 * z;
            }
            net
        };
        let mut cond_arch = toy_arch(bands);
        cond_arch.context = Some(ContextArch { count: 3, hidden: 4, encoded: 2 });
        let mut on = ScoreNetwork::init(cond_arch, schedule, &mut SeededRng::new(31, 5)).unwrap();
        // Copy every shared tensor; extend film.w1 with zero columns for the
        // context part; leave the (zero-initialized) context pathway as is,
        // except w1, which gets arbitrary nonzero values to prove the zeros
        // downstream of it are what matters.
        for name in ["lift.w", "lift.b", "block0.conv1.w", "block0.conv1.b", "block0.conv2.w",
            "block0.conv2.b", "head.w", "head.b", "film.b1", "film.w2", "film.b2"]
        {
            let src = off.tensor_range(name).unwrap();
            let dst = on.tensor_range(name).unwrap();
            let vals = off.params()[src].to_vec();
            on.params_mut()[dst].copy_from_slice(&vals);
        }
        {
            // film.w1: off is hidden x 2F, on is hidden x (2F + encoded).
            let src = off.tensor_range("film.w1").unwrap();
            let dst = on.tensor_range("film.w1").unwrap();
            let (hidden, in_off, in_on) = (8, 16, 18);
            let src_vals = off.params()[src].to_vec();
            let dst_vals = &mut on.params_mut()[dst];
            dst_vals.fill(0.0);
            for h in 0..hidden {
                dst_vals[h * in_on..h * in_on + in_off]
                    .copy_from_slice(&src_vals[h * in_off..(h + 1) * in_off]);
            }
        }
        {
            let r = on.tensor_range("context.w1").unwrap();
            for (i, p) in on.params_mut()[r].iter_mut().enumerate() {
                *p = 0.1 + 0.01 * i as f64;
            }
            // The second encoder layer is the "zero-weight conditional
            // encoder": with it zeroed the pooled encoding is identically
            // zero, and (together with the zero film.w1 context columns)
            // every gradient into the context pathway vanishes, so the
            // pathway stays frozen across updates.
            let r = on.tensor_range("context.w2").unwrap();
            on.params_mut()[r].fill(0.0);
        }
        assert_eq!(off.frequencies(), on.frequencies(), "same init stream, same frequencies");

        let spectra = toy_spectra(64, bands, 9);
        let contexts: Vec<ContextSet> =
            (0..64).map(|i| ContextSet::new(3, bands, vec![0.01 * i as f64; 12]).unwrap()).collect();
        let hyper = AdamHyper::with_learning_rate(1e-3);
        let mut adam_off = AdamState::new(off.param_count(), hyper).unwrap();
        let mut adam_on = AdamState::new(on.param_count(), hyper).unwrap();
        let mut off = off;
        let mut on = on;
        for step in 0..20 {
            let indices: Vec<usize> = (0..16).map(|i| (i * 3 + step) % 64).collect();
            let batch: Vec<&[f64]> = indices.iter().map(|&i| spectra.row(i)).collect();
            let ctx_refs: Vec<&ContextSet> = indices.iter().map(|&i| &contexts[i]).collect();
            let mut draw_rng = SeededRng::new(100 + step as u64, 0);
            let draws = sample_draws(16, bands, (0.01, 1.0), &mut draw_rng);
            let (loss_off, grads_off) =
                dsm_loss_and_grad_with_draws(&off, &batch, None, &draws, Weighting::SigmaSquared)
                    .unwrap();
            let (loss_on, grads_on) = dsm_loss_and_grad_with_draws(
                &on,
                &batch,
                Some(&ctx_refs),
                &draws,
                Weighting::SigmaSquared,
            )
            .unwrap();
            assert!(
                (loss_off - loss_on).abs() <= 1e-12 * loss_off.max(1.0),
                "step {step}: {loss_off} vs {loss_on}"
            );
            adam_update(off.params_mut(), &grads_off, &mut adam_off).unwrap();
            adam_update(on.params_mut(), &grads_on, &mut adam_on).unwrap();
        }
    }
}
