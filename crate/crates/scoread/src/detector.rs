//! Anomaly scoring from an ensemble of noised score directions.
//!
//! For one pixel `x`, the detector draws `k` Gaussian perturbations
//! `x_i = x + sigma_t z_i`, evaluates the score at each, normalizes every
//! score to a unit vector, and sums them. The norm of the sum is the anomaly
//! strength: perturbations of a typical pixel produce scores in scattered
//! directions that mostly cancel (norm near `sqrt(k)`), while an off-manifold
//! pixel pulls every score toward the data manifold so the directions agree
//! and the norm approaches `k`. Because each score is normalized first, the
//! strength is invariant to any positive rescaling of the score function.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use rayon::prelude::*;

use crate::data_io::{extract_context, ContextSet, DualWindow, HsiCube};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::sgm::{ScoreNetwork, SigmaSchedule};

/// Scores below this norm are treated as numerically zero and skipped: a
/// zero score has no direction to contribute.
const NEGLIGIBLE_SCORE_NORM: f64 = 1e-12;

/// Settings of the perturbation ensemble.
#[derive(Debug, Clone)]
pub struct DetectorParams {
    /// Diffusion time of the perturbations (sets the noise scale).
    pub t: f64,
    /// Ensemble size: number of perturbed score evaluations per pixel.
    pub k: usize,
    /// Dual window for context extraction; `None` for unconditional models.
    pub window: Option<DualWindow>,
    /// Base seed; pixel `n` uses stream `n` of this seed.
    pub seed: u64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            t: 0.05,
            k: 100,
            window: None,
            seed: 0,
        }
    }
}

impl DetectorParams {
    /// Checks that the time is positive and finite and the ensemble nonempty.
    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "detector time must be positive and finite, got {}",
                self.t
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument(
                "ensemble size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Sum of normalized score directions for one pixel.
#[derive(Debug, Clone)]
pub struct AnomalyVector {
    sum: Vec<f64>,
    contributing: usize,
}

impl AnomalyVector {
    /// The accumulated direction sum.
    pub fn sum(&self) -> &[f64] {
        &self.sum
    }

    /// Number of draws whose score was large enough to contribute.
    pub fn contributing(&self) -> usize {
        self.contributing
    }

    /// Anomaly strength: the norm of the direction sum, in `[0, k]`.
    pub fn strength(&self) -> f64 {
        self.sum.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Accumulates the normalized-score ensemble for a single spectrum.
///
/// `score_fn` is called once per draw with the perturbed spectrum, the time,
/// and the (unchanged) context. Draws whose score norm falls below `1e-12`
/// are skipped; if every draw is skipped the input is reported as degenerate
/// rather than silently scored 0, since a zero score everywhere means the
/// model has no opinion about the pixel.
pub fn anomaly_vector<F>(
    score_fn: &mut F,
    x: &[f64],
    context: Option<&ContextSet>,
    params: &DetectorParams,
    schedule: &SigmaSchedule,
    rng: &mut SeededRng,
) -> Result<AnomalyVector>
where
    F: FnMut(&[f64], f64, Option<&ContextSet>) -> Result<Vec<f64>>,
{
    params.validate()?;
    let sigma = schedule.sigma_at(params.t)?;
    let mut sum = vec![0.0; x.len()];
    let mut contributing = 0usize;
    let mut perturbed = vec![0.0; x.len()];
    for _ in 0..params.k {
        for (p, &v) in perturbed.iter_mut().zip(x) {
            *p = v + sigma * rng.normal();
        }
        let score = score_fn(&perturbed, params.t, context)?;
        if score.len() != x.len() {
            return Err(Error::ShapeMismatch(format!(
                "score has dimension {}, expected {}",
                score.len(),
                x.len()
            )));
        }
        let norm_sq = score.iter().map(|s| s * s).sum::<f64>();
        if !norm_sq.is_finite() {
            return Err(Error::NonFinite("score vector".into()));
        }
        let norm = norm_sq.sqrt();
        if norm < NEGLIGIBLE_SCORE_NORM {
            continue;
        }
        for (acc, s) in sum.iter_mut().zip(&score) {
            *acc += s / norm;
        }
        contributing += 1;
    }
    if contributing == 0 {
        return Err(Error::DegenerateInput(
            "every perturbed score was numerically zero".into(),
        ));
    }
    Ok(AnomalyVector { sum, contributing })
}

/// Per-pixel anomaly strengths of a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    height: usize,
    width: usize,
    strengths: Vec<f64>,
}

impl AnomalyMap {
    /// Wraps row-major strengths; all values must be finite and non-negative.
    pub fn new(height: usize, width: usize, strengths: Vec<f64>) -> Result<Self> {
        if strengths.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "map expects {} values ({height} x {width}), got {}",
                height * width,
                strengths.len()
            )));
        }
        if strengths.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("anomaly strengths".into()));
        }
        Ok(AnomalyMap {
            height,
            width,
            strengths,
        })
    }

    /// Number of rows.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Number of columns.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major per-pixel strengths.
    pub fn strengths(&self) -> &[f64] {
        &self.strengths
    }
}

/// Scores every pixel of `cube` with the trained network.
///
/// Pixel `n` uses an independent random stream (`params.seed`, stream `n`),
/// so the result does not depend on evaluation order and parallel and serial
/// runs agree bit for bit. Work is distributed with rayon; install a thread
/// pool beforehand to bound parallelism.
pub fn detect_map(
    cube: &HsiCube,
    net: &ScoreNetwork,
    params: &DetectorParams,
) -> Result<AnomalyMap> {
    params.validate()?;
    let schedule = net.schedule();
    if params.t < schedule.t_min() || params.t > schedule.t_max() {
        return Err(Error::InvalidArgument(format!(
            "detector time {} outside the model's trained range [{}, {}]",
            params.t,
            schedule.t_min(),
            schedule.t_max()
        )));
    }
    if cube.bands() != net.arch().bands {
        return Err(Error::ShapeMismatch(format!(
            "cube has {} bands but the model expects {}",
            cube.bands(),
            net.arch().bands
        )));
    }
    match (&net.arch().context, &params.window) {
        (Some(ctx), Some(window)) => {
            if window.context_count() != ctx.count {
                return Err(Error::ShapeMismatch(format!(
                    "window provides {} context spectra but the model expects {}",
                    window.context_count(),
                    ctx.count
                )));
            }
        }
        (Some(_), None) => {
            return Err(Error::InvalidArgument(
                "model is context-conditioned; detection requires a dual window".into(),
            ));
        }
        (None, Some(_)) => {
            return Err(Error::InvalidArgument(
                "model is unconditional; remove the dual window".into(),
            ));
        }
        (None, None) => {}
    }

    let strengths: Vec<f64> = (0..cube.pixel_count())
        .into_par_iter()
        .map(|pixel| -> Result<f64> {
            let x = cube.spectrum(pixel);
            let context = match params.window {
                Some(window) => Some(extract_context(cube, pixel, window)?),
                None => None,
            };
            let mut rng = SeededRng::new(params.seed, pixel as u64);
            let mut score_fn = |x_t: &[f64], t: f64, ctx: Option<&ContextSet>| {
                net.score(x_t, t, ctx)
            };
            let vector = anomaly_vector(
                &mut score_fn,
                &x,
                context.as_ref(),
                params,
                schedule,
                &mut rng,
            )?;
            Ok(vector.strength())
        })
        .collect::<Result<Vec<f64>>>()?;
    AnomalyMap::new(cube.height(), cube.width(), strengths)
}

/// Saves a map as a one-band cube container (JSON header plus raw payload).
pub fn save_map(map: &AnomalyMap, header_path: &Path, raw_path: &Path) -> Result<()> {
    let cube = HsiCube::new(map.height, map.width, 1, map.strengths.clone())?;
    crate::data_io::save_cube(&cube, header_path, raw_path)
}

/// Loads a map saved by [`save_map`]. Rejects containers with several bands.
pub fn load_map(header_path: &Path, raw_path: &Path) -> Result<AnomalyMap> {
    let cube = crate::data_io::load_cube(header_path, raw_path)?;
    if cube.bands() != 1 {
        return Err(Error::format(
            header_path,
            format!("anomaly map must have exactly 1 band, got {}", cube.bands()),
        ));
    }
    let (height, width) = (cube.height(), cube.width());
    AnomalyMap::new(height, width, cube.into_values())
}

/// Writes the map as a 16-bit binary PGM (maxval 65535, big-endian samples),
/// min-max stretched so the smallest strength maps to 0 and the largest to
/// 65535. A constant map is written as all zeros.
pub fn save_map_pgm(map: &AnomalyMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write!(out, "P5\n{} {}\n65535\n", map.width, map.height).map_err(|e| Error::io(path, e))?;
    let min = map.strengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map
        .strengths
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    for &v in &map.strengths {
        let level = if range > 0.0 {
            ((v - min) / range * 65535.0).round() as u16
        } else {
            0
        };
        out.write_all(&level.to_be_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
