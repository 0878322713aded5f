//! Threshold-sweep detection metrics for anomaly maps.
//!
//! Scores are min-max normalized to `[0, 1]`, swept with a uniform threshold
//! grid (a pixel is declared anomalous when its score is `>=` the threshold),
//! and summarized as three AUCs — detection against false alarm, detection
//! against threshold, and false alarm against threshold — plus the usual
//! combinations (TD, BS, TD-BS, ODP, SNPR), the area under the
//! precision-recall curve, and per-class five-number summaries.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::GroundTruthMask;
use crate::detector::AnomalyMap;
use crate::error::{Error, Result};

/// Default number of grid thresholds in `[0, 1]`.
pub const DEFAULT_N_TAU: usize = 5001;

/// SNPR is reported as undefined below this false-alarm AUC instead of
/// dividing by a vanishing denominator.
const SNPR_DENOMINATOR_FLOOR: f64 = 1e-12;

/// Min-max normalized scores with the affine map that produced them.
#[derive(Debug, Clone)]
pub struct NormalizedScores {
    /// Scores mapped to `[0, 1]`; the extremes are attained exactly.
    pub values: Vec<f64>,
    /// Smallest raw score (maps to 0).
    pub min: f64,
    /// Largest raw score (maps to 1).
    pub max: f64,
}

/// Detection and false-alarm rates over a uniform threshold grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThresholdCurves {
    /// Thresholds `i / (n - 1)`, ascending.
    pub tau: Vec<f64>,
    /// Fraction of anomaly pixels scoring `>= tau[i]`.
    pub p_d: Vec<f64>,
    /// Fraction of background pixels scoring `>= tau[i]`.
    pub p_f: Vec<f64>,
}

/// The full metric set computed from one anomaly map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Area under the (false alarm, detection) curve.
    pub auc_pd_pf: f64,
    /// Area under the (threshold, detection) curve.
    pub auc_pd_tau: f64,
    /// Area under the (threshold, false alarm) curve.
    pub auc_pf_tau: f64,
    /// Area under the precision-recall curve.
    pub auc_pr: f64,
    /// Total detectability: `auc_pd_pf + auc_pd_tau`.
    pub td: f64,
    /// Background suppressibility: `auc_pd_pf - auc_pf_tau`.
    pub bs: f64,
    /// Combined detectability/suppressibility: `auc_pd_tau - auc_pf_tau`.
    pub tdbs: f64,
    /// Overall detection probability: `auc_pd_pf + auc_pd_tau - auc_pf_tau`.
    pub odp: f64,
    /// Signal-to-noise probability ratio `auc_pd_tau / auc_pf_tau`, or
    /// `None` when the denominator is numerically zero.
    pub snpr: Option<f64>,
}

/// Five-number summary of one class's normalized scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxStats {
    pub minimum: f64,
    pub lower_quartile: f64,
    pub median: f64,
    pub upper_quartile: f64,
    pub maximum: f64,
}

/// Everything computed by [`evaluate`].
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Threshold sweep of the normalized scores.
    pub curves: ThresholdCurves,
    /// Scalar metrics.
    pub report: MetricsReport,
    /// Summary of background scores after normalization.
    pub background: BoxStats,
    /// Summary of anomaly scores after normalization.
    pub anomaly: BoxStats,
    /// Smallest raw score (normalization provenance).
    pub score_min: f64,
    /// Largest raw score (normalization provenance).
    pub score_max: f64,
}

/// Min-max normalizes scores to `[0, 1]`.
///
/// Fails on empty, non-finite, or constant input — a constant map carries no
/// ranking information and the affine map would be undefined.
pub fn normalize_scores(scores: &[f64]) -> Result<NormalizedScores> {
    if scores.is_empty() {
        return Err(Error::DegenerateInput("no scores to normalize".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range <= 0.0 {
        return Err(Error::DegenerateInput(format!(
            "scores are constant at {min}; normalization is undefined"
        )));
    }
    // Dividing by the range directly lands the extremes exactly on 0 and 1.
    let values = scores.iter().map(|s| (s - min) / range).collect();
    Ok(NormalizedScores { values, min, max })
}

fn split_classes(scores: &[f64], labels: &[u8]) -> Result<(Vec<f64>, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::DegenerateInput("no scores to evaluate".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut anomaly = Vec::new();
    let mut background = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l != 0 {
            anomaly.push(s);
        } else {
            background.push(s);
        }
    }
    if anomaly.is_empty() {
        return Err(Error::SingleClass(
            "ground truth marks no anomaly pixels".into(),
        ));
    }
    if background.is_empty() {
        return Err(Error::SingleClass(
            "ground truth marks no background pixels".into(),
        ));
    }
    anomaly.sort_by(f64::total_cmp);
    background.sort_by(f64::total_cmp);
    Ok((anomaly, background))
}

/// Fraction of (ascending sorted) values `>= tau`.
fn fraction_at_or_above(sorted: &[f64], tau: f64) -> f64 {
    let below = sorted.partition_point(|&s| s < tau);
    (sorted.len() - below) as f64 / sorted.len() as f64
}

/// Sweeps a uniform grid of `n_tau` thresholds over scores in `[0, 1]`.
///
/// Both classes must be present. Scores outside `[0, 1]` are rejected;
/// normalize first (grid thresholds would otherwise miss them).
pub fn threshold_curves(scores: &[f64], labels: &[u8], n_tau: usize) -> Result<ThresholdCurves> {
    if n_tau < 2 {
        return Err(Error::InvalidArgument(format!(
            "threshold grid needs at least 2 points, got {n_tau}"
        )));
    }
    if scores.iter().any(|&s| !(0.0..=1.0).contains(&s)) {
        return Err(Error::InvalidArgument(
            "scores must lie in [0, 1]; normalize them first".into(),
        ));
    }
    let (anomaly, background) = split_classes(scores, labels)?;
    let denominator = (n_tau - 1) as f64;
    let mut tau = Vec::with_capacity(n_tau);
    let mut p_d = Vec::with_capacity(n_tau);
    let mut p_f = Vec::with_capacity(n_tau);
    for i in 0..n_tau {
        let threshold = i as f64 / denominator;
        tau.push(threshold);
        p_d.push(fraction_at_or_above(&anomaly, threshold));
        p_f.push(fraction_at_or_above(&background, threshold));
    }
    Ok(ThresholdCurves { tau, p_d, p_f })
}

/// Trapezoid rule over `(x, y)` points that are already ordered in `x`.
fn trapezoid(points: impl Iterator<Item = (f64, f64)>) -> f64 {
    let mut area = 0.0;
    let mut previous: Option<(f64, f64)> = None;
    for (x, y) in points {
        if let Some((px, py)) = previous {
            area += (x - px) * (y + py) / 2.0;
        }
        previous = Some((x, y));
    }
    area
}

/// The three grid AUCs of a threshold sweep:
/// `(auc_pd_pf, auc_pd_tau, auc_pf_tau)`.
///
/// The threshold AUCs integrate the detection and false-alarm curves over
/// the grid. The detection/false-alarm AUC integrates detection over false
/// alarm with points ordered by descending threshold; when even the highest
/// threshold leaves false alarms, the curve is anchored at
/// `(0, p_d(tau_max))` so the integral still spans the full axis.
pub fn auc_triplet(curves: &ThresholdCurves) -> (f64, f64, f64) {
    let n = curves.tau.len();
    let auc_pd_tau = trapezoid((0..n).map(|i| (curves.tau[i], curves.p_d[i])));
    let auc_pf_tau = trapezoid((0..n).map(|i| (curves.tau[i], curves.p_f[i])));
    let descending = (0..n).rev().map(|i| (curves.p_f[i], curves.p_d[i]));
    let anchor = if curves.p_f[n - 1] > 0.0 {
        Some((0.0, curves.p_d[n - 1]))
    } else {
        None
    };
    let auc_pd_pf = trapezoid(anchor.into_iter().chain(descending));
    (auc_pd_pf, auc_pd_tau, auc_pf_tau)
}

/// Area under the precision-recall curve with anomalies as positives.
///
/// Every distinct score is used as a threshold (descending, `>=` rule). The
/// curve is anchored at recall 0 with the precision of the strictest
/// threshold, and integrated over recall with the trapezoid rule.
pub fn auc_pr(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (anomaly, background) = split_classes(scores, labels)?;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| f64::total_cmp(b, a));
    thresholds.dedup();
    let mut points = Vec::with_capacity(thresholds.len() + 1);
    for &threshold in &thresholds {
        let tp = fraction_at_or_above(&anomaly, threshold) * anomaly.len() as f64;
        let fp = fraction_at_or_above(&background, threshold) * background.len() as f64;
        let recall = tp / anomaly.len() as f64;
        // tp + fp >= 1 because the threshold is an attained score.
        let precision = tp / (tp + fp);
        points.push((recall, precision));
    }
    let anchor = (0.0, points[0].1);
    Ok(trapezoid(std::iter::once(anchor).chain(points)))
}

/// Tie-corrected rank statistic: the probability that a random anomaly
/// pixel outscores a random background pixel (ties count half).
///
/// Unlike the grid AUC this is exact and invariant under any strictly
/// increasing rescaling of the scores, which makes it a good cross-check.
pub fn rank_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (anomaly, background) = split_classes(scores, labels)?;
    let mut tagged: Vec<(f64, bool)> = anomaly
        .iter()
        .map(|&s| (s, true))
        .chain(background.iter().map(|&s| (s, false)))
        .collect();
    tagged.sort_by(|a, b| f64::total_cmp(&a.0, &b.0));
    let mut anomaly_rank_sum = 0.0;
    let mut index = 0;
    while index < tagged.len() {
        let mut end = index;
        while end < tagged.len() && tagged[end].0 == tagged[index].0 {
            end += 1;
        }
        // 1-based average rank of the tie group [index, end).
        let average_rank = (index + 1 + end) as f64 / 2.0;
        for item in &tagged[index..end] {
            if item.1 {
                anomaly_rank_sum += average_rank;
            }
        }
        index = end;
    }
    let n_a = anomaly.len() as f64;
    let n_b = background.len() as f64;
    let u = anomaly_rank_sum - n_a * (n_a + 1.0) / 2.0;
    Ok(u / (n_a * n_b))
}

/// Combines the three grid AUCs and the PR AUC into the full report.
pub fn metrics_report(
    auc_pd_pf: f64,
    auc_pd_tau: f64,
    auc_pf_tau: f64,
    auc_pr: f64,
) -> MetricsReport {
    let snpr = if auc_pf_tau < SNPR_DENOMINATOR_FLOOR {
        None
    } else {
        Some(auc_pd_tau / auc_pf_tau)
    };
    MetricsReport {
        auc_pd_pf,
        auc_pd_tau,
        auc_pf_tau,
        auc_pr,
        td: auc_pd_pf + auc_pd_tau,
        bs: auc_pd_pf - auc_pf_tau,
        tdbs: auc_pd_tau - auc_pf_tau,
        odp: auc_pd_pf + auc_pd_tau - auc_pf_tau,
        snpr,
    }
}

/// Five-number summary with linearly interpolated quartiles
/// (quantile `q` sits at fractional position `q * (n - 1)`).
pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("no values to summarize".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("box summary values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| -> f64 {
        let position = q * (sorted.len() - 1) as f64;
        let low = position.floor() as usize;
        let high = position.ceil() as usize;
        let fraction = position - low as f64;
        sorted[low] + fraction * (sorted[high] - sorted[low])
    };
    Ok(BoxStats {
        minimum: sorted[0],
        lower_quartile: quantile(0.25),
        median: quantile(0.5),
        upper_quartile: quantile(0.75),
        maximum: sorted[sorted.len() - 1],
    })
}

/// Full evaluation of raw anomaly strengths against ground truth labels:
/// normalizes, sweeps `n_tau` thresholds, and fills in every metric.
pub fn evaluate(strengths: &[f64], labels: &[u8], n_tau: usize) -> Result<Evaluation> {
    if strengths.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} strengths but {} labels",
            strengths.len(),
            labels.len()
        )));
    }
    let normalized = normalize_scores(strengths)?;
    let curves = threshold_curves(&normalized.values, labels, n_tau)?;
    let (auc_pd_pf, auc_pd_tau, auc_pf_tau) = auc_triplet(&curves);
    let pr = auc_pr(&normalized.values, labels)?;
    let report = metrics_report(auc_pd_pf, auc_pd_tau, auc_pf_tau, pr);
    let mut anomaly_scores = Vec::new();
    let mut background_scores = Vec::new();
    for (&s, &l) in normalized.values.iter().zip(labels) {
        if l != 0 {
            anomaly_scores.push(s);
        } else {
            background_scores.push(s);
        }
    }
    Ok(Evaluation {
        curves,
        report,
        background: box_stats(&background_scores)?,
        anomaly: box_stats(&anomaly_scores)?,
        score_min: normalized.min,
        score_max: normalized.max,
    })
}

/// [`evaluate`] for an anomaly map and its ground-truth mask; shapes must
/// agree.
pub fn evaluate_map(map: &AnomalyMap, mask: &GroundTruthMask, n_tau: usize) -> Result<Evaluation> {
    if map.height() != mask.height() || map.width() != mask.width() {
        return Err(Error::ShapeMismatch(format!(
            "map is {}x{} but mask is {}x{}",
            map.height(),
            map.width(),
            mask.height(),
            mask.width()
        )));
    }
    evaluate(map.strengths(), mask.labels(), n_tau)
}

/// Writes the threshold sweep as CSV with header `tau,p_d,p_f`.
pub fn write_curves_csv(curves: &ThresholdCurves, path: &Path) -> Result<()> {
    let mut out = String::from("tau,p_d,p_f\n");
    for i in 0..curves.tau.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            curves.tau[i], curves.p_d[i], curves.p_f[i]
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes the two per-class five-number summaries as CSV.
pub fn write_box_csv(background: &BoxStats, anomaly: &BoxStats, path: &Path) -> Result<()> {
    let mut out = String::from("class,minimum,lower_quartile,median,upper_quartile,maximum\n");
    for (name, stats) in [("background", background), ("anomaly", anomaly)] {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            name,
            stats.minimum,
            stats.lower_quartile,
            stats.median,
            stats.upper_quartile,
            stats.maximum
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
