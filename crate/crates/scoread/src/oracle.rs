//! Closed-form Gaussian subspace reference model.
//!
//! The model places a `d`-dimensional Gaussian on an affine subspace of
//! `D`-dimensional space: `x = offset + U c` with `c ~ N(0, diag(eigenvalues))`
//! and `U` a `D x d` orthonormal basis. Convolving with isotropic noise of
//! scale `sigma` keeps the density Gaussian, so its score has a closed form:
//!
//! ```text
//! score(x) = -[ (v - U U^T v) / sigma^2  +  U diag(1/(lambda_i + sigma^2)) U^T v ]
//! ```
//!
//! with `v = x - offset`. The first term pulls the point back onto the
//! subspace; the second shrinks the in-subspace coordinates. As `sigma -> 0`
//! the score of an off-subspace point aligns with the inward normal direction,
//! which is what the detector exploits. This module provides the analytic
//! score as a ground-truth reference, rank estimation for collections of
//! score vectors, and a synthetic-scene generator for end-to-end runs.

use serde::{Deserialize, Serialize};

use crate::data_io::{GroundTruthMask, HsiCube};
use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SeededRng};
use crate::sgm::SigmaSchedule;

/// Gaussian distribution supported on (a neighborhood of) an affine subspace.
///
/// `intrinsic == ambient` is allowed and yields a full-rank Gaussian;
/// `intrinsic == 0` degenerates to a point mass at `offset`.
#[derive(Debug, Clone)]
pub struct GaussianSubspaceModel {
    ambient: usize,
    intrinsic: usize,
    basis: DenseMatrix,
    eigenvalues: Vec<f64>,
    offset: Vec<f64>,
}

/// Result of orthogonally projecting a point onto the model subspace.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    /// Closest point on the affine subspace.
    pub projection: Vec<f64>,
    /// Euclidean distance from the input to the projection.
    pub distance: f64,
    /// Unit vector from the projection toward the input, or `None` when the
    /// input lies on the subspace (distance numerically zero).
    pub direction: Option<Vec<f64>>,
}

const ORTHONORMALITY_TOLERANCE: f64 = 1e-10;

impl GaussianSubspaceModel {
    /// Builds a model from an explicit orthonormal basis.
    ///
    /// `basis` must be `ambient x intrinsic` with orthonormal columns
    /// (checked to `1e-10`), `eigenvalues` must be positive with one entry
    /// per column, and `offset` must have `ambient` entries.
    pub fn new(basis: DenseMatrix, eigenvalues: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let ambient = basis.rows();
        let intrinsic = basis.cols();
        if ambient == 0 {
            return Err(Error::InvalidArgument(
                "ambient dimension must be positive".into(),
            ));
        }
        if intrinsic > ambient {
            return Err(Error::InvalidArgument(format!(
                "intrinsic dimension {intrinsic} exceeds ambient dimension {ambient}"
            )));
        }
        if eigenvalues.len() != intrinsic {
            return Err(Error::ShapeMismatch(format!(
                "expected {intrinsic} eigenvalues, got {}",
                eigenvalues.len()
            )));
        }
        if offset.len() != ambient {
            return Err(Error::ShapeMismatch(format!(
                "expected offset of length {ambient}, got {}",
                offset.len()
            )));
        }
        for (i, &lambda) in eigenvalues.iter().enumerate() {
            if !lambda.is_finite() || lambda <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "eigenvalue {i} must be positive and finite, got {lambda}"
                )));
            }
        }
        if offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model offset".into()));
        }
        for a in 0..intrinsic {
            for b in a..intrinsic {
                let mut dot = 0.0;
                for r in 0..ambient {
                    dot += basis.at(r, a) * basis.at(r, b);
                }
                let expected = if a == b { 1.0 } else { 0.0 };
                if (dot - expected).abs() > ORTHONORMALITY_TOLERANCE {
                    return Err(Error::InvalidArgument(format!(
                        "basis columns {a} and {b} are not orthonormal: inner product {dot}"
                    )));
                }
            }
        }
        Ok(Self {
            ambient,
            intrinsic,
            basis,
            eigenvalues,
            offset,
        })
    }

    /// Builds a model with a uniformly random orthonormal basis.
    ///
    /// Draws an `ambient x intrinsic` Gaussian matrix and orthonormalizes it
    /// with (twice-applied) modified Gram-Schmidt.
    pub fn random(
        ambient: usize,
        intrinsic: usize,
        eigenvalues: Vec<f64>,
        offset: Vec<f64>,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if intrinsic > ambient {
            return Err(Error::InvalidArgument(format!(
                "intrinsic dimension {intrinsic} exceeds ambient dimension {ambient}"
            )));
        }
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(intrinsic);
        while columns.len() < intrinsic {
            let mut candidate = rng.normal_vec(ambient);
            // Two orthogonalization passes keep the result orthonormal to
            // machine precision even for nearly dependent draws.
            for _ in 0..2 {
                for existing in &columns {
                    let dot: f64 = candidate.iter().zip(existing).map(|(a, b)| a * b).sum();
                    for (c, e) in candidate.iter_mut().zip(existing) {
                        *c -= dot * e;
                    }
                }
            }
            let norm = candidate.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                continue; // essentially impossible; redraw
            }
            for c in &mut candidate {
                *c /= norm;
            }
            columns.push(candidate);
        }
        let mut values = vec![0.0; ambient * intrinsic];
        for (j, column) in columns.iter().enumerate() {
            for (i, &v) in column.iter().enumerate() {
                values[i * intrinsic + j] = v;
            }
        }
        Self::new(
            DenseMatrix::new(ambient, intrinsic, values)?,
            eigenvalues,
            offset,
        )
    }

    /// Ambient (band) dimension `D`.
    pub fn ambient(&self) -> usize {
        self.ambient
    }

    /// Intrinsic (subspace) dimension `d`.
    pub fn intrinsic(&self) -> usize {
        self.intrinsic
    }

    /// Orthonormal basis of the subspace, `ambient x intrinsic`.
    pub fn basis(&self) -> &DenseMatrix {
        &self.basis
    }

    /// Per-direction variances of the in-subspace Gaussian.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Center of the distribution.
    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Draws one point from the model: `offset + U sqrt(lambda) xi`.
    pub fn sample(&self, rng: &mut SeededRng) -> Vec<f64> {
        let mut point = self.offset.clone();
        if self.intrinsic == 0 {
            return point;
        }
        let coords: Vec<f64> = self
            .eigenvalues
            .iter()
            .map(|&lambda| lambda.sqrt() * rng.normal())
            .collect();
        for (i, p) in point.iter_mut().enumerate() {
            let mut lift = 0.0;
            for (j, &c) in coords.iter().enumerate() {
                lift += self.basis.at(i, j) * c;
            }
            *p += lift;
        }
        point
    }

    /// Exact score of the noise-convolved density at diffusion time `t`.
    ///
    /// Fails when the noise scale at `t` is zero (the clean density is
    /// singular off the subspace) or when `x` has the wrong dimension.
    pub fn analytic_score(&self, x: &[f64], t: f64, schedule: &SigmaSchedule) -> Result<Vec<f64>> {
        if x.len() != self.ambient {
            return Err(Error::ShapeMismatch(format!(
                "expected point of dimension {}, got {}",
                self.ambient,
                x.len()
            )));
        }
        let sigma = schedule.sigma_at(t)?;
        if sigma <= 0.0 {
            return Err(Error::DegenerateInput(
                "score is undefined at zero noise scale".into(),
            ));
        }
        let sigma_sq = sigma * sigma;
        let v: Vec<f64> = x.iter().zip(&self.offset).map(|(a, m)| a - m).collect();
        if self.intrinsic == 0 {
            return Ok(v.iter().map(|&vi| -vi / sigma_sq).collect());
        }
        let coords = self.basis.matvec_t(&v)?;
        let tangent = self.basis.matvec(&coords)?;
        let shrunk: Vec<f64> = coords
            .iter()
            .zip(&self.eigenvalues)
            .map(|(&c, &lambda)| c / (lambda + sigma_sq))
            .collect();
        let in_plane = self.basis.matvec(&shrunk)?;
        Ok((0..self.ambient)
            .map(|i| -((v[i] - tangent[i]) / sigma_sq + in_plane[i]))
            .collect())
    }

    /// Orthogonal projection of `x` onto the affine subspace.
    pub fn project(&self, x: &[f64]) -> Result<ProjectionResult> {
        if x.len() != self.ambient {
            return Err(Error::ShapeMismatch(format!(
                "expected point of dimension {}, got {}",
                self.ambient,
                x.len()
            )));
        }
        let v: Vec<f64> = x.iter().zip(&self.offset).map(|(a, m)| a - m).collect();
        let projection: Vec<f64> = if self.intrinsic == 0 {
            self.offset.clone()
        } else {
            let coords = self.basis.matvec_t(&v)?;
            let tangent = self.basis.matvec(&coords)?;
            self.offset
                .iter()
                .zip(&tangent)
                .map(|(m, t)| m + t)
                .collect()
        };
        let delta: Vec<f64> = x.iter().zip(&projection).map(|(a, p)| a - p).collect();
        let distance = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let scale = 1.0 + x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let direction = if distance > 1e-12 * scale {
            Some(delta.iter().map(|d| d / distance).collect())
        } else {
            None
        };
        Ok(ProjectionResult {
            projection,
            distance,
            direction,
        })
    }

    /// Cosine between a score vector at `x` and the inward normal direction
    /// (from `x` toward its projection).
    ///
    /// Values near 1 mean the score points straight back at the subspace.
    /// Fails when `x` lies on the subspace (no normal direction) or when the
    /// score is zero.
    pub fn inward_alignment(&self, x: &[f64], score: &[f64]) -> Result<f64> {
        if score.len() != self.ambient {
            return Err(Error::ShapeMismatch(format!(
                "expected score of dimension {}, got {}",
                self.ambient,
                score.len()
            )));
        }
        let projected = self.project(x)?;
        let Some(direction) = projected.direction else {
            return Err(Error::DegenerateInput(
                "point lies on the subspace; the normal direction is undefined".into(),
            ));
        };
        let norm = score.iter().map(|s| s * s).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Err(Error::DegenerateInput("score vector is zero".into()));
        }
        // Inward normal is the negation of the outward projection direction.
        let dot: f64 = score.iter().zip(&direction).map(|(s, d)| s * -d).sum();
        Ok(dot / norm)
    }

    /// Norm fraction of `vector` lying inside the subspace.
    ///
    /// Returns `|U U^T vector| / |vector|`, i.e. 0 for a purely normal vector
    /// and 1 for a purely tangential one. Fails on a zero vector.
    pub fn tangential_fraction(&self, vector: &[f64]) -> Result<f64> {
        if vector.len() != self.ambient {
            return Err(Error::ShapeMismatch(format!(
                "expected vector of dimension {}, got {}",
                self.ambient,
                vector.len()
            )));
        }
        let norm_sq = vector.iter().map(|v| v * v).sum::<f64>();
        if norm_sq <= 0.0 {
            return Err(Error::DegenerateInput("vector is zero".into()));
        }
        if self.intrinsic == 0 {
            return Ok(0.0);
        }
        let coords = self.basis.matvec_t(vector)?;
        let tangent_sq = coords.iter().map(|c| c * c).sum::<f64>();
        Ok((tangent_sq / norm_sq).sqrt())
    }

    /// Draws a unit vector uniformly from the normal space of the subspace.
    ///
    /// Fails when the normal space is trivial (`intrinsic == ambient`).
    pub fn random_normal_direction(&self, rng: &mut SeededRng) -> Result<Vec<f64>> {
        if self.intrinsic == self.ambient {
            return Err(Error::DegenerateInput(
                "full-rank model has no normal space".into(),
            ));
        }
        loop {
            let mut g = rng.normal_vec(self.ambient);
            if self.intrinsic > 0 {
                let coords = self.basis.matvec_t(&g)?;
                let tangent = self.basis.matvec(&coords)?;
                for (gi, ti) in g.iter_mut().zip(&tangent) {
                    *gi -= ti;
                }
            }
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm >= 1e-9 {
                for gi in &mut g {
                    *gi /= norm;
                }
                return Ok(g);
            }
        }
    }
}

/// Numerical rank of the span of a collection of vectors.
///
/// Forms the Gram matrix `G = sum_k s_k s_k^T`, diagonalizes it with Jacobi
/// rotations, and counts singular values (square roots of eigenvalues) above
/// `tolerance` times the largest. Fails when the collection is empty,
/// dimensions disagree, or every vector is zero.
pub fn numerical_rank(vectors: &[Vec<f64>], tolerance: f64) -> Result<usize> {
    let Some(first) = vectors.first() else {
        return Err(Error::InvalidArgument(
            "rank of an empty collection is undefined".into(),
        ));
    };
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "rank tolerance must lie in (0, 1), got {tolerance}"
        )));
    }
    let dim = first.len();
    if dim == 0 {
        return Err(Error::InvalidArgument("vectors must be non-empty".into()));
    }
    let mut gram = vec![0.0; dim * dim];
    for vector in vectors {
        if vector.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "mixed vector dimensions: {} and {dim}",
                vector.len()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rank input vector".into()));
        }
        for i in 0..dim {
            for j in i..dim {
                gram[i * dim + j] += vector[i] * vector[j];
            }
        }
    }
    for i in 0..dim {
        for j in 0..i {
            gram[i * dim + j] = gram[j * dim + i];
        }
    }
    let eigenvalues = symmetric_eigenvalues(&mut gram, dim);
    let max = eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return Err(Error::DegenerateInput(
            "all vectors are zero; rank is undefined".into(),
        ));
    }
    // Eigenvalues of the Gram matrix are squared singular values.
    let cutoff = tolerance * tolerance * max;
    Ok(eigenvalues.iter().filter(|&&lambda| lambda > cutoff).count())
}

/// Eigenvalues of a symmetric matrix via cyclic Jacobi rotations.
///
/// `matrix` is `n x n` row-major and is destroyed. Small negative values can
/// appear for positive semidefinite inputs; callers clamp as needed.
fn symmetric_eigenvalues(matrix: &mut [f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(matrix.len(), n * n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        let mut diag = 0.0;
        for p in 0..n {
            diag += matrix[p * n + p] * matrix[p * n + p];
            for q in (p + 1)..n {
                off += matrix[p * n + q] * matrix[p * n + q];
            }
        }
        if off.sqrt() <= 1e-14 * (diag.sqrt() + f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let apq = matrix[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (matrix[q * n + q] - matrix[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = matrix[k * n + p];
                    let akq = matrix[k * n + q];
                    matrix[k * n + p] = c * akp - s * akq;
                    matrix[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = matrix[p * n + k];
                    let aqk = matrix[q * n + k];
                    matrix[p * n + k] = c * apk - s * aqk;
                    matrix[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| matrix[i * n + i]).collect()
}

/// Provenance of a generated scene, stored alongside the cube on disk.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SceneMeta {
    /// Ambient (band) dimension of the generating model.
    pub ambient: usize,
    /// Intrinsic dimension of the generating model.
    pub intrinsic: usize,
    /// In-subspace variances of the generating model.
    pub eigenvalues: Vec<f64>,
    /// Number of implanted anomaly pixels.
    pub anomaly_count: usize,
    /// Normal-space offset distance of each implant (pre-rescale units).
    pub distance: f64,
    /// Minimum raw value before rescaling to `[0, 1]`.
    pub value_min: f64,
    /// Maximum raw value before rescaling to `[0, 1]`.
    pub value_max: f64,
    /// Seed of the generator stream that produced the scene.
    pub seed: u64,
}

/// A generated cube, its ground truth, and the generation record.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Band-sequential data cube with values rescaled to `[0, 1]`.
    pub cube: HsiCube,
    /// Ground truth: 1 at implanted pixels, 0 elsewhere.
    pub mask: GroundTruthMask,
    /// Generation record.
    pub meta: SceneMeta,
}

/// Generates a scene: background pixels drawn from the model, plus
/// `anomaly_count` distinct pixels pushed `distance` along random unit
/// directions in the normal space of the subspace.
///
/// All values are affinely rescaled to `[0, 1]` at the end; the original
/// extremes are recorded in the returned metadata. Fails when the anomaly
/// pixels would not fit, when the model has no normal space to offset into,
/// or when the scene is constant.
pub fn generate_scene(
    model: &GaussianSubspaceModel,
    height: usize,
    width: usize,
    anomaly_count: usize,
    distance: f64,
    rng: &mut SeededRng,
) -> Result<SyntheticScene> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "scene dimensions must be positive, got {height}x{width}"
        )));
    }
    let pixel_count = height * width;
    if anomaly_count >= pixel_count {
        return Err(Error::InvalidArgument(format!(
            "{anomaly_count} anomalies do not leave background in a {height}x{width} scene"
        )));
    }
    if anomaly_count > 0 {
        if !(distance.is_finite() && distance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "anomaly distance must be positive and finite, got {distance}"
            )));
        }
        if model.intrinsic() == model.ambient() {
            return Err(Error::DegenerateInput(
                "full-rank model has no normal space to implant anomalies in".into(),
            ));
        }
    }
    let bands = model.ambient();
    let mut spectra: Vec<Vec<f64>> = (0..pixel_count).map(|_| model.sample(rng)).collect();

    // Partial Fisher-Yates selection of distinct pixel indices.
    let mut indices: Vec<usize> = (0..pixel_count).collect();
    for i in 0..anomaly_count {
        let j = i + rng.below(pixel_count - i);
        indices.swap(i, j);
    }
    let mut labels = vec![0u8; pixel_count];
    for &pixel in &indices[..anomaly_count] {
        let direction = model.random_normal_direction(rng)?;
        for (value, dir) in spectra[pixel].iter_mut().zip(&direction) {
            *value += distance * dir;
        }
        labels[pixel] = 1;
    }

    let mut value_min = f64::INFINITY;
    let mut value_max = f64::NEG_INFINITY;
    for spectrum in &spectra {
        for &v in spectrum {
            value_min = value_min.min(v);
            value_max = value_max.max(v);
        }
    }
    let range = value_max - value_min;
    if !(range.is_finite() && range > 1e-12) {
        return Err(Error::DegenerateInput(format!(
            "scene values span a degenerate range [{value_min}, {value_max}]"
        )));
    }
    let mut values = vec![0.0; bands * pixel_count];
    for (pixel, spectrum) in spectra.iter().enumerate() {
        for (band, &v) in spectrum.iter().enumerate() {
            values[band * pixel_count + pixel] = (v - value_min) / range;
        }
    }
    Ok(SyntheticScene {
        cube: HsiCube::new(height, width, bands, values)?,
        mask: GroundTruthMask::new(height, width, labels)?,
        meta: SceneMeta {
            ambient: model.ambient(),
            intrinsic: model.intrinsic(),
            eigenvalues: model.eigenvalues().to_vec(),
            anomaly_count,
            distance,
            value_min,
            value_max,
            seed: rng.seed(),
        },
    })
}

/// Seed of the pinned reference scene.
pub const REFERENCE_SCENE_SEED: u64 = 7;

/// The pinned 32x32, 30-band reference scene used by the end-to-end checks:
/// a 4-dimensional subspace model (variance 0.01 per direction, centered at
/// 0.5 in every band) with 5 implanted anomalies at normal-space distance 0.5.
pub fn reference_scene() -> Result<SyntheticScene> {
    let mut rng = SeededRng::new(REFERENCE_SCENE_SEED, 0);
    let model = GaussianSubspaceModel::random(30, 4, vec![0.01; 4], vec![0.5; 30], &mut rng)?;
    generate_scene(&model, 32, 32, 5, 0.5, &mut rng)
}
