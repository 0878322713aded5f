//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by the
//! way callers react to them: configuration problems (caller bug or bad
//! flags), data problems (unusable inputs on disk or dimension mismatches),
//! numerical failure during optimization, and the special single-class
//! ground-truth case that makes every ROC quantity undefined.

use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A parameter or configuration value is invalid (bad window sizes,
    /// out-of-range times, zero batch size, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two objects that must agree in shape do not (band counts, matrix
    /// dimensions, channel counts, ...).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Input data is structurally valid but unusable (constant cube,
    /// all-zero score set, empty class, ...).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// A non-finite value (NaN or infinity) appeared where finite data is
    /// required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training produced a non-finite loss or gradient and was aborted.
    /// Carries the per-epoch mean losses observed before the failure so a
    /// partial report survives the abort.
    #[error("training diverged at step {step}")]
    Diverged {
        /// Optimization step (0-based) at which the failure was detected.
        step: usize,
        /// Mean loss of each completed epoch before the divergence.
        epoch_losses: Vec<f64>,
    },

    /// A file has the wrong magic, version, header fields, or payload size.
    #[error("format error in {path}: {reason}")]
    Format {
        /// Offending file.
        path: PathBuf,
        /// Human-readable description of the problem.
        reason: String,
    },

    /// An underlying I/O operation failed; the path is always included.
    #[error("i/o error on {path}: {source}")]
    Io {
        /// Offending file.
        path: PathBuf,
        /// The OS-level error.
        source: std::io::Error,
    },

    /// The ground-truth mask contains only one class, so detection metrics
    /// are undefined.
    #[error("single-class ground truth: {0}")]
    SingleClass(String),
}

impl Error {
    /// Convenience constructor for [`Error::Io`].
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Convenience constructor for [`Error::Format`].
    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
