//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by this crate.
///
/// Variants are grouped by the CLI exit code they map to: invalid caller input
/// (usage, code 1), data loading/validation problems (code 2), and numeric or
/// training failures (code 3).
#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed an argument outside an operation's contract
    /// (non-positive regularizer, out-of-range fraction, unknown kernel
    /// string, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dataset-level problem: unreadable rows, missing columns, fewer than
    /// two rows after cleaning, or a group/label invariant violation.
    #[error("data error: {0}")]
    Data(String),

    /// I/O failure with the offending path attached.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed CSV content.
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// (De)serialization failure for models or reports.
    #[error("serialization error: {0}")]
    Serialization(String),

    /// Numeric breakdown: non-PSD quadratic term beyond jitter, singular
    /// linear system, non-finite intermediate values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// No point satisfies the constraints (empty box, or the hyperplane
    /// misses the box).
    #[error("infeasible constraints: {0}")]
    Infeasible(String),

    /// A fitted model came out unusable (all-zero dual, zero weight-vector
    /// norm, all-zero local surrogate).
    #[error("degenerate model: {0}")]
    Degenerate(String),

    /// Iterative training failed; records which outer iteration broke.
    #[error("training failed at iteration {iteration}: {source}")]
    Training {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    /// A counterfactual was requested but cannot be constructed.
    #[error("flipset unavailable: {0}")]
    FlipsetUnavailable(String),

    /// Model selection could not produce a usable grid point.
    #[error("cross-validation failed: {0}")]
    CrossValidation(String),

    /// The re-weighting pipeline failed; `stage` names the failing step.
    #[error("equalization failed at stage '{stage}': {source}")]
    Equalization {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Too many repeated runs of an experiment failed to report statistics.
    #[error("experiment failed: {0}")]
    Experiment(String),
}

impl Error {
    /// Wraps an I/O error with the path being touched.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a CSV error with the file being read or written.
    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    /// Tags an error with the equalization stage it occurred in.
    pub fn at_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Equalization {
            stage,
            source: Box::new(source),
        }
    }

    /// Tags an error with the outer training iteration it occurred in.
    pub fn at_iteration(iteration: usize) -> impl FnOnce(Error) -> Error {
        move |source| Error::Training {
            iteration,
            source: Box::new(source),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
