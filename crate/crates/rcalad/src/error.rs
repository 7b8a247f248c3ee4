//! One error type for the whole crate.
//!
//! Variants are grouped by what went wrong rather than by module, so callers
//! can match on the failure class without caring which layer raised it.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two tensor shapes that an operation required to agree did not.
    #[error("shape mismatch in `{op}`: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// A parameter was outside its documented range, or a structural rule
    /// (layer widths, network arity, matching run counts) was violated.
    #[error("{0}")]
    Invalid(String),

    /// Batch statistics are undefined on a single row in training mode.
    #[error("batch of size {n} is too small for batch norm in training mode; need at least 2 rows")]
    DegenerateBatch { n: usize },

    /// A loss term stopped being finite during training.
    #[error("non-finite value in loss term `{term}` at step {step}")]
    NonFinite { term: &'static str, step: u64 },

    /// The requested anomaly score needs a discriminator this variant disables.
    #[error("score `{score}` requires the `{needs}` discriminator, which is disabled")]
    ScoreUnavailable {
        score: &'static str,
        needs: &'static str,
    },

    /// A data file did not match its schema. Rows are 1-based and count the
    /// header, matching what an editor shows.
    #[error("row {row}: {what}")]
    Ingest { row: usize, what: String },

    /// Bad experiment configuration, including unknown keys.
    #[error("config error: {0}")]
    Config(String),

    /// A statistic was asked of fewer observations than it is defined for.
    #[error("not enough data for {what}: need at least {need}, have {have}")]
    Insufficient {
        what: &'static str,
        need: usize,
        have: usize,
    },

    /// A checkpoint file was unreadable, truncated, or of the wrong version.
    #[error("checkpoint {path}: {what}")]
    Checkpoint { path: String, what: String },

    /// An I/O failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short code for machine-readable output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Invalid(_) => "invalid",
            Error::DegenerateBatch { .. } => "degenerate_batch",
            Error::NonFinite { .. } => "non_finite",
            Error::ScoreUnavailable { .. } => "score_unavailable",
            Error::Ingest { .. } => "ingest",
            Error::Config(_) => "config",
            Error::Insufficient { .. } => "insufficient_data",
            Error::Checkpoint { .. } => "checkpoint",
            Error::Io { .. } => "io",
        }
    }
}

/// Attaches a path to `std::io` errors, which otherwise drop it.
pub fn io_err(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
