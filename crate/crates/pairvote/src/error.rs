use thiserror::Error;

/// Errors surfaced by the estimation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point pair is degenerate (separation {separation:.3e} m <= {limit:.0e} m)")]
    DegeneratePair { separation: f64, limit: f64 },

    #[error("cloud has {got} points but the operation needs at least {need}")]
    CloudTooSmall { need: usize, got: usize },

    #[error("geometry is degenerate: {0}")]
    DegenerateGeometry(String),

    #[error("rotation matrix is not orthonormal (max deviation {0:.3e})")]
    NotARotation(f64),

    #[error("scale components must be positive, got ({0}, {1}, {2})")]
    NonPositiveScale(f64, f64, f64),

    #[error("feature dimension mismatch: model expects {expected}, input has {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("view is empty: no mesh surface projects into the image")]
    EmptyView,

    #[error("non-finite value encountered during {0}")]
    NonFinite(String),

    #[error("checkpoint is malformed: {0}")]
    BadCheckpoint(String),

    #[error("ground truth is required for the oracle predictor but missing")]
    MissingGroundTruth,

    #[error("prediction/ground-truth id mismatch: {0}")]
    IdMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error in {path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
