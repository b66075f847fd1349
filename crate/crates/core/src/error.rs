//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("degenerate vector: norm {norm:e} below threshold")]
    DegenerateVector { norm: f64 },

    #[error("degenerate set: rank 0 after orthonormalization")]
    DegenerateSet,

    #[error("insufficient candidates: need at least {needed}, got {got}")]
    InsufficientCandidates { needed: usize, got: usize },

    #[error("data shortage: {0}")]
    DataShortage(String),

    #[error("parse error in {path} at byte {offset}: {message}")]
    Parse {
        path: String,
        offset: u64,
        message: String,
    },

    #[error("value error: {0}")]
    Value(String),

    #[error("projection failed to converge: max dual update {residual:e} after {sweeps} sweeps")]
    Convergence { residual: f64, sweeps: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
