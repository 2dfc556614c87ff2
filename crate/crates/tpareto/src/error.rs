//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("gradient dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),

    #[error("all-modal gradient is zero for module {0}")]
    ZeroAllModalGradient(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("grid enumeration infeasible: {0}")]
    OracleInfeasible(String),

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
