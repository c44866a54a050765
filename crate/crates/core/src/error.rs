use thiserror::Error;

#[derive(Debug, Error)]
pub enum FarError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("basis dimension {dim} is invalid: {reason}")]
    InvalidDimension { dim: usize, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("predictor {0} does not exist")]
    UnknownPredictor(usize),

    #[error("degenerate index range [{lower}, {upper}]")]
    DegenerateIndex { lower: f64, upper: f64 },

    #[error("invalid tuning configuration: {0}")]
    InvalidTuning(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FarError>;
