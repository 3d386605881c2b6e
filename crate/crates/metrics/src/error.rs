use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty input: {0}")]
    Empty(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("undefined correlation: {0}")]
    Undefined(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;
