use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("input length {len} shorter than minimum {min}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    InputTooShort {
        len: usize,
        min: usize,
        context: Option<String>,
    },
    #[error("invalid layer config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite value produced by `{0}`")]
    NonFiniteValue(String),
    #[error("gradient check failed: {failures} of {total} components exceeded tolerance {tolerance}; worst `{worst_param}` analytic {analytic} vs numeric {numeric} (rel {rel})")]
    GradCheckFailed {
        failures: usize,
        total: usize,
        tolerance: f64,
        worst_param: String,
        analytic: f64,
        numeric: f64,
        rel: f64,
    },
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;
