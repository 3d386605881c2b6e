use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlmError {
    #[error(transparent)]
    Nn(#[from] nn_core::NnError),
    #[error("unit {unit} outside vocabulary of {k} units")]
    UnknownUnit { unit: usize, k: usize },
    #[error("sequence length {len} exceeds maximum {max}")]
    TooLong { len: usize, max: usize },
    #[error("masked batch contains no target positions")]
    NoTargets,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SlmError>;
