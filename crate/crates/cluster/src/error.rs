use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Nn(#[from] nn_core::NnError),
    #[error("need at least {k} distinct points, found {distinct}")]
    TooFewDistinct { distinct: usize, k: usize },
    #[error("feature dimension {got} does not match centroid dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("utterance `{utt}`: {labels} labels but {frames} encoder frames")]
    LabelLengthMismatch {
        utt: String,
        labels: usize,
        frames: usize,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unit file line {line}: {reason}")]
    UnitFile { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ClusterError>;
