use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Nn(#[from] nn_core::NnError),
    #[error(transparent)]
    Cpc(#[from] cpc::TrainError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Slm(#[from] slm::SlmError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error("WAV: {0}")]
    Wav(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("config: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {reason}")]
    Stage { stage: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;
