//! The CPC acoustic model: encoder, autoregressive aggregator, per-step
//! prediction heads (Transformer or Conformer), negative sampling, the NCE
//! objective, the training loop and feature extraction.

pub mod config;
pub mod features;
pub mod loss;
pub mod model;
pub mod negatives;
pub mod train;

pub use config::{CpcConfig, HeadKind};
pub use features::{extract_features, read_feature_file, write_feature_file, FeatureLayer};
pub use loss::nce_loss;
pub use model::{
    ConformerBlock, ConformerTrace, CpcBase, CpcModel, HeadBlock, PredictionHead, TransformerBlock,
};
pub use negatives::{sample_negatives, NegativeSet};
pub use train::{
    smoothed_trace, train_cpc, train_cpc_with_probe, TrainError, TrainOptions, TrainOutcome,
};
