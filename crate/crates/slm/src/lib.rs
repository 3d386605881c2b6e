//! Masked language model over discrete speech units: span masking, the
//! bidirectional Transformer encoder, MLM training, and pseudo-log-likelihood
//! scoring for the lexical/syntactic metrics.

pub mod config;
pub mod error;
pub mod loss;
pub mod mask;
pub mod model;
pub mod score;
pub mod train;

pub use config::SlmConfig;
pub use error::{Result, SlmError};
pub use loss::mlm_loss;
pub use mask::{mask_batch, wrap, MaskedSequence};
pub use model::SlmModel;
pub use score::{pseudo_prob, pseudo_prob_with, ScoredSequence};
pub use train::{train_slm, SlmOutcome, SlmTrainOptions};
