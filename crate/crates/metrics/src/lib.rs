//! Zero-shot evaluations over learned speech representations: ABX phone
//! discriminability with DTW alignment, paired lexical/syntactic accuracy,
//! similarity correlation, and the canonical report format.

pub mod abx;
pub mod dtw;
pub mod error;
pub mod report;
pub mod scores;

pub use abx::{abx_error, abx_error_with, AbxItem, AbxMode, AbxReport};
pub use dtw::{angular_distance, dtw_distance};
pub use error::{MetricsError, Result};
pub use report::MetricReport;
pub use scores::{
    cosine_similarity, pair_accuracy, spearman_rho, word_embedding, SimilarityRecord, StimulusPair,
};
