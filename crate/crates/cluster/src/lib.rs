//! Quantization of acoustic features into discrete pseudo-subword units:
//! k-means fitting/assignment, the deep-cluster classification stage, the
//! second clustering round, and the unit file format.

pub mod deep;
pub mod error;
pub mod kmeans;
pub mod units;

pub use deep::{
    dc_loss, second_round, train_deep_cluster, DcConfig, DcModel, DcOutcome, DcTrainOptions,
};
pub use error::{ClusterError, Result};
pub use kmeans::{assign, kmeans_fit, KMeansModel};
pub use units::{purity, read_units, write_units};
