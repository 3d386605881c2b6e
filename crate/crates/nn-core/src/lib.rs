//! Minimal dense-tensor numerics with reverse-mode automatic differentiation
//! and the layer primitives shared by the acoustic model, the clustering
//! classifier and the spoken LM.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
pub mod tensor;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use error::{NnError, Result};
pub use gradcheck::{gradcheck, gradcheck_strict, GradCheckReport, LossFragment};
pub use graph::{Grads, Graph, NodeId};
pub use init::Initializer;
pub use layers::{
    dropout, Activation, Bound, ChannelNorm, Conv1d, ConvModule, Ffn, HasParams, LayerConfig,
    LayerNorm, Linear, Lstm, Mhsa, Mode,
};
pub use tensor::Tensor;
