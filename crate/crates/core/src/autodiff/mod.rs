//! Minimal reverse-mode automatic differentiation.
//!
//! Only the operations the navigation models need: affine maps, 1-D
//! convolutions, layer norm, activations, row gathers and segment attention.
//! Losses are computed by the callers, which hand the loss gradient of the
//! network output to [`Graph::backward`].

mod checkpoint;
mod graph;
mod layers;
mod optim;
mod tensor;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint, MAGIC, VERSION};
pub use graph::{sigmoid, softmax_in_place, Graph, Var};
pub use layers::{
    Conv1d, ConvEncoder, Embedding, Layer, LayerNorm, LayerSpec, Linear, MemoryRows,
    MultiHeadAttention, Sequential, CONV_LADDER,
};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use tensor::{Gradients, Param, ParamId, ParamStore, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("backward called without a fresh forward pass")]
    NoForwardPass,
    #[error("parameter {0} has no gradient")]
    MissingGradient(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
