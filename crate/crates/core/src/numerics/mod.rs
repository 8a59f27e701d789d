//! Minimal dense-tensor arithmetic with reverse-mode gradient accumulation.

pub mod graph;
pub mod params;
pub mod tensor;

pub use graph::{Gradients, Graph, NodeId, RunMode};
pub use params::{init_embedding, init_matrix, Param, ParameterStore};
pub use tensor::{argmax_slice, logsumexp_slice, softmax_slice, Tensor};
