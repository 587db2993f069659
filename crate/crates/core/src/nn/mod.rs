//! Minimal dense numerics: matrices, reverse-mode graph, Adam.

mod adam;
mod graph;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use graph::{Gradients, Graph, NodeId, ParamStore, StoreId};
pub use tensor::{dot, log_sum_exp, softmax, Matrix};
