//! Dense matrices, a gradient tape over them, and the optimizer primitives.

mod kernels;
mod matrix;
mod optim;
mod tape;

pub use kernels::{layer_norm, masked_softmax_rows, softmax_rows};
pub use matrix::{Mask, Matrix};
pub use optim::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
pub use tape::{Gradients, Graph, NodeId, Reduction};
