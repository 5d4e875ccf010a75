//! Deterministic dense math: matrices, a reverse-mode tape, transformer
//! blocks, cross-entropy, Adam and the warm-up schedule.

pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layers;
mod matrix;
pub mod ops;
mod optim;
mod scalar;
mod tensor;

pub use graph::{Gradients, Graph, Var, LAYER_NORM_EPS};
pub use matrix::{Mask, Matrix};
pub use ops::{
    argmax, cross_entropy_loss, feed_forward, multi_head_attention, residual_layer_norm, softmax,
    AttentionParams,
};
pub use optim::{adam_step, lr_schedule, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use scalar::Scalar;
pub use tensor::{ParameterStore, Tensor};
