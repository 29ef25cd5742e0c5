//! Dense-network engine: forward pass, KL loss, reverse-mode gradients and
//! exact second-order products through recorded update unrolls.

pub mod matrix;
pub mod mlp;
pub mod model;
pub mod scalar;
pub mod tape;

pub use matrix::Matrix;
pub use mlp::{accuracy, cross_entropy, evaluate, forward, grad, kl_loss, loss_and_grad, SecondOrder};
pub use model::{Activation, ArchDescriptor, ModelParams};
pub use tape::{GradTape, InnerObjective, LeafGrads, LeafId, ZERO_NORM_FLOOR};
