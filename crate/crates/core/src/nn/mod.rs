//! Minimal deterministic dense-network engine.

pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod matrix;
pub mod optim;
pub mod stack;

pub use gradcheck::{grad_check, GradCheckReport};
pub use layer::{Activation, LayerGrad, LinearLayer};
pub use loss::{cross_entropy, cross_entropy_grad, kl_divergence, softmax, softmax_backward, PROB_EPS};
pub use matrix::Matrix;
pub use optim::{cosine_lr, SgdConfig, SgdState};
pub use stack::{backward_refs, backward_stack, forward_refs, forward_stack, predict_refs, GradientTape, StackGradients};
