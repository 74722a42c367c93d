//! Reverse-mode automatic differentiation over dense tensors.
//!
//! Gradients are built from the same differentiable operations as the forward
//! pass, so `grad(.., create_graph = true)` yields a graph that can be
//! differentiated again (needed for gradient-norm penalties).

mod float;
pub mod gradcheck;
pub mod kernels;
pub mod ops;
mod tensor;
mod var;

pub use float::Float;
pub use kernels::ConvGeom;
pub use tensor::Tensor;
pub use var::{grad, grad_enabled, grad_with_seed, no_grad, NoGradGuard, Var};
