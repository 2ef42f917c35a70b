//! Tape-based reverse-mode automatic differentiation over dense row-major
//! tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a result walks the tape in reverse and returns the
//! gradients of all leaves created with [`Graph::param`]. Constants created
//! with [`Graph::constant`] receive no gradient, but gradients still flow
//! through the operations that consume them.
//!
//! The scalar type is generic over [`Real`] so the same network code can run
//! in `f32` for training and in `f64` for finite-difference verification.

mod graph;
pub mod kernels;
mod real;
mod tensor;

pub use graph::{look_at_frame, Gradients, Graph, Unary, Var};
pub use real::{lit, Real};
pub use tensor::Tensor;
