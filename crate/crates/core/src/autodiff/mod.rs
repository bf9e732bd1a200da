//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records operations as they run (define-by-run) and is rebuilt
//! for every evaluation. [`Eager`] evaluates the same operations without
//! recording, for inference paths that never need gradients.

mod gradcheck;
mod graph;
mod ops;
mod tape;
mod tensor;

pub use gradcheck::{analytic_gradient, grad_check, numeric_gradient};
pub use graph::{forward_op, Eager, Graph};
pub use ops::{forward, vjp, OpKind};
pub use tape::{Gradients, Parameter, Tape, Var};
pub use tensor::Tensor;
