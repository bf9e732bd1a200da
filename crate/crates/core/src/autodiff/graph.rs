use crate::error::Result;
use crate::scalar::Real;

use super::ops::{self, OpKind};
use super::tensor::Tensor;

/// A computation context that evaluates operations, either recording them for
/// differentiation ([`Tape`](super::Tape)) or computing values directly
/// ([`Eager`]). Model code is written once against this trait.
pub trait Graph<T: Real> {
    type Var: Clone;

    /// Introduces a value that gradients do not flow into.
    fn constant(&mut self, value: Tensor<T>) -> Self::Var;

    fn apply(&mut self, op: OpKind<T>, inputs: &[&Self::Var]) -> Result<Self::Var>;

    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Tensor<T>;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Matmul, &[a, b])
    }
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Add, &[a, b])
    }
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Sub, &[a, b])
    }
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Mul, &[a, b])
    }
    fn tanh(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Tanh, &[a])
    }
    fn sum(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Sum, &[a])
    }
    fn row_sum(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::RowSum, &[a])
    }
    fn concat(&mut self, parts: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(OpKind::Concat, parts)
    }
    fn scale(&mut self, a: &Self::Var, c: T) -> Result<Self::Var> {
        self.apply(OpKind::Scale(c), &[a])
    }
    fn shift(&mut self, a: &Self::Var, c: T) -> Result<Self::Var> {
        self.apply(OpKind::Shift(c), &[a])
    }
    fn neg(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Neg, &[a])
    }
    fn exp(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Exp, &[a])
    }
    fn log(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Log, &[a])
    }
    fn softmax(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Softmax, &[a])
    }
    fn log_softmax(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::LogSoftmax, &[a])
    }
    fn logsumexp(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::LogSumExp, &[a])
    }
    fn square(&mut self, a: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::Square, &[a])
    }
    fn slice_cols(&mut self, a: &Self::Var, start: usize, len: usize) -> Result<Self::Var> {
        self.apply(OpKind::SliceCols { start, len }, &[a])
    }
    fn batched_matvec(&mut self, h: &Self::Var, w: &Self::Var) -> Result<Self::Var> {
        self.apply(OpKind::BatchedMatVec, &[h, w])
    }
}

/// Direct evaluation without recording; used for inference and quadrature.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Real> Graph<T> for Eager {
    type Var = Tensor<T>;

    fn constant(&mut self, value: Tensor<T>) -> Tensor<T> {
        value
    }

    fn apply(&mut self, op: OpKind<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        ops::forward(&op, inputs)
    }

    fn value<'a>(&'a self, var: &'a Tensor<T>) -> &'a Tensor<T> {
        var
    }
}

/// Evaluates a single operation on concrete tensors.
pub fn forward_op<T: Real>(op: OpKind<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    ops::forward(&op, inputs)
}
