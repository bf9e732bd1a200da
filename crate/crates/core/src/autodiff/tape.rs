use crate::error::{Error, Result};
use crate::scalar::Real;

use super::graph::Graph;
use super::ops::{self, OpKind};
use super::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A tensor together with a flag saying whether gradients are wanted for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Real = f64> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

impl<T: Real> Parameter<T> {
    pub fn trainable(tensor: Tensor<T>) -> Self {
        Self { tensor, trainable: true }
    }

    pub fn frozen(tensor: Tensor<T>) -> Self {
        Self { tensor, trainable: false }
    }
}

#[derive(Debug)]
enum Origin<T: Real> {
    Leaf,
    Op { op: OpKind<T>, parents: Vec<usize> },
}

#[derive(Debug)]
struct Node<T: Real> {
    origin: Origin<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Define-by-run record of operations. Nodes are appended in evaluation
/// order, so parents always precede their consumers.
#[derive(Debug)]
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Trainable leaves receive gradients in [`Tape::backward`].
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        self.push_leaf(p.tensor.clone(), p.trainable)
    }

    /// Records a trainable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            origin: Origin::Leaf,
            value,
            requires_grad: trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar output. Gradients accumulate where a node
    /// feeds several consumers.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out = &self.nodes[output.0];
        if !out.value.is_scalar() {
            return Err(Error::NonScalarOutput(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out.value.shape().to_vec(), T::one()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            let Origin::Op { op, parents } = &node.origin else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<T>> = parents.iter().map(|&p| &self.nodes[p].value).collect();
            let parts = ops::vjp(op, &inputs, &node.value, &g);
            grads[idx] = Some(g);
            for (&p, part) in parents.iter().zip(parts) {
                if !self.nodes[p].requires_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(part.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(part),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<T: Real> Graph<T> for Tape<T> {
    type Var = Var;

    fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    fn apply(&mut self, op: OpKind<T>, inputs: &[&Var]) -> Result<Var> {
        let value = {
            let tensors: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            ops::forward(&op, &tensors)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            origin: Origin::Op {
                op,
                parents: inputs.iter().map(|v| v.0).collect(),
            },
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn value<'a>(&'a self, var: &'a Var) -> &'a Tensor<T> {
        &self.nodes[var.0].value
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients<T: Real = f64> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the output with respect to `var`, if it depends on a
    /// trainable leaf and was reached by the sweep.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `var`, or zeros when the output does not depend on it.
    pub fn wrt(&self, tape: &Tape<T>, var: Var) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros_like(tape.value(&var)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::scalar(3.0));
        let y = tape.square(&w).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 6.0);
        assert_eq!(g.get(y).unwrap().item(), 1.0);
    }

    #[test]
    fn sum_tanh_at_zero_gives_ones() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::zeros(vec![5]));
        let t = tape.tanh(&w).unwrap();
        let s = tape.sum(&t).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[1.0; 5]);
    }

    #[test]
    fn fan_out_accumulates() {
        // f = w*w + w, f'(2) = 5
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::scalar(2.0));
        let sq = tape.mul(&w, &w).unwrap();
        let f = tape.add(&sq, &w).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.get(w).unwrap().item(), 5.0);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut tape = Tape::<f64>::new();
        let w = tape.leaf(Tensor::zeros(vec![3]));
        let t = tape.tanh(&w).unwrap();
        assert!(matches!(tape.backward(t), Err(Error::NonScalarOutput(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(4.0));
        let w = tape.leaf(Tensor::scalar(1.5));
        let p = tape.mul(&c, &w).unwrap();
        let g = tape.backward(p).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(w).unwrap().item(), 4.0);
        assert_eq!(g.wrt(&tape, c).item(), 0.0);
    }
}
