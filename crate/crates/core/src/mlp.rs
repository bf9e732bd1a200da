//! Flat parameter layouts and forward passes for tanh multilayer perceptrons.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
}

/// Location of one weight matrix or bias vector inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutEntry {
    pub layer: usize,
    pub role: Role,
    /// `[rows, cols]`; weights are `[in, out]` row-major, biases `[1, out]`.
    pub shape: [usize; 2],
    pub offset: usize,
}

impl LayoutEntry {
    pub fn size(&self) -> usize {
        self.shape[0] * self.shape[1]
    }
}

/// Canonical flat layout of a fully connected network: for every layer the
/// weight matrix followed by its bias, layers in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightLayout {
    entries: Vec<LayoutEntry>,
    len: usize,
}

impl WeightLayout {
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input);
        dims.extend_from_slice(hidden);
        dims.push(output);
        let mut entries = Vec::with_capacity(2 * (dims.len() - 1));
        let mut offset = 0;
        for (layer, pair) in dims.windows(2).enumerate() {
            let (i, o) = (pair[0], pair[1]);
            entries.push(LayoutEntry { layer, role: Role::Weight, shape: [i, o], offset });
            offset += i * o;
            entries.push(LayoutEntry { layer, role: Role::Bias, shape: [1, o], offset });
            offset += o;
        }
        Self { entries, len: offset }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn layer_count(&self) -> usize {
        self.entries.len() / 2
    }

    pub fn weight(&self, layer: usize) -> &LayoutEntry {
        &self.entries[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &LayoutEntry {
        &self.entries[2 * layer + 1]
    }

    pub fn input_dim(&self) -> usize {
        self.weight(0).shape[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight(self.layer_count() - 1).shape[1]
    }

    pub fn check(&self, params_len: usize) -> Result<()> {
        if params_len != self.len {
            return Err(Error::LayoutMismatch { expected: self.len, got: params_len });
        }
        Ok(())
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init<T: Real, R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<T> {
        let mut out = vec![T::zero(); self.len];
        for e in self.entries.iter().filter(|e| e.role == Role::Weight) {
            let limit = (6.0 / (e.shape[0] + e.shape[1]) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("valid bounds");
            for v in &mut out[e.offset..e.offset + e.size()] {
                *v = T::lit(dist.sample(rng));
            }
        }
        out
    }
}

/// Weight and bias slices of every layer, taken once from a parameter row
/// block (`[1, len]` shared or `[B, len]` per batch row).
pub struct LayerSlices<V> {
    pub weights: Vec<V>,
    pub biases: Vec<V>,
}

impl<V: Clone> LayerSlices<V> {
    pub fn take<T: Real, G: Graph<T, Var = V>>(
        g: &mut G,
        params: &V,
        layout: &WeightLayout,
    ) -> Result<Self> {
        let (_, cols) = g.value(params).dims2();
        layout.check(cols)?;
        let mut weights = Vec::with_capacity(layout.layer_count());
        let mut biases = Vec::with_capacity(layout.layer_count());
        for l in 0..layout.layer_count() {
            let w = layout.weight(l);
            weights.push(g.slice_cols(params, w.offset, w.size())?);
            let b = layout.bias(l);
            biases.push(g.slice_cols(params, b.offset, b.size())?);
        }
        Ok(Self { weights, biases })
    }
}

/// Tanh hidden layers, linear output.
pub fn mlp_forward<T: Real, G: Graph<T>>(
    g: &mut G,
    layers: &LayerSlices<G::Var>,
    input: &G::Var,
) -> Result<G::Var> {
    let n = layers.weights.len();
    let mut h = input.clone();
    for l in 0..n {
        let pre = g.batched_matvec(&h, &layers.weights[l])?;
        let pre = g.add(&pre, &layers.biases[l])?;
        h = if l + 1 < n { g.tanh(&pre)? } else { pre };
    }
    Ok(h)
}
