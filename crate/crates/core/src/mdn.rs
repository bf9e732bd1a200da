//! Mixture density network baseline: an MLP mapping `x` to the weights,
//! means and isotropic scales of a `k`-component Gaussian mixture over `y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Eager, Graph, Tensor};
use crate::error::{invalid, Result};
use crate::mlp::{mlp_forward, LayerSlices, WeightLayout};
use crate::model::{ConditionVector, ConditionalModel, ModelKind, Scaling};
use crate::scalar::Real;

/// Gaussian mixture with isotropic components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T: Real = f64> {
    weights: Vec<T>,
    /// `k * d`, component-major.
    means: Vec<T>,
    scales: Vec<T>,
    dim: usize,
}

impl<T: Real> MixtureParams<T> {
    pub fn new(weights: Vec<T>, means: Vec<Vec<T>>, scales: Vec<T>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || scales.len() != k {
            return Err(invalid("mixture needs k >= 1 weights, means and scales of equal count"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(invalid("component means must share a positive dimension"));
        }
        let total: T = weights.iter().copied().sum();
        if weights.iter().any(|&w| w < T::zero()) || (total - T::one()).abs() > T::lit(1e-9) {
            return Err(invalid("mixture weights must be non-negative and sum to 1"));
        }
        if scales.iter().any(|&s| !(s > T::zero() && s.is_finite())) {
            return Err(invalid("component scales must be positive"));
        }
        Ok(Self { weights, means: means.concat(), scales, dim })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mean(&self, j: usize) -> &[T] {
        &self.means[j * self.dim..(j + 1) * self.dim]
    }

    pub fn scales(&self) -> &[T] {
        &self.scales
    }
}

/// `log Σ_j π_j N(y; μ_j, σ_j² I)`, evaluated with log-sum-exp.
pub fn mixture_log_prob<T: Real>(params: &MixtureParams<T>, y: &[T]) -> Result<T> {
    if y.len() != params.dim {
        return Err(invalid(format!("point has {} coordinates, mixture has {}", y.len(), params.dim)));
    }
    let d = T::count(params.dim);
    let half_log_2pi = T::lit(0.5) * (T::lit(2.0) * T::PI()).ln();
    let terms: Vec<T> = (0..params.components())
        .map(|j| {
            let sigma = params.scales[j];
            let sq: T = params.mean(j).iter().zip(y).map(|(&m, &v)| (v - m) * (v - m)).sum();
            params.weights[j].ln() - T::lit(0.5) * sq / (sigma * sigma) - d * (sigma.ln() + half_log_2pi)
        })
        .collect();
    let mx = terms.iter().copied().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return Ok(mx);
    }
    Ok(mx + terms.iter().map(|&t| (t - mx).exp()).sum::<T>().ln())
}

/// Draws `n` points: a component by its weight, then a Gaussian draw.
pub fn mdn_sample<T: Real>(params: &MixtureParams<T>, n: usize, seed: u64) -> Result<Tensor<T>> {
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cumulative = Vec::with_capacity(params.components());
    let mut acc = 0.0;
    for w in &params.weights {
        acc += w.as_f64();
        cumulative.push(acc);
    }
    let d = params.dim;
    let mut out = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u: f64 = rng.random::<f64>() * acc;
        let j = cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or_else(|| params.weights.iter().rposition(|w| *w > T::zero()).unwrap_or(0));
        for c in 0..d {
            let e: f64 = StandardNormal.sample(&mut rng);
            out.push(params.mean(j)[c] + params.scales[j] * T::lit(e));
        }
    }
    Tensor::matrix(n, d, out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdnConfig {
    pub cond_dim: usize,
    pub target_dim: usize,
    pub components: usize,
    pub hidden_widths: Vec<usize>,
}

impl MdnConfig {
    pub fn new(cond_dim: usize, target_dim: usize, components: usize) -> Self {
        Self { cond_dim, target_dim, components, hidden_widths: vec![64, 64] }
    }

    /// `k` logits, `k * d` means and `k` log-scales.
    pub fn head_width(&self) -> usize {
        self.components * (self.target_dim + 2)
    }

    fn layout(&self) -> Result<WeightLayout> {
        if self.cond_dim == 0 || self.target_dim == 0 || self.components == 0 {
            return Err(invalid("MDN dimensions and component count must be positive"));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(invalid("MDN hidden widths must be positive"));
        }
        Ok(WeightLayout::mlp(self.cond_dim, &self.hidden_widths, self.head_width()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mdn<T: Real = f64> {
    weights: Vec<T>,
    layout: WeightLayout,
    config: MdnConfig,
    scaling: Scaling<T>,
}

impl<T: Real> Mdn<T> {
    pub fn zeros(config: MdnConfig) -> Result<Self> {
        let layout = config.layout()?;
        let scaling = Scaling::identity(config.cond_dim, config.target_dim);
        Ok(Self { weights: vec![T::zero(); layout.len()], layout, config, scaling })
    }

    pub fn init(config: MdnConfig, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.weights = net.layout.init(&mut rng);
        Ok(net)
    }

    pub fn from_parts(config: MdnConfig, scaling: Scaling<T>, weights: Vec<T>) -> Result<Self> {
        let layout = config.layout()?;
        layout.check(weights.len())?;
        scaling.validate(config.cond_dim, config.target_dim)?;
        Ok(Self { weights, layout, config, scaling })
    }

    pub fn with_scaling(mut self, scaling: Scaling<T>) -> Result<Self> {
        scaling.validate(self.config.cond_dim, self.config.target_dim)?;
        self.scaling = scaling;
        Ok(self)
    }

    pub fn config(&self) -> &MdnConfig {
        &self.config
    }

    pub fn scaling(&self) -> &Scaling<T> {
        &self.scaling
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    fn head<G: Graph<T>>(&self, g: &mut G, params: &G::Var, xs: &G::Var) -> Result<G::Var> {
        let layers = LayerSlices::take(g, params, &self.layout)?;
        mlp_forward(g, &layers, xs)
    }

    /// Mixture over raw targets for one conditioning vector.
    pub fn mdn_forward(&self, x: &ConditionVector<T>) -> Result<MixtureParams<T>> {
        self.check_x(x)?;
        let xs = self.scaling.normalize_x(&Tensor::row(x.as_slice().to_vec()))?;
        let mut g = Eager;
        let out = self.head(&mut g, &Tensor::row(self.weights.clone()), &xs)?;
        let (k, d) = (self.config.components, self.config.target_dim);
        let logits = Tensor::row(out.data()[..k].to_vec());
        let weights = crate::autodiff::forward_op(crate::autodiff::OpKind::Softmax, &[&logits])?.into_data();
        let y_scale = self.scaling.y_scale[0];
        let means = (0..k)
            .map(|j| {
                (0..d)
                    .map(|c| self.scaling.y_shift[c] + self.scaling.y_scale[c] * out.data()[k + j * d + c])
                    .collect()
            })
            .collect();
        let scales = (0..k).map(|j| out.data()[k + k * d + j].exp() * y_scale).collect();
        MixtureParams::new(weights, means, scales)
    }
}

impl<T: Real> ConditionalModel<T> for Mdn<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::Mdn
    }

    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn target_dim(&self) -> usize {
        self.config.target_dim
    }

    fn params(&self) -> &[T] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    fn log_prob_graph<G: Graph<T>>(
        &self,
        g: &mut G,
        params: &G::Var,
        xs: &Tensor<T>,
        ys: &Tensor<T>,
    ) -> Result<G::Var> {
        let (k, d) = (self.config.components, self.config.target_dim);
        let xs = g.constant(self.scaling.normalize_x(xs)?);
        let ys = g.constant(self.scaling.normalize_y(ys)?);
        let out = self.head(g, params, &xs)?;
        let logits = g.slice_cols(&out, 0, k)?;
        let log_pi = g.log_softmax(&logits)?;
        let norm = T::count(d) * T::lit(0.5) * (T::lit(2.0) * T::PI()).ln();
        let mut comps = Vec::with_capacity(k);
        for j in 0..k {
            let mu = g.slice_cols(&out, k + j * d, d)?;
            let diff = g.sub(&ys, &mu)?;
            let sq = g.square(&diff)?;
            let sq = g.row_sum(&sq)?;
            let log_sigma = g.slice_cols(&out, k + k * d + j, 1)?;
            let m2 = g.scale(&log_sigma, T::lit(-2.0))?;
            let inv_var = g.exp(&m2)?;
            let quad = g.mul(&sq, &inv_var)?;
            let quad = g.scale(&quad, T::lit(-0.5))?;
            let log_det = g.scale(&log_sigma, T::count(d))?;
            let term = g.sub(&quad, &log_det)?;
            comps.push(g.shift(&term, -norm)?);
        }
        let refs: Vec<&G::Var> = comps.iter().collect();
        let comps = g.concat(&refs)?;
        let joint = g.add(&log_pi, &comps)?;
        let lp = g.logsumexp(&joint)?;
        if self.scaling.is_identity() {
            Ok(lp)
        } else {
            g.shift(&lp, self.scaling.log_jacobian())
        }
    }

    fn sample(&self, x: &ConditionVector<T>, n: usize, seed: u64) -> Result<Tensor<T>> {
        mdn_sample(&self.mdn_forward(x)?, n, seed)
    }
}
