//! Hypernetwork that emits the complete weight vector of a flow's dynamics
//! network for every conditioning vector.
//!
//! Only the hypernetwork weights `psi` are trained; each input `x` gets its
//! own flow with `theta = output_scale * MLP_psi(x)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Eager, Graph, Tensor};
use crate::error::{invalid, Result};
use crate::flow::{self, FlowConfig, FlowParams, MlpDynamics};
use crate::mlp::{mlp_forward, LayerSlices, WeightLayout};
use crate::model::{ConditionVector, ConditionalModel, ModelKind, Scaling};
use crate::scalar::Real;

/// Canonical flat layout of the dynamics network for `config`.
pub fn layout_for<T: Real>(config: &FlowConfig<T>) -> WeightLayout {
    config.layout()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig<T: Real = f64> {
    pub cond_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_scale: T,
}

impl<T: Real> HyperConfig<T> {
    pub fn new(cond_dim: usize) -> Self {
        Self { cond_dim, hidden_widths: vec![64, 64], output_scale: T::lit(1e-2) }
    }
}

/// Hypernetwork weights plus the flow they parameterize.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperNet<T: Real = f64> {
    psi: Vec<T>,
    layout: WeightLayout,
    config: HyperConfig<T>,
    flow: FlowConfig<T>,
    scaling: Scaling<T>,
}

impl<T: Real> HyperNet<T> {
    /// All-zero hypernetwork: every generated flow is the identity.
    pub fn zeros(config: HyperConfig<T>, flow: FlowConfig<T>) -> Result<Self> {
        let layout = Self::psi_layout(&config, &flow)?;
        let psi = vec![T::zero(); layout.len()];
        let scaling = Scaling::identity(config.cond_dim, flow.target_dim);
        Ok(Self { psi, layout, config, flow, scaling })
    }

    /// Glorot-initialized hypernetwork, deterministic in `seed`.
    pub fn init(config: HyperConfig<T>, flow: FlowConfig<T>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(config, flow)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        net.psi = net.layout.init(&mut rng);
        Ok(net)
    }

    pub fn from_parts(
        config: HyperConfig<T>,
        flow: FlowConfig<T>,
        scaling: Scaling<T>,
        psi: Vec<T>,
    ) -> Result<Self> {
        let layout = Self::psi_layout(&config, &flow)?;
        layout.check(psi.len())?;
        scaling.validate(config.cond_dim, flow.target_dim)?;
        Ok(Self { psi, layout, config, flow, scaling })
    }

    fn psi_layout(config: &HyperConfig<T>, flow: &FlowConfig<T>) -> Result<WeightLayout> {
        flow.validate()?;
        if config.cond_dim == 0 {
            return Err(invalid("conditioning dimension must be at least 1"));
        }
        if config.hidden_widths.iter().any(|&w| w == 0) {
            return Err(invalid("hypernetwork hidden widths must be positive"));
        }
        if !(config.output_scale.is_finite() && config.output_scale > T::zero()) {
            return Err(invalid("output_scale must be positive"));
        }
        let out = layout_for(flow).len();
        Ok(WeightLayout::mlp(config.cond_dim, &config.hidden_widths, out))
    }

    pub fn with_scaling(mut self, scaling: Scaling<T>) -> Result<Self> {
        scaling.validate(self.config.cond_dim, self.flow.target_dim)?;
        self.scaling = scaling;
        Ok(self)
    }

    pub fn psi(&self) -> &[T] {
        &self.psi
    }

    pub fn config(&self) -> &HyperConfig<T> {
        &self.config
    }

    pub fn flow_config(&self) -> &FlowConfig<T> {
        &self.flow
    }

    pub fn scaling(&self) -> &Scaling<T> {
        &self.scaling
    }

    pub fn psi_layout_ref(&self) -> &WeightLayout {
        &self.layout
    }

    /// Flow weights `[B, P]` for normalized inputs `[B, c]`.
    pub fn theta_graph<G: Graph<T>>(&self, g: &mut G, psi: &G::Var, xs: &G::Var) -> Result<G::Var> {
        let layers = LayerSlices::take(g, psi, &self.layout)?;
        let raw = mlp_forward(g, &layers, xs)?;
        g.scale(&raw, self.config.output_scale)
    }

    /// Flow weights for one conditioning vector.
    pub fn generate_weights(&self, x: &ConditionVector<T>) -> Result<FlowParams<T>> {
        self.check_x(x)?;
        let xs = self.scaling.normalize_x(&Tensor::row(x.as_slice().to_vec()))?;
        let mut g = Eager;
        let theta = self.theta_graph(&mut g, &Tensor::row(self.psi.clone()), &xs)?;
        FlowParams::new(theta.into_data(), layout_for(&self.flow))
    }

    pub fn conditional_log_prob(&self, x: &ConditionVector<T>, y: &[T]) -> Result<T> {
        let ys = Tensor::matrix(1, y.len(), y.to_vec())?;
        Ok(self.log_prob_at(x, &ys)?[0])
    }

    /// Conditional samples; see [`ConditionalModel::sample`].
    pub fn conditional_sample(&self, x: &ConditionVector<T>, n: usize, seed: u64) -> Result<Tensor<T>> {
        self.sample(x, n, seed)
    }
}

/// Standard-normal draws `[n, d]`, deterministic in `seed`.
pub fn standard_normal_latents<T: Real>(n: usize, d: usize, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::lit(v)
        })
        .collect();
    Tensor::matrix(n, d, data)
}

impl<T: Real> ConditionalModel<T> for HyperNet<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::RegFlow
    }

    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn target_dim(&self) -> usize {
        self.flow.target_dim
    }

    fn params(&self) -> &[T] {
        &self.psi
    }

    fn params_mut(&mut self) -> &mut [T] {
        &mut self.psi
    }

    fn eval_chunk(&self) -> usize {
        // bound the per-row weight block to a few million scalars
        (4_000_000 / layout_for(&self.flow).len()).clamp(1, crate::model::EVAL_CHUNK)
    }

    fn log_prob_graph<G: Graph<T>>(
        &self,
        g: &mut G,
        params: &G::Var,
        xs: &Tensor<T>,
        ys: &Tensor<T>,
    ) -> Result<G::Var> {
        let xs = g.constant(self.scaling.normalize_x(xs)?);
        let ys = g.constant(self.scaling.normalize_y(ys)?);
        let theta = self.theta_graph(g, params, &xs)?;
        let dynamics = MlpDynamics::new(g, &theta, &self.flow)?;
        let lp = flow::log_prob_graph(g, &dynamics, &ys, &self.flow)?;
        if self.scaling.is_identity() {
            Ok(lp)
        } else {
            g.shift(&lp, self.scaling.log_jacobian())
        }
    }

    fn log_prob_at(&self, x: &ConditionVector<T>, ys: &Tensor<T>) -> Result<Vec<T>> {
        use rayon::prelude::*;
        let theta = self.generate_weights(x)?;
        let (rows, d) = ys.dims2();
        if d != self.flow.target_dim {
            return Err(invalid(format!("targets have {d} columns, model expects {}", self.flow.target_dim)));
        }
        let ys = self.scaling.normalize_y(ys)?;
        let shift = if self.scaling.is_identity() { T::zero() } else { self.scaling.log_jacobian() };
        let starts: Vec<usize> = (0..rows).step_by(crate::model::EVAL_CHUNK).collect();
        let chunks: Result<Vec<Vec<T>>> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + crate::model::EVAL_CHUNK).min(rows);
                let chunk = Tensor::matrix(e - s, d, ys.data()[s * d..e * d].to_vec())?;
                let lp = flow::log_prob_batch(&theta, &chunk, &self.flow)?;
                Ok(lp.into_iter().map(|v| v + shift).collect())
            })
            .collect();
        Ok(chunks?.concat())
    }

    fn sample(&self, x: &ConditionVector<T>, n: usize, seed: u64) -> Result<Tensor<T>> {
        if n == 0 {
            return Err(invalid("sample count must be at least 1"));
        }
        let theta = self.generate_weights(x)?;
        let z = standard_normal_latents(n, self.flow.target_dim, seed)?;
        let y = flow::forward_batch(&theta, &z, &self.flow)?;
        self.scaling.denormalize_y(&y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};

    const LOG_2PI: f64 = 1.8378770664093453;

    fn cv(v: &[f64]) -> ConditionVector<f64> {
        ConditionVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn layout_lengths() {
        let full = FlowConfig::<f64>::default();
        assert_eq!(layout_for(&full).len(), 33794);
        let desk = FlowConfig::<f64>::desk(2);
        assert_eq!(layout_for(&desk).len(), 194);
        assert_eq!(layout_for(&desk), layout_for(&desk));
    }

    #[test]
    fn zero_psi_gives_identity_flow() {
        let net = HyperNet::zeros(HyperConfig::new(3), FlowConfig::desk(2)).unwrap();
        let x = cv(&[0.5, -1.0, 2.0]);
        assert!(net.generate_weights(&x).unwrap().theta().iter().all(|&v| v == 0.0));
        let lp = net.conditional_log_prob(&x, &[0.0, 0.0]).unwrap();
        assert!((lp + LOG_2PI).abs() < 1e-12);
        let y = [1.3, -0.4];
        let lp = net.conditional_log_prob(&x, &y).unwrap();
        assert_eq!(lp, -LOG_2PI - 0.5 * (1.3f64 * 1.3 + 0.4 * 0.4));
        let samples = net.conditional_sample(&x, 16, 9).unwrap();
        assert_eq!(samples, standard_normal_latents(16, 2, 9).unwrap());
    }

    #[test]
    fn weights_are_deterministic_and_input_dependent() {
        let net = HyperNet::init(HyperConfig::new(2), FlowConfig::desk(2), 11).unwrap();
        let a = net.generate_weights(&cv(&[0.1, 0.2])).unwrap();
        assert_eq!(a, net.generate_weights(&cv(&[0.1, 0.2])).unwrap());
        let b = net.generate_weights(&cv(&[-0.7, 0.9])).unwrap();
        assert!(a.theta().iter().zip(b.theta()).any(|(p, q)| p != q));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = HyperNet::zeros(HyperConfig::new(2), FlowConfig::desk(2)).unwrap();
        assert!(net.generate_weights(&cv(&[1.0])).is_err());
    }

    #[test]
    fn sampling_is_seeded() {
        let net = HyperNet::init(HyperConfig::new(1), FlowConfig::desk(2), 5).unwrap();
        let x = cv(&[0.3]);
        assert_eq!(net.sample(&x, 8, 1).unwrap(), net.sample(&x, 8, 1).unwrap());
        assert_ne!(net.sample(&x, 8, 1).unwrap(), net.sample(&x, 8, 2).unwrap());
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let cfg = HyperConfig { cond_dim: 2, hidden_widths: vec![8], output_scale: 0.5 };
        let flow = FlowConfig { hidden_widths: vec![8], rk4_steps: 6, ..FlowConfig::desk(2) };
        let net = HyperNet::init(cfg, flow, 3).unwrap();
        let xs = Tensor::matrix(2, 2, vec![0.3, -0.8, 1.1, 0.4]).unwrap();
        let ys = Tensor::matrix(2, 2, vec![0.5, -0.2, -1.0, 0.9]).unwrap();
        let err = grad_check(
            |tape: &mut Tape<f64>, psi| {
                let lp = net.log_prob_graph(tape, &psi, &xs, &ys)?;
                tape.sum(&lp)
            },
            &Tensor::row(net.psi().to_vec()),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn scaling_shifts_density_by_log_jacobian() {
        let net = HyperNet::zeros(HyperConfig::new(1), FlowConfig::desk(1)).unwrap();
        let scaling = Scaling { x_shift: vec![0.0], x_scale: vec![1.0], y_shift: vec![1.0], y_scale: vec![2.0] };
        let net = net.with_scaling(scaling).unwrap();
        // y = 1 maps to the origin of a unit normal, density halves
        let lp = net.conditional_log_prob(&cv(&[0.0]), &[1.0]).unwrap();
        assert!((lp - (-0.5 * LOG_2PI - 2f64.ln())).abs() < 1e-12);
    }
}
