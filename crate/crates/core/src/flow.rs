//! Continuous normalizing flow over `R^d`.
//!
//! The flow maps a latent point `z` at time `t0` to `y` at time `t1` by
//! integrating `dz/dt = g(z, t)`. Densities follow from the instantaneous
//! change of variables: integrating backwards from `y` yields the latent
//! point together with the accumulated `-∫ Tr(∂g/∂z) dt`, and
//! `log p(y) = log N(z; 0, I) + accumulated`.
//!
//! Integration uses fixed-step RK4 unrolled on the active graph, so
//! gradients are those of the discretized objective. Traces are exact: one
//! forward-mode tangent per coordinate, itself built from graph operations so
//! that the trace is differentiable with respect to the weights.

use crate::autodiff::{Eager, Graph, Tensor};
use crate::error::{invalid, Error, Result};
use crate::mlp::{LayerSlices, WeightLayout};
use crate::scalar::Real;

/// Largest target dimension supported by the exact trace.
pub const MAX_EXACT_TRACE_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prior {
    StandardNormal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig<T: Real = f64> {
    pub target_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub t0: T,
    pub t1: T,
    pub rk4_steps: usize,
    pub prior: Prior,
}

impl<T: Real> Default for FlowConfig<T> {
    fn default() -> Self {
        Self {
            target_dim: 2,
            hidden_widths: vec![128, 128, 128],
            t0: T::zero(),
            t1: T::one(),
            rk4_steps: 20,
            prior: Prior::StandardNormal,
        }
    }
}

impl<T: Real> FlowConfig<T> {
    /// Small dynamics network used for desk-scale experiments.
    pub fn desk(target_dim: usize) -> Self {
        Self { target_dim, hidden_widths: vec![32], ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_dim == 0 {
            return Err(invalid("target dimension must be at least 1"));
        }
        if self.rk4_steps == 0 {
            return Err(invalid("rk4_steps must be at least 1"));
        }
        if !(self.t1 > self.t0) {
            return Err(invalid(format!("need t1 > t0, got t0 = {}, t1 = {}", self.t0, self.t1)));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    /// Layout of the dynamics network: input `[z, t]`, output velocity.
    pub fn layout(&self) -> WeightLayout {
        WeightLayout::mlp(self.target_dim + 1, &self.hidden_widths, self.target_dim)
    }

    fn check_trace_dim(&self) -> Result<()> {
        if self.target_dim > MAX_EXACT_TRACE_DIM {
            return Err(Error::DimensionLimit(self.target_dim));
        }
        Ok(())
    }
}

/// Flat weight vector of the dynamics network together with its layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams<T: Real = f64> {
    theta: Vec<T>,
    layout: WeightLayout,
}

impl<T: Real> FlowParams<T> {
    pub fn new(theta: Vec<T>, layout: WeightLayout) -> Result<Self> {
        layout.check(theta.len())?;
        Ok(Self { theta, layout })
    }

    pub fn zeros(config: &FlowConfig<T>) -> Self {
        let layout = config.layout();
        Self { theta: vec![T::zero(); layout.len()], layout }
    }

    pub fn theta(&self) -> &[T] {
        &self.theta
    }

    pub fn layout(&self) -> &WeightLayout {
        &self.layout
    }

    fn row(&self) -> Tensor<T> {
        Tensor::row(self.theta.clone())
    }

    fn check_config(&self, config: &FlowConfig<T>) -> Result<()> {
        config.validate()?;
        if self.layout != config.layout() {
            return Err(Error::LayoutMismatch {
                expected: config.layout().len(),
                got: self.theta.len(),
            });
        }
        Ok(())
    }
}

/// Velocity field evaluated on a batch of points `[B, d]`.
pub trait Dynamics<T: Real, G: Graph<T>> {
    fn dim(&self) -> usize;

    /// Returns the velocity `[B, d]` and, when requested, the Jacobian trace
    /// `Tr(∂g/∂z)` per row as `[B, 1]`.
    fn eval(&self, g: &mut G, z: &G::Var, t: T, with_trace: bool)
        -> Result<(G::Var, Option<G::Var>)>;
}

/// `g(z, t) = a z`. Closed-form reference dynamics for tests.
#[derive(Debug, Clone, Copy)]
pub struct LinearDynamics<T: Real = f64> {
    pub rate: T,
    pub dim: usize,
}

impl<T: Real, G: Graph<T>> Dynamics<T, G> for LinearDynamics<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, g: &mut G, z: &G::Var, _t: T, with_trace: bool) -> Result<(G::Var, Option<G::Var>)> {
        let v = g.scale(z, self.rate)?;
        let trace = if with_trace {
            let (rows, _) = g.value(z).dims2();
            Some(g.constant(Tensor::filled(vec![rows, 1], self.rate * T::count(self.dim))))
        } else {
            None
        };
        Ok((v, trace))
    }
}

/// Tanh MLP on `[z, t]` whose weights live in a graph variable: a `[1, P]`
/// row shared by the batch or a `[B, P]` block with one weight set per row.
pub struct MlpDynamics<V> {
    layers: LayerSlices<V>,
    dim: usize,
}

impl<V: Clone> MlpDynamics<V> {
    pub fn new<T: Real, G: Graph<T, Var = V>>(
        g: &mut G,
        theta: &V,
        config: &FlowConfig<T>,
    ) -> Result<Self> {
        let layers = LayerSlices::take(g, theta, &config.layout())?;
        Ok(Self { layers, dim: config.target_dim })
    }
}

impl<T: Real, G: Graph<T>> Dynamics<T, G> for MlpDynamics<G::Var> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, g: &mut G, z: &G::Var, t: T, with_trace: bool) -> Result<(G::Var, Option<G::Var>)> {
        let (rows, cols) = g.value(z).dims2();
        if cols != self.dim {
            return Err(Error::Shape {
                op: "dynamics",
                lhs: vec![rows, cols],
                rhs: vec![rows, self.dim],
            });
        }
        let tcol = g.constant(Tensor::filled(vec![rows, 1], t));
        let input = g.concat(&[z, &tcol])?;

        let n = self.layers.weights.len();
        let mut h = input;
        // tanh' at each hidden layer, kept for the tangent sweep
        let mut slopes = Vec::with_capacity(n.saturating_sub(1));
        for l in 0..n {
            let pre = g.batched_matvec(&h, &self.layers.weights[l])?;
            let pre = g.add(&pre, &self.layers.biases[l])?;
            if l + 1 < n {
                h = g.tanh(&pre)?;
                if with_trace {
                    let sq = g.square(&h)?;
                    let neg = g.neg(&sq)?;
                    slopes.push(g.shift(&neg, T::one())?);
                }
            } else {
                h = pre;
            }
        }
        if !with_trace {
            return Ok((h, None));
        }

        let mut trace: Option<G::Var> = None;
        for i in 0..self.dim {
            let mut basis = Tensor::zeros(vec![rows, self.dim + 1]);
            for r in 0..rows {
                basis.data_mut()[r * (self.dim + 1) + i] = T::one();
            }
            let mut u = g.constant(basis);
            for l in 0..n {
                u = g.batched_matvec(&u, &self.layers.weights[l])?;
                if l + 1 < n {
                    u = g.mul(&slopes[l], &u)?;
                }
            }
            let diag = g.slice_cols(&u, i, 1)?;
            trace = Some(match trace {
                None => diag,
                Some(acc) => g.add(&acc, &diag)?,
            });
        }
        Ok((h, trace))
    }
}

fn check_finite<T: Real, G: Graph<T>>(g: &G, vars: &[&G::Var], step: usize, t: T) -> Result<()> {
    if vars.iter().all(|v| g.value(v).is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowUp { step, t: t.as_f64() })
    }
}

/// Fixed-step RK4 from `t_start` to `t_end` (either direction). When
/// `with_trace` is set, also integrates `Tr(∂g/∂z)` along the path starting
/// from zero and returns the accumulated integral.
pub fn rk4<T: Real, G: Graph<T>, D: Dynamics<T, G>>(
    g: &mut G,
    dynamics: &D,
    z0: &G::Var,
    t_start: T,
    t_end: T,
    steps: usize,
    with_trace: bool,
) -> Result<(G::Var, Option<G::Var>)> {
    if steps == 0 {
        return Err(invalid("rk4 needs at least one step"));
    }
    let h = (t_end - t_start) / T::count(steps);
    let half = h / T::lit(2.0);
    let sixth = h / T::lit(6.0);
    let two = T::lit(2.0);
    let mut z = z0.clone();
    let mut acc: Option<G::Var> = None;
    for step in 0..steps {
        let t = t_start + h * T::count(step);
        let (k1, r1) = dynamics.eval(g, &z, t, with_trace)?;
        let dz = g.scale(&k1, half)?;
        let z2 = g.add(&z, &dz)?;
        let (k2, r2) = dynamics.eval(g, &z2, t + half, with_trace)?;
        let dz = g.scale(&k2, half)?;
        let z3 = g.add(&z, &dz)?;
        let (k3, r3) = dynamics.eval(g, &z3, t + half, with_trace)?;
        let dz = g.scale(&k3, h)?;
        let z4 = g.add(&z, &dz)?;
        let (k4, r4) = dynamics.eval(g, &z4, t + h, with_trace)?;

        let ends = g.add(&k1, &k4)?;
        let mids = g.add(&k2, &k3)?;
        let mids = g.scale(&mids, two)?;
        let total = g.add(&ends, &mids)?;
        let dz = g.scale(&total, sixth)?;
        z = g.add(&z, &dz)?;

        if let (Some(r1), Some(r2), Some(r3), Some(r4)) = (r1, r2, r3, r4) {
            let ends = g.add(&r1, &r4)?;
            let mids = g.add(&r2, &r3)?;
            let mids = g.scale(&mids, two)?;
            let total = g.add(&ends, &mids)?;
            let dr = g.scale(&total, sixth)?;
            acc = Some(match acc {
                None => dr,
                Some(a) => g.add(&a, &dr)?,
            });
        }
        match &acc {
            Some(a) => check_finite(g, &[&z, a], step, t + h)?,
            None => check_finite(g, &[&z], step, t + h)?,
        }
    }
    Ok((z, acc))
}

/// Pushes latents `[B, d]` through the flow from `t0` to `t1`.
pub fn forward_graph<T: Real, G: Graph<T>, D: Dynamics<T, G>>(
    g: &mut G,
    dynamics: &D,
    z: &G::Var,
    config: &FlowConfig<T>,
) -> Result<G::Var> {
    let (y, _) = rk4(g, dynamics, z, config.t0, config.t1, config.rk4_steps, false)?;
    Ok(y)
}

/// Pulls targets `[B, d]` back to latents, returning `(z, log_det)` with
/// `log_det = -∫_{t0}^{t1} Tr(∂g/∂z) dt` per row (`[B, 1]`).
pub fn inverse_graph<T: Real, G: Graph<T>, D: Dynamics<T, G>>(
    g: &mut G,
    dynamics: &D,
    y: &G::Var,
    config: &FlowConfig<T>,
) -> Result<(G::Var, G::Var)> {
    config.check_trace_dim()?;
    let (z, acc) = rk4(g, dynamics, y, config.t1, config.t0, config.rk4_steps, true)?;
    Ok((z, acc.expect("trace requested")))
}

/// Standard-normal log density per row, `[B, d] -> [B, 1]`.
pub fn std_normal_log_density<T: Real, G: Graph<T>>(g: &mut G, z: &G::Var) -> Result<G::Var> {
    let d = g.value(z).dims2().1;
    let sq = g.square(z)?;
    let rs = g.row_sum(&sq)?;
    let half = g.scale(&rs, T::lit(-0.5))?;
    let norm = T::count(d) * T::lit(0.5) * (T::lit(2.0) * T::PI()).ln();
    g.shift(&half, -norm)
}

/// Log density of each row of `y` (`[B, d]`) under the flow, `[B, 1]`.
pub fn log_prob_graph<T: Real, G: Graph<T>, D: Dynamics<T, G>>(
    g: &mut G,
    dynamics: &D,
    y: &G::Var,
    config: &FlowConfig<T>,
) -> Result<G::Var> {
    let (z, log_det) = inverse_graph(g, dynamics, y, config)?;
    let prior = match config.prior {
        Prior::StandardNormal => std_normal_log_density(g, &z)?,
    };
    g.add(&prior, &log_det)
}

fn point_tensor<T: Real>(p: &[T], d: usize) -> Result<Tensor<T>> {
    if p.len() != d {
        return Err(invalid(format!("expected a point in R^{d}, got {} coordinates", p.len())));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(invalid("point has non-finite coordinates"));
    }
    Tensor::matrix(1, d, p.to_vec())
}

/// `g_θ(z, t)` for a single point.
pub fn dynamics_eval<T: Real>(theta: &FlowParams<T>, z: &[T], t: T, config: &FlowConfig<T>) -> Result<Vec<T>> {
    theta.check_config(config)?;
    let mut g = Eager;
    let dynamics = MlpDynamics::new(&mut g, &theta.row(), config)?;
    let (v, _) = dynamics.eval(&mut g, &point_tensor(z, config.target_dim)?, t, false)?;
    Ok(v.into_data())
}

/// Exact `Tr(∂g_θ/∂z)` at a single point.
pub fn exact_trace<T: Real>(theta: &FlowParams<T>, z: &[T], t: T, config: &FlowConfig<T>) -> Result<T> {
    theta.check_config(config)?;
    config.check_trace_dim()?;
    let mut g = Eager;
    let dynamics = MlpDynamics::new(&mut g, &theta.row(), config)?;
    let (_, tr) = dynamics.eval(&mut g, &point_tensor(z, config.target_dim)?, t, true)?;
    Ok(tr.expect("trace requested").item())
}

/// `(f_θ^{-1}(y), -∫ Tr dt)` for a single point.
pub fn integrate_inverse<T: Real>(theta: &FlowParams<T>, y: &[T], config: &FlowConfig<T>) -> Result<(Vec<T>, T)> {
    theta.check_config(config)?;
    let mut g = Eager;
    let dynamics = MlpDynamics::new(&mut g, &theta.row(), config)?;
    let (z, ld) = inverse_graph(&mut g, &dynamics, &point_tensor(y, config.target_dim)?, config)?;
    Ok((z.into_data(), ld.item()))
}

/// `f_θ(z)` for a single point.
pub fn integrate_forward<T: Real>(theta: &FlowParams<T>, z: &[T], config: &FlowConfig<T>) -> Result<Vec<T>> {
    theta.check_config(config)?;
    let mut g = Eager;
    let dynamics = MlpDynamics::new(&mut g, &theta.row(), config)?;
    let y = forward_graph(&mut g, &dynamics, &point_tensor(z, config.target_dim)?, config)?;
    Ok(y.into_data())
}

/// `log p_θ(y)` for a single point.
pub fn log_prob<T: Real>(theta: &FlowParams<T>, y: &[T], config: &FlowConfig<T>) -> Result<T> {
    Ok(log_prob_batch(theta, &point_tensor(y, config.target_dim)?, config)?[0])
}

/// Log densities for every row of a `[B, d]` batch under one weight set.
pub fn log_prob_batch<T: Real>(theta: &FlowParams<T>, ys: &Tensor<T>, config: &FlowConfig<T>) -> Result<Vec<T>> {
    theta.check_config(config)?;
    let mut g = Eager;
    let dynamics = MlpDynamics::new(&mut g, &theta.row(), config)?;
    Ok(log_prob_graph(&mut g, &dynamics, ys, config)?.into_data())
}

/// Pushes every row of a `[B, d]` latent batch through the flow.
pub fn forward_batch<T: Real>(theta: &FlowParams<T>, zs: &Tensor<T>, config: &FlowConfig<T>) -> Result<Tensor<T>> {
    theta.check_config(config)?;
    let mut g = Eager;
    let dynamics = MlpDynamics::new(&mut g, &theta.row(), config)?;
    forward_graph(&mut g, &dynamics, zs, config)
}
