//! Interface shared by every conditional density model the trainer handles.

use rayon::prelude::*;

use crate::autodiff::{Eager, Graph, Tensor};
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Conditioning input `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector<T: Real = f64>(Vec<T>);

impl<T: Real> ConditionVector<T> {
    pub fn new(x: Vec<T>) -> Result<Self> {
        if x.is_empty() {
            return Err(invalid("condition vector must have at least one entry"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("condition vector has non-finite entries"));
        }
        Ok(Self(x))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    RegFlow,
    Mdn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::RegFlow => "regflow",
            ModelKind::Mdn => "mdn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "regflow" => Ok(ModelKind::RegFlow),
            "mdn" => Ok(ModelKind::Mdn),
            other => Err(invalid(format!("unknown model `{other}`; expected regflow or mdn"))),
        }
    }
}

/// Rows evaluated together by the batched inference helpers.
pub const EVAL_CHUNK: usize = 2048;

/// A network producing a density over `R^d` for every conditioning vector,
/// with all trainable weights in one flat vector.
pub trait ConditionalModel<T: Real>: Clone + Send + Sync {
    fn kind(&self) -> ModelKind;
    fn cond_dim(&self) -> usize;
    fn target_dim(&self) -> usize;
    fn params(&self) -> &[T];
    fn params_mut(&mut self) -> &mut [T];

    /// Log densities `[B, 1]` of targets `ys` (`[B, d]`) given `xs`
    /// (`[B, c]`), with the weights supplied as a `[1, P]` graph variable.
    /// Inputs and targets are data and never receive gradients.
    fn log_prob_graph<G: Graph<T>>(
        &self,
        g: &mut G,
        params: &G::Var,
        xs: &Tensor<T>,
        ys: &Tensor<T>,
    ) -> Result<G::Var>;

    /// `n` draws from the model density at `x`, deterministic in `seed`.
    fn sample(&self, x: &ConditionVector<T>, n: usize, seed: u64) -> Result<Tensor<T>>;

    /// Rows per chunk in the batched helpers.
    fn eval_chunk(&self) -> usize {
        EVAL_CHUNK
    }

    fn check_x(&self, x: &ConditionVector<T>) -> Result<()> {
        if x.dim() != self.cond_dim() {
            return Err(invalid(format!(
                "condition vector has dimension {}, model expects {}",
                x.dim(),
                self.cond_dim()
            )));
        }
        Ok(())
    }

    /// Log densities for row-aligned `[B, c]` inputs and `[B, d]` targets,
    /// evaluated in chunks on the current rayon pool. Output order follows
    /// input order.
    fn log_prob_batch(&self, xs: &Tensor<T>, ys: &Tensor<T>) -> Result<Vec<T>> {
        let (rows, c) = xs.dims2();
        let (yrows, d) = ys.dims2();
        if rows != yrows || c != self.cond_dim() || d != self.target_dim() {
            return Err(invalid(format!(
                "batch shapes {:?} / {:?} do not match model dims ({}, {})",
                xs.shape(),
                ys.shape(),
                self.cond_dim(),
                self.target_dim()
            )));
        }
        let chunk = self.eval_chunk().max(1);
        let starts: Vec<usize> = (0..rows).step_by(chunk).collect();
        let chunks: Result<Vec<Vec<T>>> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + chunk).min(rows);
                let xc = Tensor::matrix(e - s, c, xs.data()[s * c..e * c].to_vec())?;
                let yc = Tensor::matrix(e - s, d, ys.data()[s * d..e * d].to_vec())?;
                let mut g = Eager;
                let p = Tensor::row(self.params().to_vec());
                Ok(self.log_prob_graph(&mut g, &p, &xc, &yc)?.into_data())
            })
            .collect();
        Ok(chunks?.concat())
    }

    /// Log densities of many targets under a single conditioning vector.
    fn log_prob_at(&self, x: &ConditionVector<T>, ys: &Tensor<T>) -> Result<Vec<T>> {
        self.check_x(x)?;
        let (rows, _) = ys.dims2();
        let mut xs = Vec::with_capacity(rows * x.dim());
        for _ in 0..rows {
            xs.extend_from_slice(x.as_slice());
        }
        self.log_prob_batch(&Tensor::matrix(rows, x.dim(), xs)?, ys)
    }
}

/// Fixed per-coordinate affine standardization of inputs and targets.
///
/// Models see `(x - x_shift) / x_scale` and `(y - y_shift) / y_scale`; the
/// density over raw targets picks up `-Σ ln y_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling<T: Real = f64> {
    pub x_shift: Vec<T>,
    pub x_scale: Vec<T>,
    pub y_shift: Vec<T>,
    pub y_scale: Vec<T>,
}

fn column_moments<T: Real>(t: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (rows, cols) = t.dims2();
    let n = T::count(rows);
    let mut mean = vec![T::zero(); cols];
    for r in 0..rows {
        for (m, &v) in mean.iter_mut().zip(t.row_slice(r)) {
            *m = *m + v / n;
        }
    }
    let mut var = vec![T::zero(); cols];
    for r in 0..rows {
        for ((s, &v), &m) in var.iter_mut().zip(t.row_slice(r)).zip(&mean) {
            *s = *s + (v - m) * (v - m) / n;
        }
    }
    let floor = T::lit(1e-6);
    let scale = var
        .into_iter()
        .map(|v| if v.sqrt() > floor { v.sqrt() } else { T::one() })
        .collect();
    (mean, scale)
}

fn affine<T: Real>(t: &Tensor<T>, shift: &[T], scale: &[T], inverse: bool) -> Result<Tensor<T>> {
    let (rows, cols) = t.dims2();
    if cols != shift.len() {
        return Err(invalid(format!(
            "expected {} columns, got {}",
            shift.len(),
            cols
        )));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for (j, &v) in t.row_slice(r).iter().enumerate() {
            out.push(if inverse { shift[j] + scale[j] * v } else { (v - shift[j]) / scale[j] });
        }
    }
    Tensor::matrix(rows, cols, out)
}

impl<T: Real> Scaling<T> {
    pub fn identity(cond_dim: usize, target_dim: usize) -> Self {
        Self {
            x_shift: vec![T::zero(); cond_dim],
            x_scale: vec![T::one(); cond_dim],
            y_shift: vec![T::zero(); target_dim],
            y_scale: vec![T::one(); target_dim],
        }
    }

    /// Column means and standard deviations of the data; constant columns
    /// keep unit scale. Targets share one scale (the root mean of the
    /// per-coordinate variances) so isotropic shapes stay isotropic.
    pub fn fit(xs: &Tensor<T>, ys: &Tensor<T>) -> Self {
        Self::fit_with_spread(xs, ys, T::one())
    }

    /// Like [`Scaling::fit`], but standardized targets have standard
    /// deviation `spread` instead of one. A spread above one leaves narrow
    /// modes wider in latent units, which the flow fits faster.
    pub fn fit_with_spread(xs: &Tensor<T>, ys: &Tensor<T>, spread: T) -> Self {
        let (x_shift, x_scale) = column_moments(xs);
        let (y_shift, mut y_scale) = column_moments(ys);
        let d = T::count(y_scale.len());
        let rms = (y_scale.iter().map(|&v| v * v).sum::<T>() / d).sqrt();
        y_scale.iter_mut().for_each(|v| *v = rms / spread);
        Self { x_shift, x_scale, y_shift, y_scale }
    }

    pub fn validate(&self, cond_dim: usize, target_dim: usize) -> Result<()> {
        let ok = self.x_shift.len() == cond_dim
            && self.x_scale.len() == cond_dim
            && self.y_shift.len() == target_dim
            && self.y_scale.len() == target_dim
            && self.x_scale.iter().chain(&self.y_scale).all(|&s| s > T::zero() && s.is_finite())
            && self.x_shift.iter().chain(&self.y_shift).all(|s| s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(invalid("scaling must match model dimensions with positive finite scales"))
        }
    }

    pub fn normalize_x(&self, xs: &Tensor<T>) -> Result<Tensor<T>> {
        affine(xs, &self.x_shift, &self.x_scale, false)
    }

    pub fn normalize_y(&self, ys: &Tensor<T>) -> Result<Tensor<T>> {
        affine(ys, &self.y_shift, &self.y_scale, false)
    }

    pub fn denormalize_y(&self, ys: &Tensor<T>) -> Result<Tensor<T>> {
        affine(ys, &self.y_shift, &self.y_scale, true)
    }

    /// Log-Jacobian of the target standardization.
    pub fn log_jacobian(&self) -> T {
        -self.y_scale.iter().map(|s| s.ln()).sum::<T>()
    }

    pub fn is_identity(&self) -> bool {
        self.x_shift.iter().chain(&self.y_shift).all(|v| v.is_zero())
            && self.x_scale.iter().chain(&self.y_scale).all(|v| v.is_one())
    }
}
