//! Minibatch NLL training with Adam.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tape, Tensor, Var};
use crate::config::{field_error, fmt_g17, KeyValues};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::metrics::avg_nll;
use crate::model::ConditionalModel;
use crate::scalar::Real;

/// Learning rate suited to the full-size [128,128,128] model.
pub const FULL_SCALE_LEARNING_RATE: f64 = 2e-5;

/// Learning rate for the small desk-scale networks.
pub const DESK_LEARNING_RATE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Held-out evaluation and checkpoint cadence; 0 disables both.
    pub eval_every: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: DESK_LEARNING_RATE,
            batch_size: 64,
            max_steps: 5000,
            eval_every: 500,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip_norm: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(invalid(format!("{name} must lie strictly between 0 and 1")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(invalid("adam_eps must be positive"));
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0) {
                return Err(invalid("grad_clip_norm must be positive"));
            }
        }
        Ok(())
    }

    /// Overrides defaults with any training keys present in `kv`.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let clip = match kv.get_str("grad_clip_norm") {
            None => d.grad_clip_norm,
            Some("none") | Some("off") => None,
            Some(_) => kv.get::<f64>("grad_clip_norm")?,
        };
        let cfg = Self {
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            max_steps: kv.get_or("max_steps", d.max_steps)?,
            eval_every: kv.get_or("eval_every", d.eval_every)?,
            seed: kv.get_or("seed", d.seed)?,
            adam_beta1: kv.get_or("adam_beta1", d.adam_beta1)?,
            adam_beta2: kv.get_or("adam_beta2", d.adam_beta2)?,
            adam_eps: kv.get_or("adam_eps", d.adam_eps)?,
            grad_clip_norm: clip,
        };
        cfg.validate().map_err(|e| match e {
            Error::Invalid(msg) => {
                let field = msg.split_whitespace().next().unwrap_or("").to_string();
                field_error(kv, &field, msg)
            }
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "learning_rate={}", fmt_g17(self.learning_rate));
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "max_steps={}", self.max_steps);
        let _ = writeln!(s, "eval_every={}", self.eval_every);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "adam_beta1={}", fmt_g17(self.adam_beta1));
        let _ = writeln!(s, "adam_beta2={}", fmt_g17(self.adam_beta2));
        let _ = writeln!(s, "adam_eps={}", fmt_g17(self.adam_eps));
        match self.grad_clip_norm {
            Some(c) => {
                let _ = writeln!(s, "grad_clip_norm={}", fmt_g17(c));
            }
            None => s.push_str("grad_clip_norm=none\n"),
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f64> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(n: usize) -> Self {
        Self { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }
}

pub fn global_norm<T: Real>(g: &[T]) -> T {
    g.iter().map(|&v| v * v).sum::<T>().sqrt()
}

/// One bias-corrected Adam update. Gradients are rescaled first when their
/// global norm exceeds the clip threshold.
pub fn adam_step<T: Real>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, config: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(invalid(format!(
            "Adam shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let clip = match config.grad_clip_norm {
        Some(c) => {
            let norm = global_norm(grads);
            let c = T::lit(c);
            if norm > c {
                c / norm
            } else {
                T::one()
            }
        }
        None => T::one(),
    };
    state.t += 1;
    let (b1, b2) = (T::lit(config.adam_beta1), T::lit(config.adam_beta2));
    let lr = T::lit(config.learning_rate);
    let eps = T::lit(config.adam_eps);
    let t = state.t as i32;
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for i in 0..params.len() {
        let g = grads[i] * clip;
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Mean negative log-likelihood of the batch recorded on `tape`.
///
/// Non-finite per-pair log densities abort with the index of the first
/// offending pair.
pub fn nll_loss<T: Real, M: ConditionalModel<T>>(
    tape: &mut Tape<T>,
    model: &M,
    params: Var,
    xs: &Tensor<T>,
    ys: &Tensor<T>,
) -> Result<Var> {
    let rows = xs.dims2().0;
    if rows == 0 {
        return Err(invalid("empty batch"));
    }
    let lp = model.log_prob_graph(tape, &params, xs, ys)?;
    if let Some(index) = tape.value(&lp).data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss { index });
    }
    let total = tape.sum(&lp)?;
    tape.scale(&total, -T::one() / T::count(rows))
}

/// Loss and gradient with respect to the model's flat parameters.
pub fn loss_and_grad<T: Real, M: ConditionalModel<T>>(model: &M, xs: &Tensor<T>, ys: &Tensor<T>) -> Result<(T, Vec<T>)> {
    let mut tape = Tape::new();
    let params = tape.leaf(Tensor::row(model.params().to_vec()));
    let loss = nll_loss(&mut tape, model, params, xs, ys)?;
    let value = tape.value(&loss).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { index: 0 });
    }
    let grads = tape.backward(loss)?;
    Ok((value, grads.wrt(&tape, params).into_data()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub nll: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    pub test_nll: f64,
    pub emd: Option<f64>,
    pub demd: Option<f64>,
}

/// Training history. Wall-clock times are kept apart from the numeric
/// records so the latter are reproducible byte for byte.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub wall_seconds: Vec<f64>,
    pub learning_rate: f64,
    pub batch_size: usize,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_g17).unwrap_or_default()
}

impl TrainLog {
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,nll,grad_norm,learning_rate,batch_size\n");
        for r in &self.steps {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.step,
                fmt_g17(r.nll),
                fmt_g17(r.grad_norm),
                fmt_g17(self.learning_rate),
                self.batch_size
            );
        }
        s
    }

    pub fn evals_csv(&self) -> String {
        let mut s = String::from("step,test_nll,emd,demd\n");
        for r in &self.evals {
            let _ = writeln!(s, "{},{},{},{}", r.step, fmt_g17(r.test_nll), opt(r.emd), opt(r.demd));
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("step,wall_seconds\n");
        for (r, t) in self.steps.iter().zip(&self.wall_seconds) {
            let _ = writeln!(s, "{},{:.6}", r.step, t);
        }
        s
    }

    /// Mean batch NLL over the last `window` steps.
    pub fn smoothed_nll(&self, window: usize) -> Option<f64> {
        let n = self.steps.len();
        if n == 0 || window == 0 {
            return None;
        }
        let tail = &self.steps[n.saturating_sub(window)..];
        Some(tail.iter().map(|r| r.nll).sum::<f64>() / tail.len() as f64)
    }
}

/// Why a run stopped early.
#[derive(Debug)]
pub struct Abort {
    pub step: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct TrainRun<M> {
    /// Final parameters, or the last finite ones after an abort.
    pub model: M,
    pub log: TrainLog,
    pub abort: Option<Abort>,
}

/// Draws minibatch row indices with replacement.
pub struct BatchSampler {
    rng: ChaCha8Rng,
    n: usize,
    size: usize,
}

impl BatchSampler {
    pub fn new(n: usize, size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self { rng, n, size }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.size).map(|_| self.rng.random_range(0..self.n)).collect()
    }
}

/// Held-out NLL of a dataset under the model.
pub fn dataset_nll<M: ConditionalModel<f64>>(model: &M, data: &Dataset) -> Result<f64> {
    avg_nll(&model.log_prob_batch(data.xs(), data.ys())?)
}

pub fn train<M: ConditionalModel<f64>>(model: M, data: &Dataset, config: &TrainConfig) -> Result<TrainRun<M>> {
    train_with(model, data, config, None, |_, _| Ok(()))
}

/// Runs `config.max_steps` Adam steps. Every `eval_every` steps the held-out
/// NLL on `eval_set` (if any) is logged and `checkpoint` is called with the
/// current model.
pub fn train_with<M, F>(
    model: M,
    data: &Dataset,
    config: &TrainConfig,
    eval_set: Option<&Dataset>,
    mut checkpoint: F,
) -> Result<TrainRun<M>>
where
    M: ConditionalModel<f64>,
    F: FnMut(usize, &M) -> Result<()>,
{
    config.validate()?;
    if data.split != crate::data::Split::Train {
        return Err(invalid("training requires the train split"));
    }
    if data.cond_dim() != model.cond_dim() || data.target_dim() != model.target_dim() {
        return Err(invalid(format!(
            "dataset dims ({}, {}) do not match model dims ({}, {})",
            data.cond_dim(),
            data.target_dim(),
            model.cond_dim(),
            model.target_dim()
        )));
    }
    let mut model = model;
    let mut log = TrainLog { learning_rate: config.learning_rate, batch_size: config.batch_size, ..TrainLog::default() };
    let mut state = AdamState::new(model.params().len());
    let mut sampler = BatchSampler::new(data.len(), config.batch_size, config.seed);
    let start = Instant::now();
    for step in 0..config.max_steps {
        let idx = sampler.next_batch();
        let (xs, ys) = data.gather(&idx)?;
        let (loss, grads) = match loss_and_grad(&model, &xs, &ys) {
            Ok(v) => v,
            Err(error @ Error::NonFiniteLoss { .. }) | Err(error @ Error::NumericalBlowUp { .. }) => {
                let error = match error {
                    Error::NonFiniteLoss { index } => Error::NonFiniteLoss { index: idx[index.min(idx.len() - 1)] },
                    other => other,
                };
                return Ok(TrainRun { model, log, abort: Some(Abort { step, error }) });
            }
            Err(e) => return Err(e),
        };
        let grad_norm = global_norm(&grads);
        if !grad_norm.is_finite() {
            let error = Error::Invalid(format!("non-finite gradient at step {step}"));
            return Ok(TrainRun { model, log, abort: Some(Abort { step, error }) });
        }
        let mut next = model.params().to_vec();
        adam_step(&mut next, &grads, &mut state, config)?;
        model.params_mut().copy_from_slice(&next);
        log.steps.push(StepRecord { step, nll: loss, grad_norm });
        log.wall_seconds.push(start.elapsed().as_secs_f64());
        let done = step + 1;
        if config.eval_every > 0 && (done % config.eval_every == 0 || done == config.max_steps) {
            if let Some(test) = eval_set {
                let test_nll = dataset_nll(&model, test)?;
                log.evals.push(EvalRecord { step: done, test_nll, emd: None, demd: None });
            }
            checkpoint(done, &model)?;
        }
    }
    Ok(TrainRun { model, log, abort: None })
}
