use crate::error::{invalid, Result};
use crate::scalar::Real;

use super::graph::Graph;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Evaluates `f` at `point` on a fresh tape and returns the scalar value.
fn eval_at<T: Real, F>(f: &F, point: Tensor<T>) -> Result<T>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point);
    let y = f(&mut tape, x)?;
    Ok(tape.value(&y).item())
}

/// Central-difference gradient of a scalar function.
pub fn numeric_gradient<T: Real, F>(f: &F, point: &Tensor<T>, step: T) -> Result<Tensor<T>>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let two = T::lit(2.0);
    let mut out = Tensor::zeros_like(point);
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] = plus.data()[i] + step;
        let mut minus = point.clone();
        minus.data_mut()[i] = minus.data()[i] - step;
        out.data_mut()[i] = (eval_at(f, plus)? - eval_at(f, minus)?) / (two * step);
    }
    Ok(out)
}

/// Reverse-mode gradient of a scalar function.
pub fn analytic_gradient<T: Real, F>(f: &F, point: &Tensor<T>) -> Result<Tensor<T>>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(point.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    Ok(grads.wrt(&tape, x))
}

/// Largest per-coordinate discrepancy between the tape gradient and central
/// differences, measured as `|a - n| / max(1, |a|, |n|)`.
pub fn grad_check<T: Real, F>(f: F, point: &Tensor<T>, step: T) -> Result<T>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if step <= T::zero() {
        return Err(invalid("finite-difference step must be positive"));
    }
    let analytic = analytic_gradient(&f, point)?;
    let numeric = numeric_gradient(&f, point, step)?;
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / T::one().max(a.abs()).max(n.abs()))
        .fold(T::zero(), T::max))
}
