//! Forward and vector-Jacobian rules for every recorded operation.
//!
//! Rank-1 tensors are treated as single rows. Broadcasting is limited to the
//! bias-add case: the right operand of `Add`/`Sub` may be a `[1, n]` row
//! applied to every row of an `[m, n]` left operand, and the weight operand of
//! `BatchedMatVec` may be a single row shared by the whole batch.

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OpKind<T: Real> {
    /// `[m, k] x [k, n] -> [m, n]`
    Matmul,
    Add,
    Sub,
    /// Elementwise product of equal shapes.
    Mul,
    Tanh,
    /// Sum of all entries to a scalar.
    Sum,
    /// Per-row sum, `[m, n] -> [m, 1]`.
    RowSum,
    /// Column-wise concatenation of inputs with equal row counts.
    Concat,
    Scale(T),
    /// Adds a constant to every entry.
    Shift(T),
    Neg,
    Exp,
    Log,
    /// Row-wise softmax.
    Softmax,
    /// Row-wise log-softmax.
    LogSoftmax,
    /// Row-wise log-sum-exp, `[m, n] -> [m, 1]`.
    LogSumExp,
    Square,
    /// Columns `start..start + len` of every row.
    SliceCols { start: usize, len: usize },
    /// Per-row matrix-vector product: row `b` of `h` (`[B, in]`) times the
    /// row-major `[in, out]` matrix stored in row `b` of `w` (`[B, in*out]`,
    /// or `[1, in*out]` shared across the batch). Output `[B, out]`.
    BatchedMatVec,
}

impl<T: Real> OpKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Tanh => "tanh",
            OpKind::Sum => "sum",
            OpKind::RowSum => "row_sum",
            OpKind::Concat => "concat",
            OpKind::Scale(_) => "scale",
            OpKind::Shift(_) => "shift",
            OpKind::Neg => "neg",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Softmax => "softmax",
            OpKind::LogSoftmax => "log_softmax",
            OpKind::LogSumExp => "logsumexp",
            OpKind::Square => "square",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::BatchedMatVec => "batched_matvec",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            OpKind::Matmul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::BatchedMatVec => {
                Some(2)
            }
            OpKind::Concat => None,
            _ => Some(1),
        }
    }
}

fn shape_err<T: Real>(op: &OpKind<T>, a: &Tensor<T>, b: &Tensor<T>) -> Error {
    Error::Shape {
        op: op.name(),
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn mat<T: Real>(rows: usize, cols: usize, data: Vec<T>) -> Tensor<T> {
    Tensor::matrix(rows, cols, data).expect("internal shape bookkeeping")
}

/// Whether `b` may be added to `a`: equal shapes or a broadcast bias row.
fn bias_compatible<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Option<bool> {
    if a.shape() == b.shape() {
        return Some(false);
    }
    let (_, ac) = a.dims2();
    let (br, bc) = b.dims2();
    (br == 1 && bc == ac && a.shape().len() == 2).then_some(true)
}

/// Evaluates `op` on `inputs`.
pub fn forward<T: Real>(op: &OpKind<T>, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if let Some(n) = op.arity() {
        if inputs.len() != n {
            return Err(Error::Invalid(format!(
                "{} expects {n} inputs, got {}",
                op.name(),
                inputs.len()
            )));
        }
    } else if inputs.is_empty() {
        return Err(Error::Invalid(format!("{} expects at least one input", op.name())));
    }
    let a = inputs[0];
    let out = match *op {
        OpKind::Matmul => {
            let b = inputs[1];
            let (m, k) = a.dims2();
            let (k2, n) = b.dims2();
            if k != k2 {
                return Err(shape_err(op, a, b));
            }
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    if av == T::zero() {
                        continue;
                    }
                    for (o, &bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o = *o + av * bv;
                    }
                }
            }
            mat(m, n, out)
        }
        OpKind::Add | OpKind::Sub => {
            let b = inputs[1];
            let sign = if matches!(op, OpKind::Add) { T::one() } else { -T::one() };
            match bias_compatible(a, b) {
                Some(false) => Tensor::new(
                    a.shape().to_vec(),
                    a.data().iter().zip(b.data()).map(|(&x, &y)| x + sign * y).collect(),
                )?,
                Some(true) => {
                    let (_, n) = a.dims2();
                    let bd = b.data();
                    let mut data = Vec::with_capacity(a.len());
                    for row in a.data().chunks_exact(n) {
                        data.extend(row.iter().zip(bd).map(|(&x, &y)| x + sign * y));
                    }
                    Tensor::new(a.shape().to_vec(), data)?
                }
                None => return Err(shape_err(op, a, b)),
            }
        }
        OpKind::Mul => {
            let b = inputs[1];
            if a.shape() != b.shape() {
                return Err(shape_err(op, a, b));
            }
            Tensor::new(
                a.shape().to_vec(),
                a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect(),
            )?
        }
        OpKind::Tanh => a.map(|v| v.tanh()),
        OpKind::Sum => Tensor::scalar(a.data().iter().copied().sum()),
        OpKind::RowSum => {
            let (m, n) = a.dims2();
            let data = (0..m).map(|r| a.data()[r * n..(r + 1) * n].iter().copied().sum()).collect();
            mat(m, 1, data)
        }
        OpKind::Concat => {
            let (m, _) = a.dims2();
            let mut total = 0;
            for t in inputs {
                let (r, c) = t.dims2();
                if r != m {
                    return Err(shape_err(op, a, t));
                }
                total += c;
            }
            let mut out = Vec::with_capacity(m * total);
            for r in 0..m {
                for t in inputs {
                    out.extend_from_slice(t.row_slice(r));
                }
            }
            mat(m, total, out)
        }
        OpKind::Scale(c) => a.map(|v| v * c),
        OpKind::Shift(c) => a.map(|v| v + c),
        OpKind::Neg => a.map(|v| -v),
        OpKind::Exp => a.map(|v| v.exp()),
        OpKind::Log => a.map(|v| v.ln()),
        OpKind::Square => a.map(|v| v * v),
        OpKind::Softmax | OpKind::LogSoftmax | OpKind::LogSumExp => {
            let (m, n) = a.dims2();
            let mut out = Vec::with_capacity(m * n);
            for r in 0..m {
                let row = &a.data()[r * n..(r + 1) * n];
                let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
                match op {
                    OpKind::Softmax => out.extend(row.iter().map(|&v| (v - lse).exp())),
                    OpKind::LogSoftmax => out.extend(row.iter().map(|&v| v - lse)),
                    _ => out.push(lse),
                }
            }
            if matches!(op, OpKind::LogSumExp) {
                mat(m, 1, out)
            } else {
                Tensor::new(a.shape().to_vec(), out)?
            }
        }
        OpKind::SliceCols { start, len } => {
            let (m, n) = a.dims2();
            if len == 0 || start + len > n {
                return Err(Error::Shape {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: vec![start, len],
                });
            }
            let mut out = Vec::with_capacity(m * len);
            for r in 0..m {
                out.extend_from_slice(&a.data()[r * n + start..r * n + start + len]);
            }
            mat(m, len, out)
        }
        OpKind::BatchedMatVec => {
            let w = inputs[1];
            let (b, inp) = a.dims2();
            let (wb, wc) = w.dims2();
            if (wb != b && wb != 1) || wc % inp != 0 {
                return Err(shape_err(op, a, w));
            }
            let outd = wc / inp;
            let mut out = vec![T::zero(); b * outd];
            for r in 0..b {
                let wr = if wb == 1 { 0 } else { r };
                let wrow = &w.data()[wr * wc..(wr + 1) * wc];
                let hrow = &a.data()[r * inp..(r + 1) * inp];
                let orow = &mut out[r * outd..(r + 1) * outd];
                for (i, &hv) in hrow.iter().enumerate() {
                    for (o, &wv) in orow.iter_mut().zip(&wrow[i * outd..(i + 1) * outd]) {
                        *o = *o + hv * wv;
                    }
                }
            }
            mat(b, outd, out)
        }
    };
    Ok(out)
}

/// Vector-Jacobian products: given the upstream gradient of the output,
/// returns one gradient per input (same shapes as the inputs).
pub fn vjp<T: Real>(
    op: &OpKind<T>,
    inputs: &[&Tensor<T>],
    output: &Tensor<T>,
    grad: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let a = inputs[0];
    let g = grad.data();
    let same = |data: Vec<T>| Tensor::new(a.shape().to_vec(), data).expect("vjp shape");
    match *op {
        OpKind::Matmul => {
            let b = inputs[1];
            let (m, k) = a.dims2();
            let (_, n) = b.dims2();
            let (ad, bd) = (a.data(), b.data());
            let mut ga = vec![T::zero(); m * k];
            let mut gb = vec![T::zero(); k * n];
            for i in 0..m {
                for p in 0..k {
                    let mut acc = T::zero();
                    for j in 0..n {
                        acc = acc + g[i * n + j] * bd[p * n + j];
                    }
                    ga[i * k + p] = acc;
                    let av = ad[i * k + p];
                    for j in 0..n {
                        gb[p * n + j] = gb[p * n + j] + av * g[i * n + j];
                    }
                }
            }
            vec![same(ga), Tensor::new(b.shape().to_vec(), gb).expect("vjp shape")]
        }
        OpKind::Add | OpKind::Sub => {
            let b = inputs[1];
            let sign = if matches!(op, OpKind::Add) { T::one() } else { -T::one() };
            let gb = if a.shape() == b.shape() {
                g.iter().map(|&v| sign * v).collect()
            } else {
                let (m, n) = a.dims2();
                let mut acc = vec![T::zero(); n];
                for r in 0..m {
                    for c in 0..n {
                        acc[c] = acc[c] + g[r * n + c];
                    }
                }
                acc.into_iter().map(|v| sign * v).collect()
            };
            vec![
                same(g.to_vec()),
                Tensor::new(b.shape().to_vec(), gb).expect("vjp shape"),
            ]
        }
        OpKind::Mul => {
            let b = inputs[1];
            let ga = g.iter().zip(b.data()).map(|(&gv, &bv)| gv * bv).collect();
            let gb = g.iter().zip(a.data()).map(|(&gv, &av)| gv * av).collect();
            vec![same(ga), Tensor::new(b.shape().to_vec(), gb).expect("vjp shape")]
        }
        OpKind::Tanh => vec![same(
            g.iter()
                .zip(output.data())
                .map(|(&gv, &y)| gv * (T::one() - y * y))
                .collect(),
        )],
        OpKind::Sum => vec![Tensor::filled(a.shape().to_vec(), g[0])],
        OpKind::RowSum => {
            let (_, n) = a.dims2();
            vec![same((0..a.len()).map(|i| g[i / n]).collect())]
        }
        OpKind::Concat => {
            let (m, total) = output.dims2();
            let mut offset = 0;
            inputs
                .iter()
                .map(|t| {
                    let (_, c) = t.dims2();
                    let mut d = Vec::with_capacity(m * c);
                    for r in 0..m {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + c]);
                    }
                    offset += c;
                    Tensor::new(t.shape().to_vec(), d).expect("vjp shape")
                })
                .collect()
        }
        OpKind::Scale(c) => vec![same(g.iter().map(|&v| v * c).collect())],
        OpKind::Shift(_) => vec![same(g.to_vec())],
        OpKind::Neg => vec![same(g.iter().map(|&v| -v).collect())],
        OpKind::Exp => vec![same(
            g.iter().zip(output.data()).map(|(&gv, &y)| gv * y).collect(),
        )],
        OpKind::Log => vec![same(g.iter().zip(a.data()).map(|(&gv, &x)| gv / x).collect())],
        OpKind::Square => vec![same(
            g.iter()
                .zip(a.data())
                .map(|(&gv, &x)| gv * (x + x))
                .collect(),
        )],
        OpKind::Softmax => {
            let (m, n) = a.dims2();
            let y = output.data();
            let mut ga = vec![T::zero(); m * n];
            for r in 0..m {
                let s = r * n;
                let dot: T = (0..n).map(|j| g[s + j] * y[s + j]).sum();
                for j in 0..n {
                    ga[s + j] = y[s + j] * (g[s + j] - dot);
                }
            }
            vec![same(ga)]
        }
        OpKind::LogSoftmax => {
            let (m, n) = a.dims2();
            let y = output.data();
            let mut ga = vec![T::zero(); m * n];
            for r in 0..m {
                let s = r * n;
                let total: T = g[s..s + n].iter().copied().sum();
                for j in 0..n {
                    ga[s + j] = g[s + j] - y[s + j].exp() * total;
                }
            }
            vec![same(ga)]
        }
        OpKind::LogSumExp => {
            let (m, n) = a.dims2();
            let (x, y) = (a.data(), output.data());
            let mut ga = vec![T::zero(); m * n];
            for r in 0..m {
                for j in 0..n {
                    ga[r * n + j] = g[r] * (x[r * n + j] - y[r]).exp();
                }
            }
            vec![same(ga)]
        }
        OpKind::SliceCols { start, len } => {
            let (m, n) = a.dims2();
            let mut ga = vec![T::zero(); m * n];
            for r in 0..m {
                ga[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
            }
            vec![same(ga)]
        }
        OpKind::BatchedMatVec => {
            let w = inputs[1];
            let (b, inp) = a.dims2();
            let (wb, wc) = w.dims2();
            let outd = wc / inp;
            let mut gh = vec![T::zero(); b * inp];
            let mut gw = vec![T::zero(); wb * wc];
            for r in 0..b {
                let wr = if wb == 1 { 0 } else { r };
                let wrow = &w.data()[wr * wc..(wr + 1) * wc];
                let grow = &g[r * outd..(r + 1) * outd];
                let hrow = &a.data()[r * inp..(r + 1) * inp];
                for i in 0..inp {
                    let wi = &wrow[i * outd..(i + 1) * outd];
                    gh[r * inp + i] = wi.iter().zip(grow).map(|(&wv, &gv)| wv * gv).sum();
                    let hv = hrow[i];
                    let gwi = &mut gw[wr * wc + i * outd..wr * wc + (i + 1) * outd];
                    for (o, &gv) in gwi.iter_mut().zip(grow) {
                        *o = *o + hv * gv;
                    }
                }
            }
            vec![same(gh), Tensor::new(w.shape().to_vec(), gw).expect("vjp shape")]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let out = forward(&OpKind::Matmul, &[&m(2, 2, &[1., 2., 3., 4.]), &m(2, 1, &[1., 1.])]).unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[3.0, 7.0]);
    }

    #[test]
    fn tanh_of_zero() {
        let out = forward(&OpKind::Tanh, &[&Tensor::from_vec(vec![0.0])]).unwrap();
        assert_eq!(out.data(), &[0.0]);
    }

    #[test]
    fn add_zeros_is_identity() {
        let x = m(2, 3, &[1., -2., 3.5, 0.25, 9., -7.]);
        let out = forward(&OpKind::Add, &[&x, &Tensor::zeros_like(&x)]).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let err = forward(&OpKind::Matmul, &[&m(2, 3, &[0.; 6]), &m(2, 1, &[0.; 2])]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 1]"), "{msg}");
        let err = forward(&OpKind::Mul, &[&m(1, 2, &[0.; 2]), &m(2, 1, &[0.; 2])]).unwrap_err();
        assert!(err.to_string().contains("mul"));
    }

    #[test]
    fn bias_add_broadcasts_rows_only() {
        let x = m(2, 2, &[1., 2., 3., 4.]);
        let b = m(1, 2, &[10., 20.]);
        let out = forward(&OpKind::Add, &[&x, &b]).unwrap();
        assert_eq!(out.data(), &[11., 22., 13., 24.]);
        assert!(forward(&OpKind::Add, &[&x, &m(2, 1, &[1., 1.])]).is_err());
    }

    #[test]
    fn logsumexp_is_stable_for_large_inputs() {
        let out = forward(&OpKind::LogSumExp, &[&m(1, 2, &[1000.0, 1000.0])]).unwrap();
        assert!((out.item() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let sm = forward(&OpKind::Softmax, &[&m(1, 3, &[0., 0., 0.])]).unwrap();
        assert!(sm.data().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn batched_matvec_shared_and_per_row() {
        // h = [[1, 2], [3, 4]]; W (2x1) = [[1], [-1]] shared
        let h = m(2, 2, &[1., 2., 3., 4.]);
        let shared = m(1, 2, &[1., -1.]);
        let out = forward(&OpKind::BatchedMatVec, &[&h, &shared]).unwrap();
        assert_eq!(out.data(), &[-1., -1.]);
        let per_row = m(2, 2, &[1., 0., 0., 1.]);
        let out = forward(&OpKind::BatchedMatVec, &[&h, &per_row]).unwrap();
        assert_eq!(out.data(), &[1., 4.]);
    }
}
