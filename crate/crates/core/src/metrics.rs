//! Sample-based evaluation metrics: average NLL, exact earth mover's
//! distance between equal-size point sets, and DEMD.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Largest set size accepted by [`emd_exact`].
pub const MAX_EMD_POINTS: usize = 4096;

/// Default covariance regularization for Gaussian fits.
pub const DEFAULT_REG: f64 = 1e-6;

/// Number of seeds DEMD is averaged over in reports.
pub const DEMD_REPEATS: usize = 10;

/// Uniformly weighted points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T: Real = f64> {
    points: Vec<T>,
    dim: usize,
}

impl<T: Real> SampleSet<T> {
    pub fn new(points: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(invalid(format!(
                "{} coordinates do not form a non-empty set of {dim}-dimensional points",
                points.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(invalid("sample set has non-finite coordinates"));
        }
        Ok(Self { points, dim })
    }

    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let (_, d) = t.dims2();
        Self::new(t.data().to_vec(), d)
    }

    pub fn from_scalars(v: Vec<T>) -> Result<Self> {
        Self::new(v, 1)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[T] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn translated(&self, shift: &[T]) -> Self {
        let points = self
            .points
            .chunks(self.dim)
            .flat_map(|p| p.iter().zip(shift).map(|(&a, &b)| a + b))
            .collect();
        Self { points, dim: self.dim }
    }
}

/// `-mean(log_probs)`.
pub fn avg_nll<T: Real>(log_probs: &[T]) -> Result<T> {
    if log_probs.is_empty() {
        return Err(invalid("average NLL of an empty list"));
    }
    if let Some(i) = log_probs.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("log probability {i} is not finite")));
    }
    Ok(-log_probs.iter().copied().sum::<T>() / T::count(log_probs.len()))
}

fn euclid<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

/// Minimum-cost perfect matching on a square cost matrix (row-major, `n*n`).
/// Returns `assignment[row] = column`.
///
/// Shortest augmenting paths with row/column potentials, `O(n^3)`.
pub fn hungarian<T: Real>(cost: &[T], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    // 1-based bookkeeping with a virtual column 0
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut way = vec![0usize; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut minv = vec![inf; n + 1];
    let mut used = vec![false; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = inf);
        used.iter_mut().for_each(|f| *f = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let base = (i0 - 1) * n;
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[base + j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] = u[owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Exact EMD between equal-size uniform sets: the mean Euclidean distance
/// under the optimal perfect matching.
pub fn emd_exact<T: Real>(a: &SampleSet<T>, b: &SampleSet<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(invalid(format!("point dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    if a.len() != b.len() {
        return Err(invalid(format!("EMD needs equal-size sets, got {} and {}", a.len(), b.len())));
    }
    let n = a.len();
    if n > MAX_EMD_POINTS {
        return Err(invalid(format!(
            "EMD over {n} points exceeds the limit of {MAX_EMD_POINTS}; subsample both sets first"
        )));
    }
    let mut cost = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cost.push(euclid(a.point(i), b.point(j)));
        }
    }
    let assignment = hungarian(&cost, n);
    let total: T = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / T::count(n))
}

/// Mean and covariance of a maximum-likelihood Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit<T: Real = f64> {
    pub mean: Vec<T>,
    /// Row-major `d x d`.
    pub covariance: Vec<T>,
}

impl<T: Real> GaussianFit<T> {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov(&self, i: usize, j: usize) -> T {
        self.covariance[i * self.dim() + j]
    }

    /// Lower Cholesky factor. Non-positive pivots (singular directions)
    /// yield zero columns, so the factor exists for any PSD covariance.
    pub fn cholesky(&self) -> Vec<T> {
        let d = self.dim();
        let mut l = vec![T::zero(); d * d];
        for j in 0..d {
            let mut diag = self.cov(j, j);
            for k in 0..j {
                diag = diag - l[j * d + k] * l[j * d + k];
            }
            if diag <= T::zero() {
                continue;
            }
            let pivot = diag.sqrt();
            l[j * d + j] = pivot;
            for i in j + 1..d {
                let mut s = self.cov(i, j);
                for k in 0..j {
                    s = s - l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / pivot;
            }
        }
        l
    }

    /// `n` seeded draws `mean + L z`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet<T>> {
        let d = self.dim();
        let l = self.cholesky();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n * d);
        let mut z = vec![T::zero(); d];
        for _ in 0..n {
            for zi in z.iter_mut() {
                let s: f64 = StandardNormal.sample(&mut rng);
                *zi = T::lit(s);
            }
            for i in 0..d {
                let mut v = self.mean[i];
                for k in 0..=i {
                    v = v + l[i * d + k] * z[k];
                }
                out.push(v);
            }
        }
        SampleSet::new(out, d)
    }
}

/// Sample mean and `1/n` covariance plus `reg * I`.
pub fn gaussian_mle_fit<T: Real>(x: &SampleSet<T>, reg: T) -> Result<GaussianFit<T>> {
    let n = x.len();
    if n < 2 {
        return Err(invalid("a Gaussian fit needs at least two points"));
    }
    if !(reg >= T::zero()) {
        return Err(invalid("regularization must be non-negative"));
    }
    let d = x.dim();
    let nf = T::count(n);
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(x.point(i)) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / nf);
    let mut cov = vec![T::zero(); d * d];
    for i in 0..n {
        let p = x.point(i);
        for r in 0..d {
            for c in r..d {
                cov[r * d + c] = cov[r * d + c] + (p[r] - mean[r]) * (p[c] - mean[c]);
            }
        }
    }
    for r in 0..d {
        for c in r..d {
            let v = cov[r * d + c] / nf + if r == c { reg } else { T::zero() };
            cov[r * d + c] = v;
            cov[c * d + r] = v;
        }
    }
    Ok(GaussianFit { mean, covariance: cov })
}

/// EMD between the samples and an equal-size draw from their Gaussian fit.
pub fn demd<T: Real>(model_samples: &SampleSet<T>, reg: T, seed: u64) -> Result<T> {
    let fit = gaussian_mle_fit(model_samples, reg)?;
    let gaus = fit.sample(model_samples.len(), seed)?;
    emd_exact(model_samples, &gaus)
}

/// Mean and population standard deviation.
pub fn mean_std<T: Real>(values: &[T]) -> (T, T) {
    let n = T::count(values.len().max(1));
    let mean = values.iter().copied().sum::<T>() / n;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, var.sqrt())
}

/// DEMD mean and standard deviation over `repeats` Gaussian draws with
/// seeds `seed, seed + 1, ...`.
pub fn demd_stats<T: Real>(model_samples: &SampleSet<T>, reg: T, seed: u64, repeats: usize) -> Result<(T, T)> {
    if repeats == 0 {
        return Err(invalid("DEMD needs at least one repeat"));
    }
    let values = (0..repeats as u64)
        .map(|i| demd(model_samples, reg, seed.wrapping_add(i)))
        .collect::<Result<Vec<T>>>()?;
    Ok(mean_std(&values))
}
