//! Seeded synthetic datasets with known conditional distributions.
//!
//! The toy task draws `x` uniformly and `y` from one of several noisy lines
//! active at `x`, so the number of modes of `P(y | x)` changes with `x`. The
//! trajectory task maps a start pose to a 2D endpoint drawn from a few
//! destination modes expressed in the agent's frame.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::config::{field_error, fmt_g17, list_values, KeyValues};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    /// Train and test draw from distinct ChaCha streams of the same seed.
    fn stream(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

fn rng_for(seed: u64, split: Split) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream());
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    xs: Tensor<f64>,
    ys: Tensor<f64>,
    pub seed: u64,
    pub generator_id: String,
    pub split: Split,
}

impl Dataset {
    pub fn new(xs: Tensor<f64>, ys: Tensor<f64>, seed: u64, generator_id: &str, split: Split) -> Result<Self> {
        if xs.dims2().0 != ys.dims2().0 {
            return Err(invalid("inputs and targets must have the same number of rows"));
        }
        if !xs.is_finite() || !ys.is_finite() {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Self { xs, ys, seed, generator_id: generator_id.to_string(), split })
    }

    pub fn len(&self) -> usize {
        self.xs.dims2().0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cond_dim(&self) -> usize {
        self.xs.dims2().1
    }

    pub fn target_dim(&self) -> usize {
        self.ys.dims2().1
    }

    pub fn xs(&self) -> &Tensor<f64> {
        &self.xs
    }

    pub fn ys(&self) -> &Tensor<f64> {
        &self.ys
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.xs.row_slice(i)
    }

    pub fn y(&self, i: usize) -> &[f64] {
        self.ys.row_slice(i)
    }

    /// Rows `indices` gathered into `([B, c], [B, d])` tensors.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let (c, d) = (self.cond_dim(), self.target_dim());
        let mut xs = Vec::with_capacity(indices.len() * c);
        let mut ys = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            xs.extend_from_slice(self.x(i));
            ys.extend_from_slice(self.y(i));
        }
        Ok((Tensor::matrix(indices.len(), c, xs)?, Tensor::matrix(indices.len(), d, ys)?))
    }

    /// CSV text: header `x0,..,y0,..` then one pair per line.
    pub fn to_csv(&self) -> String {
        let (c, d) = (self.cond_dim(), self.target_dim());
        let mut out = String::new();
        let header: Vec<String> = (0..c).map(|i| format!("x{i}")).chain((0..d).map(|i| format!("y{i}"))).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            let row: Vec<String> = self.x(i).iter().chain(self.y(i)).map(|&v| fmt_g17(v)).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, seed: u64, generator_id: &str, split: Split) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| invalid("empty dataset file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let c = cols.iter().take_while(|h| h.starts_with('x')).count();
        let d = cols.len() - c;
        let expected: Vec<String> = (0..c).map(|i| format!("x{i}")).chain((0..d).map(|i| format!("y{i}"))).collect();
        if c == 0 || d == 0 || cols != expected {
            return Err(invalid(format!("bad dataset header `{header}`")));
        }
        let (mut xs, mut ys, mut n) = (Vec::new(), Vec::new(), 0);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| invalid(format!("dataset line {}: unparsable value", i + 2)))?;
            if vals.len() != c + d {
                return Err(invalid(format!("dataset line {}: expected {} values", i + 2, c + d)));
            }
            xs.extend_from_slice(&vals[..c]);
            ys.extend_from_slice(&vals[c..]);
            n += 1;
        }
        if n == 0 {
            return Err(invalid("dataset has no rows"));
        }
        Self::new(Tensor::matrix(n, c, xs)?, Tensor::matrix(n, d, ys)?, seed, generator_id, split)
    }
}

/// One line `y = slope * x + intercept`, active for `x` in `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    pub slope: f64,
    pub intercept: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Branch {
    pub const fn new(slope: f64, intercept: f64, lo: f64, hi: f64) -> Self {
        Self { slope, intercept, lo, hi }
    }

    pub fn active(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn mean(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub x_range: (f64, f64),
    pub branches: Vec<Branch>,
    pub noise_sigma: f64,
    pub n_samples: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            x_range: (-10.0, 10.0),
            branches: vec![
                Branch::new(1.0, 0.0, -10.0, 10.0),
                Branch::new(-1.0, 0.0, -10.0, 10.0),
                Branch::new(0.3, 4.0, 0.0, 10.0),
                Branch::new(0.0, -5.0, -10.0, 0.0),
                Branch::new(2.0, -8.0, 5.0, 10.0),
            ],
            noise_sigma: 0.1,
            n_samples: 10_000,
        }
    }
}

pub const TOY_ID: &str = "toy";
pub const TRAJ_ID: &str = "traj2d";

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.x_range;
        if !(lo < hi) {
            return Err(invalid(format!("x range [{lo}, {hi}] is empty")));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(invalid("noise_sigma must be positive"));
        }
        if self.branches.iter().any(|b| !(b.lo <= b.hi)) {
            return Err(invalid("every branch needs lo <= hi"));
        }
        if let Some((glo, ghi)) = self.coverage_gap() {
            return Err(Error::CoverageGap { lo: glo, hi: ghi });
        }
        Ok(())
    }

    /// First sub-interval of the x range with no active branch.
    pub fn coverage_gap(&self) -> Option<(f64, f64)> {
        let (lo, hi) = self.x_range;
        let mut spans: Vec<(f64, f64)> = self.branches.iter().map(|b| (b.lo, b.hi)).collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = lo;
        for (s, e) in spans {
            if s > covered {
                return Some((covered, s.min(hi)));
            }
            covered = covered.max(e);
            if covered >= hi {
                return None;
            }
        }
        Some((covered, hi))
    }

    pub fn active_branches(&self, x: f64) -> Vec<&Branch> {
        self.branches.iter().filter(|b| b.active(x)).collect()
    }

    fn check_x(&self, x: f64) -> Result<Vec<&Branch>> {
        let (lo, hi) = self.x_range;
        if !(lo <= x && x <= hi) {
            return Err(invalid(format!("x = {x} outside [{lo}, {hi}]")));
        }
        let active = self.active_branches(x);
        if active.is_empty() {
            return Err(Error::CoverageGap { lo: x, hi: x });
        }
        Ok(active)
    }

    fn draw_y(&self, active: &[&Branch], x: f64, rng: &mut ChaCha8Rng) -> f64 {
        let b = active[rng.random_range(0..active.len())];
        b.mean(x) + self.noise_sigma * normal(rng)
    }
}

pub fn gen_toy(config: &ToyConfig, seed: u64) -> Result<Dataset> {
    gen_toy_split(config, seed, Split::Train)
}

pub fn gen_toy_split(config: &ToyConfig, seed: u64, split: Split) -> Result<Dataset> {
    config.validate()?;
    if config.n_samples == 0 {
        return Err(invalid("n_samples must be positive"));
    }
    let mut rng = rng_for(seed, split);
    let (lo, hi) = config.x_range;
    let mut xs = Vec::with_capacity(config.n_samples);
    let mut ys = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let x = rng.random_range(lo..=hi);
        let active = config.active_branches(x);
        ys.push(config.draw_y(&active, x, &mut rng));
        xs.push(x);
    }
    let n = config.n_samples;
    Dataset::new(Tensor::matrix(n, 1, xs)?, Tensor::matrix(n, 1, ys)?, seed, TOY_ID, split)
}

/// `n` independent draws from the generative `P(y | x)`.
pub fn true_conditional_sample(config: &ToyConfig, x: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    let active = config.check_x(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| config.draw_y(&active, x, &mut rng)).collect())
}

/// Log density of the uniform mixture over the branches active at `x`.
pub fn true_conditional_log_prob(config: &ToyConfig, x: f64, y: f64) -> Result<f64> {
    let active = config.check_x(x)?;
    let s = config.noise_sigma;
    let terms: Vec<f64> = active
        .iter()
        .map(|b| {
            let r = (y - b.mean(x)) / s;
            -0.5 * r * r - s.ln() - 0.5 * (2.0 * PI).ln()
        })
        .collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln() - (active.len() as f64).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajConfig {
    /// Destination offsets in the agent frame (x forward, y left).
    pub mode_centers: Vec<[f64; 2]>,
    pub mode_weights: Vec<f64>,
    pub noise_sigma: f64,
    pub n_samples: usize,
    /// Start positions are uniform on `[-start_extent, start_extent]^2`.
    pub start_extent: f64,
}

impl Default for TrajConfig {
    fn default() -> Self {
        Self {
            mode_centers: vec![[3.0, 0.0], [2.0, 2.0], [2.0, -2.0]],
            mode_weights: vec![0.5, 0.25, 0.25],
            noise_sigma: 0.2,
            n_samples: 10_000,
            start_extent: 1.0,
        }
    }
}

impl TrajConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.mode_centers.len();
        if k == 0 || self.mode_weights.len() != k {
            return Err(invalid("need one weight per mode center"));
        }
        let total: f64 = self.mode_weights.iter().sum();
        if self.mode_weights.iter().any(|&w| w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(invalid("mode weights must lie on the simplex"));
        }
        for i in 0..k {
            for j in i + 1..k {
                if self.mode_centers[i] == self.mode_centers[j] {
                    return Err(invalid(format!("mode centers {i} and {j} coincide")));
                }
            }
        }
        if !(self.noise_sigma >= 0.0) || !(self.start_extent >= 0.0) {
            return Err(invalid("noise_sigma and start_extent must be non-negative"));
        }
        Ok(())
    }

    fn pick_mode(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &w) in self.mode_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return j;
            }
        }
        self.mode_weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    }

    /// Endpoint mean for mode `j` from the pose encoding `x = (px, py, cos, sin)`.
    pub fn mode_mean(&self, x: &[f64], j: usize) -> [f64; 2] {
        let [cx, cy] = self.mode_centers[j];
        let (c, s) = (x[2], x[3]);
        [x[0] + c * cx - s * cy, x[1] + s * cx + c * cy]
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != 4 || x.iter().any(|v| !v.is_finite()) {
            return Err(invalid("trajectory input must be 4 finite values (px, py, cos, sin)"));
        }
        Ok(())
    }
}

pub fn gen_traj2d(config: &TrajConfig, seed: u64) -> Result<Dataset> {
    gen_traj2d_split(config, seed, Split::Train)
}

pub fn gen_traj2d_split(config: &TrajConfig, seed: u64, split: Split) -> Result<Dataset> {
    config.validate()?;
    if config.n_samples == 0 {
        return Err(invalid("n_samples must be positive"));
    }
    let mut rng = rng_for(seed, split);
    let e = config.start_extent;
    let n = config.n_samples;
    let mut xs = Vec::with_capacity(4 * n);
    let mut ys = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let px = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
        let py = if e > 0.0 { rng.random_range(-e..=e) } else { 0.0 };
        let heading: f64 = rng.random_range(0.0..2.0 * PI);
        let x = [px, py, heading.cos(), heading.sin()];
        let j = config.pick_mode(&mut rng);
        let m = config.mode_mean(&x, j);
        ys.push(m[0] + config.noise_sigma * normal(&mut rng));
        ys.push(m[1] + config.noise_sigma * normal(&mut rng));
        xs.extend_from_slice(&x);
    }
    Dataset::new(Tensor::matrix(n, 4, xs)?, Tensor::matrix(n, 2, ys)?, seed, TRAJ_ID, split)
}

/// `n` endpoint draws for the pose `x`.
pub fn traj_conditional_sample(config: &TrajConfig, x: &[f64], n: usize, seed: u64) -> Result<Tensor<f64>> {
    config.validate()?;
    config.check_x(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let m = config.mode_mean(x, config.pick_mode(&mut rng));
        out.push(m[0] + config.noise_sigma * normal(&mut rng));
        out.push(m[1] + config.noise_sigma * normal(&mut rng));
    }
    Tensor::matrix(n, 2, out)
}

/// Ground-truth conditional sampler for either generator.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Toy(ToyConfig),
    Traj(TrajConfig),
}

impl GroundTruth {
    pub fn id(&self) -> &'static str {
        match self {
            GroundTruth::Toy(_) => TOY_ID,
            GroundTruth::Traj(_) => TRAJ_ID,
        }
    }

    /// Draws `[n, d]` targets for conditioning vector `x`.
    pub fn sample(&self, x: &[f64], n: usize, seed: u64) -> Result<Tensor<f64>> {
        match self {
            GroundTruth::Toy(cfg) => {
                if x.len() != 1 {
                    return Err(invalid("toy inputs are scalars"));
                }
                Tensor::matrix(n, 1, true_conditional_sample(cfg, x[0], n, seed)?)
            }
            GroundTruth::Traj(cfg) => traj_conditional_sample(cfg, x, n, seed),
        }
    }

    pub fn generate(&self, seed: u64, split: Split) -> Result<Dataset> {
        match self {
            GroundTruth::Toy(cfg) => gen_toy_split(cfg, seed, split),
            GroundTruth::Traj(cfg) => gen_traj2d_split(cfg, seed, split),
        }
    }

    pub fn set_samples(&mut self, n: usize) {
        match self {
            GroundTruth::Toy(cfg) => cfg.n_samples = n,
            GroundTruth::Traj(cfg) => cfg.n_samples = n,
        }
    }

    /// Reads a generator description from key=value form.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let generator = kv.get_str("generator").unwrap_or(TOY_ID).to_string();
        match generator.as_str() {
            TOY_ID => {
                let mut cfg = ToyConfig::default();
                cfg.x_range = (kv.get_or("x_min", cfg.x_range.0)?, kv.get_or("x_max", cfg.x_range.1)?);
                cfg.noise_sigma = kv.get_or("noise_sigma", cfg.noise_sigma)?;
                cfg.n_samples = kv.get_or("n_samples", cfg.n_samples)?;
                let branches = kv.all("branch");
                if !branches.is_empty() {
                    cfg.branches = branches
                        .into_iter()
                        .map(|e| {
                            let v: Vec<f64> = list_values(e)?;
                            if v.len() != 4 {
                                return Err(Error::Config {
                                    line: e.line,
                                    field: e.key.clone(),
                                    message: "branch needs slope,intercept,lo,hi".into(),
                                });
                            }
                            Ok(Branch::new(v[0], v[1], v[2], v[3]))
                        })
                        .collect::<Result<_>>()?;
                }
                Ok(GroundTruth::Toy(cfg))
            }
            TRAJ_ID => {
                let mut cfg = TrajConfig::default();
                cfg.noise_sigma = kv.get_or("noise_sigma", cfg.noise_sigma)?;
                cfg.n_samples = kv.get_or("n_samples", cfg.n_samples)?;
                cfg.start_extent = kv.get_or("start_extent", cfg.start_extent)?;
                let modes = kv.all("mode");
                if !modes.is_empty() {
                    let mut centers = Vec::new();
                    let mut weights = Vec::new();
                    for e in modes {
                        let v: Vec<f64> = list_values(e)?;
                        if v.len() != 3 {
                            return Err(Error::Config {
                                line: e.line,
                                field: e.key.clone(),
                                message: "mode needs center_x,center_y,weight".into(),
                            });
                        }
                        centers.push([v[0], v[1]]);
                        weights.push(v[2]);
                    }
                    cfg.mode_centers = centers;
                    cfg.mode_weights = weights;
                }
                Ok(GroundTruth::Traj(cfg))
            }
            other => Err(field_error(kv, "generator", format!("unknown generator `{other}`; expected toy or traj2d"))),
        }
    }

    /// key=value description readable by [`GroundTruth::from_kv`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        match self {
            GroundTruth::Toy(cfg) => {
                let _ = writeln!(s, "generator={TOY_ID}");
                let _ = writeln!(s, "x_min={}", fmt_g17(cfg.x_range.0));
                let _ = writeln!(s, "x_max={}", fmt_g17(cfg.x_range.1));
                let _ = writeln!(s, "noise_sigma={}", fmt_g17(cfg.noise_sigma));
                for b in &cfg.branches {
                    let _ = writeln!(
                        s,
                        "branch={},{},{},{}",
                        fmt_g17(b.slope),
                        fmt_g17(b.intercept),
                        fmt_g17(b.lo),
                        fmt_g17(b.hi)
                    );
                }
            }
            GroundTruth::Traj(cfg) => {
                let _ = writeln!(s, "generator={TRAJ_ID}");
                let _ = writeln!(s, "noise_sigma={}", fmt_g17(cfg.noise_sigma));
                let _ = writeln!(s, "start_extent={}", fmt_g17(cfg.start_extent));
                for (c, w) in cfg.mode_centers.iter().zip(&cfg.mode_weights) {
                    let _ = writeln!(s, "mode={},{},{}", fmt_g17(c[0]), fmt_g17(c[1]), fmt_g17(*w));
                }
            }
        }
        s
    }
}

/// Writes `<stem>.csv` and the sibling `<stem>.meta` describing the generator.
pub fn write_dataset(dir: &Path, stem: &str, data: &Dataset, truth: &GroundTruth) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::File::create(dir.join(format!("{stem}.csv")))?.write_all(data.to_csv().as_bytes())?;
    let mut meta = String::new();
    let _ = writeln!(meta, "generator_id={}", data.generator_id);
    let _ = writeln!(meta, "split={}", data.split.name());
    let _ = writeln!(meta, "seed={}", data.seed);
    let _ = writeln!(meta, "n_samples={}", data.len());
    meta.push_str(&truth.to_kv().replace(&format!("generator={}\n", truth.id()), ""));
    std::fs::write(dir.join(format!("{stem}.meta")), meta)?;
    Ok(())
}

/// Reads `<stem>.csv` with its `<stem>.meta`.
pub fn read_dataset(dir: &Path, stem: &str) -> Result<(Dataset, GroundTruth)> {
    let meta_text = std::fs::read_to_string(dir.join(format!("{stem}.meta")))?;
    let kv = KeyValues::parse(&meta_text)?;
    let generator_id = kv.get_str("generator_id").ok_or_else(|| invalid("metadata lacks generator_id"))?.to_string();
    let seed: u64 = kv.get("seed")?.ok_or_else(|| invalid("metadata lacks seed"))?;
    let split = match kv.get_str("split") {
        Some("test") => Split::Test,
        _ => Split::Train,
    };
    let truth_text = format!("generator={generator_id}\n{meta_text}");
    let tkv = KeyValues::parse(&truth_text)?;
    let truth = GroundTruth::from_kv(&tkv)?;
    let csv = std::fs::read_to_string(dir.join(format!("{stem}.csv")))?;
    let data = Dataset::from_csv(&csv, seed, &generator_id, split)?;
    Ok((data, truth))
}
