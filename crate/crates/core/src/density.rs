//! Density heatmaps on regular grids, portable graymap output, and a
//! kernel-density peak counter used to check modality.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::config::fmt_g17;
use crate::error::{invalid, Result};
use crate::model::{ConditionVector, ConditionalModel};

pub const MAX_GRID_RES: usize = 1024;

/// Axis-aligned box `[xmin, xmax] x [ymin, ymax]` split into `res x res`
/// cells, evaluated at cell centers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub res: usize,
}

impl GridSpec {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64, res: usize) -> Result<Self> {
        if res == 0 || res > MAX_GRID_RES {
            return Err(invalid(format!("grid resolution {res} must be between 1 and {MAX_GRID_RES}")));
        }
        if !(xmin < xmax && ymin < ymax) || ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
            return Err(invalid("grid box must have finite bounds with min < max"));
        }
        Ok(Self { xmin, xmax, ymin, ymax, res })
    }

    /// Parses `XMIN,XMAX,YMIN,YMAX,RES`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 5 {
            return Err(invalid(format!("grid `{s}` must be XMIN,XMAX,YMIN,YMAX,RES")));
        }
        let f = |p: &str| p.parse::<f64>().map_err(|_| invalid(format!("grid bound `{p}` is not a number")));
        let res = parts[4].parse::<usize>().map_err(|_| invalid(format!("grid resolution `{}` is not a count", parts[4])))?;
        Self::new(f(parts[0])?, f(parts[1])?, f(parts[2])?, f(parts[3])?, res)
    }

    pub fn dx(&self) -> f64 {
        (self.xmax - self.xmin) / self.res as f64
    }

    pub fn dy(&self) -> f64 {
        (self.ymax - self.ymin) / self.res as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    pub fn x_center(&self, col: usize) -> f64 {
        self.xmin + (col as f64 + 0.5) * self.dx()
    }

    /// Row 0 is the top of the image, i.e. the largest y.
    pub fn y_center(&self, row: usize) -> f64 {
        self.ymax - (row as f64 + 0.5) * self.dy()
    }
}

/// Densities on a grid, row-major with row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.res + col]
    }

    /// Riemann sum of the density over the box.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area()
    }

    pub fn argmax(&self) -> (usize, usize) {
        let i = self
            .values
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > self.values[best] { i } else { best });
        (i / self.spec.res, i % self.spec.res)
    }

    /// ASCII graymap with intensities scaled so the maximum maps to 255.
    pub fn to_pgm(&self) -> String {
        let res = self.spec.res;
        let max = self.values.iter().copied().fold(0.0, f64::max);
        let mut out = format!("P2\n{res} {res}\n255\n");
        for row in 0..res {
            let line: Vec<String> = (0..res)
                .map(|col| {
                    let v = self.get(row, col);
                    let level = if max > 0.0 { (255.0 * v / max).round() as u32 } else { 0 };
                    level.min(255).to_string()
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Raw densities at cell centers: `u,v,density` with one cell per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u,v,density\n");
        for row in 0..self.spec.res {
            for col in 0..self.spec.res {
                let _ = writeln!(
                    out,
                    "{},{},{}",
                    fmt_g17(self.spec.x_center(col)),
                    fmt_g17(self.spec.y_center(row)),
                    fmt_g17(self.get(row, col))
                );
            }
        }
        out
    }

    /// Writes `path` as a graymap and the raw densities next to it as CSV.
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_pgm())?;
        std::fs::write(path.with_extension("csv"), self.to_csv())?;
        Ok(())
    }
}

/// Density over a 2D target box at one conditioning vector.
pub fn target_grid<M: ConditionalModel<f64>>(model: &M, x: &ConditionVector<f64>, spec: GridSpec) -> Result<DensityGrid> {
    if model.target_dim() != 2 {
        return Err(invalid(format!(
            "a target-plane grid needs 2D targets, model has d = {}",
            model.target_dim()
        )));
    }
    let res = spec.res;
    let mut ys = Vec::with_capacity(2 * res * res);
    for row in 0..res {
        for col in 0..res {
            ys.push(spec.x_center(col));
            ys.push(spec.y_center(row));
        }
    }
    let lp = model.log_prob_at(x, &Tensor::matrix(res * res, 2, ys)?)?;
    Ok(DensityGrid { spec, values: lp.into_iter().map(f64::exp).collect() })
}

/// Conditional density `p(y | x)` with the scalar input on the horizontal
/// axis and the scalar target on the vertical axis.
pub fn conditional_grid<M: ConditionalModel<f64>>(model: &M, spec: GridSpec) -> Result<DensityGrid> {
    if model.cond_dim() != 1 || model.target_dim() != 1 {
        return Err(invalid("an input-target grid needs scalar inputs and targets"));
    }
    let res = spec.res;
    let mut xs = Vec::with_capacity(res * res);
    let mut ys = Vec::with_capacity(res * res);
    for row in 0..res {
        for col in 0..res {
            xs.push(spec.x_center(col));
            ys.push(spec.y_center(row));
        }
    }
    let lp = model.log_prob_batch(&Tensor::matrix(res * res, 1, xs)?, &Tensor::matrix(res * res, 1, ys)?)?;
    Ok(DensityGrid { spec, values: lp.into_iter().map(f64::exp).collect() })
}

/// Gaussian kernel density estimate of 1D samples at `points`.
pub fn kde_1d(samples: &[f64], bandwidth: f64, points: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    points
        .iter()
        .map(|&p| {
            samples
                .iter()
                .map(|&s| {
                    let r = (p - s) / bandwidth;
                    (-0.5 * r * r).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect()
}

/// Strict local maxima of a 1D profile that reach `rel_height` times the
/// global maximum.
pub fn count_peaks(profile: &[f64], rel_height: f64) -> usize {
    let max = profile.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    let n = profile.len();
    let mut count = 0;
    let mut i = 0;
    while i < n {
        // treat runs of equal values as a single plateau
        let mut j = i;
        while j + 1 < n && profile[j + 1] == profile[i] {
            j += 1;
        }
        let left_lower = i == 0 || profile[i - 1] < profile[i];
        let right_lower = j + 1 == n || profile[j + 1] < profile[i];
        if left_lower && right_lower && profile[i] >= rel_height * max && n > 1 {
            count += 1;
        }
        i = j + 1;
    }
    count
}

/// Peaks of a KDE of `samples` on `res` points over `[lo, hi]`.
pub fn kde_peak_count(samples: &[f64], bandwidth: f64, lo: f64, hi: f64, res: usize, rel_height: f64) -> usize {
    let grid: Vec<f64> = (0..res).map(|i| lo + (hi - lo) * i as f64 / (res - 1).max(1) as f64).collect();
    count_peaks(&kde_1d(samples, bandwidth, &grid), rel_height)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = GridSpec::parse("-3,3,-2,2,64").unwrap();
        assert_eq!(g.res, 64);
        assert!((g.cell_area() - 6.0 * 4.0 / 4096.0).abs() < 1e-15);
        assert!(GridSpec::parse("-3,3,-3,3,1025").is_err());
        assert!(GridSpec::parse("3,-3,-3,3,8").is_err());
        assert!(GridSpec::parse("1,2,3").is_err());
    }

    #[test]
    fn peaks_of_simple_profiles() {
        assert_eq!(count_peaks(&[0.0, 1.0, 0.0, 2.0, 0.0], 0.1), 2);
        assert_eq!(count_peaks(&[0.0, 1.0, 1.0, 0.0], 0.1), 1);
        assert_eq!(count_peaks(&[0.0, 0.01, 0.0, 2.0, 0.0], 0.1), 1);
        assert_eq!(count_peaks(&[3.0, 2.0, 1.0], 0.1), 1);
    }

    #[test]
    fn kde_counts_separated_clusters() {
        let mut s = Vec::new();
        for c in [-5.0, 0.0, 5.0] {
            for k in 0..50 {
                s.push(c + 0.01 * (k as f64 - 25.0));
            }
        }
        assert_eq!(kde_peak_count(&s, 0.3, -8.0, 8.0, 400, 0.05), 3);
    }

    #[test]
    fn pgm_header_and_scaling() {
        let spec = GridSpec::new(0.0, 1.0, 0.0, 1.0, 2).unwrap();
        let g = DensityGrid { spec, values: vec![0.0, 1.0, 2.0, 4.0] };
        assert_eq!(g.to_pgm(), "P2\n2 2\n255\n0 64\n128 255\n");
        assert_eq!(g.argmax(), (1, 1));
        assert!(g.to_csv().starts_with("u,v,density\n0.25,0.75,0\n"));
    }
}
