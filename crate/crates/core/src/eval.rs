//! Held-out evaluation: NLL, per-input EMD against the generator, and DEMD,
//! assembled into report rows.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::config::fmt_g17;
use crate::data::{Dataset, GroundTruth, Split};
use crate::error::{invalid, Error, Result};
use crate::metrics::{avg_nll, demd, emd_exact, gaussian_mle_fit, mean_std, SampleSet, DEFAULT_REG, DEMD_REPEATS};
use crate::model::{ConditionVector, ConditionalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Nll,
    Emd,
    Demd,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Nll, Metric::Emd, Metric::Demd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Nll => "nll",
            Metric::Emd => "emd",
            Metric::Demd => "demd",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMetric(s.to_string()))
    }

    /// Comma-separated metric names.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        let list = s.split(',').map(str::trim).filter(|p| !p.is_empty()).map(Self::parse).collect::<Result<Vec<_>>>()?;
        if list.is_empty() {
            return Err(invalid("no metrics requested"));
        }
        Ok(list)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Inputs at which sample-based metrics are computed.
    pub probes: usize,
    /// Sample size per probe for EMD and DEMD.
    pub samples: usize,
    pub demd_repeats: usize,
    pub reg: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { probes: 20, samples: 256, demd_repeats: DEMD_REPEATS, reg: DEFAULT_REG, seed: 0 }
    }
}

/// One line of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub metric: String,
    pub model: String,
    pub dataset: String,
    pub value: f64,
    pub stddev: f64,
    pub n: usize,
    pub seed: u64,
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("metric,model,dataset,value,stddev,n,seed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.metric,
            r.model,
            r.dataset,
            fmt_g17(r.value),
            fmt_g17(r.stddev),
            r.n,
            r.seed
        );
    }
    s
}

/// Evenly strided rows of the dataset used as probe inputs.
pub fn probe_inputs(data: &Dataset, count: usize) -> Vec<Vec<f64>> {
    let n = data.len();
    let count = count.min(n).max(1);
    (0..count).map(|i| data.x(i * n / count).to_vec()).collect()
}

/// Seed of the `i`th ground-truth draw, kept apart from model draws.
fn truth_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xA5A5_0000 + i as u64)
}

fn model_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

/// EMD between `n` model draws and `n` ground-truth draws at each input.
pub fn per_x_emd<M: ConditionalModel<f64>>(
    model: &M,
    truth: &GroundTruth,
    xs: &[Vec<f64>],
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let cx = ConditionVector::new(x.clone())?;
            let ms = SampleSet::from_tensor(&model.sample(&cx, n, model_seed(seed, i))?)?;
            let ts = SampleSet::from_tensor(&truth.sample(x, n, truth_seed(seed, i))?)?;
            emd_exact(&ms, &ts)
        })
        .collect()
}

/// EMD achieved by a single Gaussian fitted to ground-truth draws, against
/// an independent ground-truth sample at each input.
pub fn gaussian_baseline_emd(truth: &GroundTruth, xs: &[Vec<f64>], n: usize, seed: u64) -> Result<Vec<f64>> {
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            let fit_set = SampleSet::from_tensor(&truth.sample(x, n, truth_seed(seed, i) ^ 0xF17)?)?;
            let fit = gaussian_mle_fit(&fit_set, DEFAULT_REG)?;
            let gs = fit.sample(n, model_seed(seed, i) ^ 0xBA5E)?;
            let ts = SampleSet::from_tensor(&truth.sample(x, n, truth_seed(seed, i))?)?;
            emd_exact(&gs, &ts)
        })
        .collect()
}

/// Computes the requested metrics on a held-out set.
pub fn evaluate<M: ConditionalModel<f64>>(
    model: &M,
    data: &Dataset,
    truth: Option<&GroundTruth>,
    metrics: &[Metric],
    config: &EvalConfig,
) -> Result<Vec<ReportRow>> {
    if data.split != Split::Test {
        return Err(invalid("evaluation requires the test split"));
    }
    let row = |metric: Metric, value: f64, stddev: f64, n: usize| ReportRow {
        metric: metric.name().to_string(),
        model: model.kind().name().to_string(),
        dataset: data.generator_id.clone(),
        value,
        stddev,
        n,
        seed: config.seed,
    };
    let probes = probe_inputs(data, config.probes);
    let mut rows = Vec::new();
    for &metric in metrics {
        match metric {
            Metric::Nll => {
                let lp = model.log_prob_batch(data.xs(), data.ys())?;
                let nll = avg_nll(&lp)?;
                let neg: Vec<f64> = lp.iter().map(|v| -v).collect();
                rows.push(row(metric, nll, mean_std(&neg).1, lp.len()));
            }
            Metric::Emd => {
                let truth = truth.ok_or_else(|| invalid("EMD needs the generator's ground-truth sampler"))?;
                let values = per_x_emd(model, truth, &probes, config.samples, config.seed)?;
                let (m, s) = mean_std(&values);
                rows.push(row(metric, m, s, config.samples));
            }
            Metric::Demd => {
                let sets = probes
                    .par_iter()
                    .enumerate()
                    .map(|(i, x)| {
                        let cx = ConditionVector::new(x.clone())?;
                        SampleSet::from_tensor(&model.sample(&cx, config.samples, model_seed(config.seed, i))?)
                    })
                    .collect::<Result<Vec<_>>>()?;
                // one DEMD value per repeat, averaged over probes
                let per_repeat = (0..config.demd_repeats.max(1))
                    .into_par_iter()
                    .map(|r| {
                        let vals = sets
                            .iter()
                            .enumerate()
                            .map(|(i, s)| demd(s, config.reg, truth_seed(config.seed + r as u64, i)))
                            .collect::<Result<Vec<f64>>>()?;
                        Ok(mean_std(&vals).0)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let (m, s) = mean_std(&per_repeat);
                rows.push(row(metric, m, s, config.samples));
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names() {
        assert_eq!(Metric::parse_list("nll, demd").unwrap(), vec![Metric::Nll, Metric::Demd]);
        let err = Metric::parse_list("nll,wemd").unwrap_err();
        assert!(matches!(err, Error::UnknownMetric(ref m) if m == "wemd"));
        assert!(err.to_string().contains("nll"));
    }

    #[test]
    fn report_shape() {
        let rows = vec![ReportRow {
            metric: "demd".into(),
            model: "regflow".into(),
            dataset: "toy".into(),
            value: 0.5,
            stddev: 0.25,
            n: 256,
            seed: 3,
        }];
        assert_eq!(report_csv(&rows), "metric,model,dataset,value,stddev,n,seed\ndemd,regflow,toy,0.5,0.25,256,3\n");
    }
}
