use std::fmt::Write as _;
use std::path::Path;

use regflow::checkpoint::AnyModel;
use regflow::config::{fmt_g17, KeyValues};
use regflow::data::{read_dataset, write_dataset, GroundTruth, Split};
use regflow::density::{conditional_grid, target_grid, GridSpec};
use regflow::eval::{evaluate, report_csv, EvalConfig, Metric};
use regflow::model::{ConditionVector, ConditionalModel, ModelKind};
use regflow::train::{train_with, TrainConfig};
use regflow::Error;

use crate::manifest::{manifest_for_dir, manifest_for_file, RunManifest};
use crate::setup::ModelSpec;

/// A command error with an optional exit code overriding the default
/// classification.
#[derive(Debug)]
pub struct Failure {
    pub error: Error,
    pub code: Option<u8>,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Self { error, code: None }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

fn parse_x(s: &str) -> Result<ConditionVector<f64>, Error> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Invalid(format!("bad number `{t}` in --x"))))
        .collect::<Result<Vec<_>, _>>()?;
    ConditionVector::new(v)
}

fn ensure_parent(path: &Path) -> std::io::Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => std::fs::create_dir_all(p),
        None => Ok(()),
    }
}

pub fn gen(config: &Path, out: &Path, seed: Option<u64>) -> CmdResult {
    let kv = KeyValues::load(config)?;
    let mut truth = GroundTruth::from_kv(&kv)?;
    let seed = match seed {
        Some(s) => s,
        None => kv.get_or("seed", 0u64)?,
    };
    let n_train = match &truth {
        GroundTruth::Toy(c) => c.n_samples,
        GroundTruth::Traj(c) => c.n_samples,
    };
    let n_test: usize = kv.get_or("n_test", n_train)?;
    kv.finish()?;

    let train = truth.generate(seed, Split::Train)?;
    truth.set_samples(n_test);
    let test = truth.generate(seed, Split::Test)?;
    truth.set_samples(n_train);
    write_dataset(out, "train", &train, &truth)?;
    write_dataset(out, "test", &test, &truth)?;

    let mut m = RunManifest::start("gen", Some(config), out);
    m.seed("data", seed);
    let mut resolved = truth.to_kv();
    let _ = writeln!(resolved, "n_samples={n_train}");
    let _ = writeln!(resolved, "n_test={n_test}");
    m.resolved(&resolved);
    m.write(&manifest_for_dir(out))?;
    Ok(())
}

pub fn train(model: &str, data: &Path, config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let kind = ModelKind::parse(model)?;
    let kv = match config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let mut tcfg = TrainConfig::from_kv(&kv)?;
    let mut spec = ModelSpec::from_kv(&kv, kind)?;
    kv.finish()?;
    if let Some(s) = seed {
        tcfg.seed = s;
        spec.init_seed = s;
    }

    let (train_set, _) = read_dataset(data, "train")?;
    let (test_set, _) = read_dataset(data, "test")?;
    if train_set.split != Split::Train || test_set.split != Split::Test {
        return Err(Error::Invalid(format!("{} does not hold a train/test pair", data.display())).into());
    }
    let init = spec.build(&train_set)?;

    std::fs::create_dir_all(out)?;
    let ckpt = out.join("model.ckpt");
    let mut m = RunManifest::start("train", config, out);
    m.seed("init", spec.init_seed);
    m.seed("minibatch", tcfg.seed);
    m.seed("data", train_set.seed);
    m.resolved(&format!("data={}\n{}{}", data.display(), spec.to_kv(), tcfg.to_kv()));
    init.save(&ckpt)?;

    let run = train_with(init, &train_set, &tcfg, Some(&test_set), |_, model: &AnyModel| model.save(&ckpt));
    let run = match run {
        Ok(r) => r,
        Err(e) => {
            m.status("failed");
            m.note(e.to_string());
            m.write(&manifest_for_dir(out))?;
            return Err(e.into());
        }
    };
    std::fs::write(out.join("train_log.csv"), run.log.steps_csv())?;
    std::fs::write(out.join("eval_log.csv"), run.log.evals_csv())?;
    std::fs::write(out.join("timing.csv"), run.log.timing_csv())?;
    run.model.save(&ckpt)?;
    match run.abort {
        None => {
            m.write(&manifest_for_dir(out))?;
            Ok(())
        }
        Some(abort) => {
            m.status("aborted");
            m.note(format!("stopped at step {}: {}; model.ckpt holds the last finite parameters", abort.step, abort.error));
            m.write(&manifest_for_dir(out))?;
            Err(Failure { error: abort.error, code: Some(1) })
        }
    }
}

pub fn eval(checkpoint: &Path, data: &Path, metrics: &str, out: &Path, seed: u64, probes: usize, samples: usize) -> CmdResult {
    let metrics = Metric::parse_list(metrics)?;
    let model = AnyModel::load(checkpoint)?;
    let (test_set, truth) = read_dataset(data, "test")?;
    let cfg = EvalConfig { probes, samples, seed, ..EvalConfig::default() };
    let rows = evaluate(&model, &test_set, Some(&truth), &metrics, &cfg)?;
    ensure_parent(out)?;
    std::fs::write(out, report_csv(&rows))?;

    let mut m = RunManifest::start("eval", None, out);
    m.seed("eval", seed);
    let names: Vec<&str> = metrics.iter().map(|m| m.name()).collect();
    m.resolved(&format!(
        "checkpoint={}\ndata={}\nmetrics={}\nprobes={probes}\nsamples={samples}\ndemd_repeats={}\nreg={}\n",
        checkpoint.display(),
        data.display(),
        names.join(","),
        cfg.demd_repeats,
        fmt_g17(cfg.reg)
    ));
    m.write(&manifest_for_file(out))?;
    Ok(())
}

pub fn density_grid(checkpoint: &Path, x: Option<&str>, grid: &str, out: &Path) -> CmdResult {
    let spec = GridSpec::parse(grid)?;
    let model = AnyModel::load(checkpoint)?;
    let result = match x {
        Some(x) => {
            if model.target_dim() != 2 {
                return Err(Error::Invalid(format!(
                    "a heatmap at fixed x needs a 2-dimensional target, model has {}",
                    model.target_dim()
                ))
                .into());
            }
            target_grid(&model, &parse_x(x)?, spec)?
        }
        None => {
            if model.cond_dim() != 1 || model.target_dim() != 1 {
                return Err(Error::Invalid("--x is required unless the model maps scalar x to scalar y".into()).into());
            }
            conditional_grid(&model, spec)?
        }
    };
    ensure_parent(out)?;
    result.write(out)?;

    let mut m = RunManifest::start("density-grid", None, out);
    m.resolved(&format!(
        "checkpoint={}\nx={}\ngrid={grid}\n",
        checkpoint.display(),
        x.unwrap_or("(swept)")
    ));
    m.write(&manifest_for_file(out))?;
    Ok(())
}

pub fn sample(checkpoint: &Path, x: &str, n: usize, seed: u64, out: &Path) -> CmdResult {
    let model = AnyModel::load(checkpoint)?;
    let cx = parse_x(x)?;
    let ys = model.sample(&cx, n, seed)?;
    let (rows, d) = ys.dims2();
    let mut s = (0..d).map(|j| format!("y{j}")).collect::<Vec<_>>().join(",");
    s.push('\n');
    for r in 0..rows {
        let line: Vec<String> = ys.row_slice(r).iter().map(|&v| fmt_g17(v)).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    ensure_parent(out)?;
    std::fs::write(out, s)?;

    let mut m = RunManifest::start("sample", None, out);
    m.seed("sample", seed);
    m.resolved(&format!("checkpoint={}\nx={x}\nn={n}\n", checkpoint.display()));
    m.write(&manifest_for_file(out))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_condition_vectors() {
        assert_eq!(parse_x("1, -2.5").unwrap().as_slice(), &[1.0, -2.5]);
        assert!(parse_x("1,abc").is_err());
    }
}
