use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regflow::checkpoint::AnyModel;
use regflow::data::read_dataset;
use regflow::flow::FlowConfig;
use regflow::hypernet::{HyperConfig, HyperNet};
use regflow::model::Scaling;
use tempfile::TempDir;

fn regflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regflow")).args(args).output().expect("spawn regflow")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_ok(args: &[&str]) {
    let o = regflow(args);
    assert!(o.status.success(), "{args:?} failed: {}", stderr(&o));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

/// Small toy dataset in `<tmp>/data`.
fn toy_data(tmp: &Path, n: usize) -> PathBuf {
    let cfg = write(tmp, "gen.cfg", &format!("generator=toy\nn_samples={n}\nn_test={}\n", n / 2));
    let out = tmp.join("data");
    run_ok(&["gen", "--config", p(&cfg), "--out", p(&out), "--seed", "7"]);
    out
}

fn traj_data(tmp: &Path) -> PathBuf {
    let cfg = write(tmp, "traj.cfg", "generator=traj2d\nn_samples=200\nn_test=100\n");
    let out = tmp.join("traj");
    run_ok(&["gen", "--config", p(&cfg), "--out", p(&out)]);
    out
}

fn zero_checkpoint(path: &Path, c: usize, d: usize) {
    let net = HyperNet::zeros(HyperConfig::new(c), FlowConfig::desk(d)).unwrap();
    AnyModel::RegFlow(net).save(path).unwrap();
}

fn manifests(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains("manifest"))
        .count()
}

#[test]
fn gen_writes_requested_rows_deterministically() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "g.cfg", "generator=toy\nn_samples=1000\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_ok(&["gen", "--config", p(&cfg), "--out", p(&a), "--seed", "11"]);
    run_ok(&["gen", "--config", p(&cfg), "--out", p(&b), "--seed", "11"]);
    let text = std::fs::read_to_string(a.join("train.csv")).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert_eq!(text.lines().next(), Some("x0,y0"));
    for f in ["train.csv", "test.csv", "train.meta", "test.meta"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(manifests(&a), 1);
    assert_ne!(std::fs::read(a.join("train.csv")).unwrap(), std::fs::read(a.join("test.csv")).unwrap());
}

#[test]
fn coverage_gap_exits_two_and_names_interval() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "g.cfg", "generator=toy\nbranch=1,0,-10,-2\nbranch=1,0,3,10\n");
    let o = regflow(&["gen", "--config", p(&cfg), "--out", p(&tmp.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[-2, 3]"), "{}", stderr(&o));
}

#[test]
fn bad_config_reports_line_and_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "g.cfg", "generator=toy\n# comment\nnoise_sigma=lots\n");
    let o = regflow(&["gen", "--config", p(&cfg), "--out", p(&tmp.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("noise_sigma"), "{err}");

    let cfg = write(tmp.path(), "t.cfg", "max_steps=1\nlearning_rat=0.1\n");
    let data = toy_data(tmp.path(), 40);
    let o = regflow(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2") && stderr(&o).contains("learning_rat"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_fail() {
    let tmp = TempDir::new().unwrap();
    let o = regflow(&["train", "--data", p(&tmp.path().join("nope")), "--out", p(&tmp.path().join("r"))]);
    assert_ne!(o.status.code(), Some(0));
    let o = regflow(&["eval", "--checkpoint", "missing.ckpt", "--data", p(tmp.path()), "--out", "x.csv"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn zero_step_training_keeps_seeded_init() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path(), 60);
    let cfg = write(tmp.path(), "t.cfg", "max_steps=0\n");
    let out = tmp.path().join("r");
    run_ok(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out), "--seed", "5"]);

    let (train, _) = read_dataset(&data, "train").unwrap();
    let scaling = Scaling::fit_with_spread(train.xs(), train.ys(), 4.0);
    let init = HyperNet::init(HyperConfig::new(1), FlowConfig::desk(1), 5).unwrap().with_scaling(scaling).unwrap();
    let expected = AnyModel::RegFlow(init).to_bytes().unwrap();
    assert_eq!(std::fs::read(out.join("model.ckpt")).unwrap(), expected);
    assert_eq!(std::fs::read_to_string(out.join("train_log.csv")).unwrap().lines().count(), 1);
}

#[test]
fn default_training_logs_every_step() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path(), 200);
    let out = tmp.path().join("r");
    run_ok(&["train", "--model", "regflow", "--data", p(&data), "--out", p(&out)]);
    let log = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5001);
    let evals = std::fs::read_to_string(out.join("eval_log.csv")).unwrap();
    assert_eq!(evals.lines().count(), 11);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status=ok") && manifest.contains("config.max_steps=5000"));
    assert!(manifest.contains("seed.init=0") && manifest.contains("code_version="));
    assert_eq!(manifests(&out), 1);
}

#[test]
fn training_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path(), 100);
    let cfg = write(tmp.path(), "t.cfg", "max_steps=15\neval_every=5\nbatch_size=16\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        run_ok(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(out), "--seed", "2"]);
    }
    for f in ["model.ckpt", "model.meta", "train_log.csv", "eval_log.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn diverging_run_exits_one_and_keeps_flagged_checkpoint() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path(), 100);
    let cfg = write(tmp.path(), "t.cfg", "max_steps=50\nlearning_rate=1e200\ngrad_clip_norm=none\nbatch_size=16\n");
    let out = tmp.path().join("r");
    let o = regflow(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("status=aborted"), "{manifest}");
    let model = AnyModel::load(&out.join("model.ckpt")).unwrap();
    assert!(regflow::model::ConditionalModel::<f64>::params(&model).iter().all(|v| v.is_finite()));
}

#[test]
fn unknown_metric_lists_valid_names() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path(), 40);
    let ckpt = tmp.path().join("z.ckpt");
    zero_checkpoint(&ckpt, 1, 1);
    let o = regflow(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--metrics", "nll,crps", "--out", "r.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("crps") && err.contains("nll, emd, demd"), "{err}");
}

#[test]
fn zero_psi_nll_is_standard_normal() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path(), 80);
    let ckpt = tmp.path().join("z.ckpt");
    zero_checkpoint(&ckpt, 1, 1);
    let report = tmp.path().join("report.csv");
    run_ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--metrics", "nll", "--out", p(&report)]);

    let (test, _) = read_dataset(&data, "test").unwrap();
    let n = test.len() as f64;
    let expected: f64 = (0..test.len()).map(|i| 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5 * test.y(i)[0].powi(2)).sum::<f64>() / n;
    let text = std::fs::read_to_string(&report).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "nll");
    let value: f64 = row[3].parse().unwrap();
    assert!((value - expected).abs() < 1e-9 * expected.abs().max(1.0), "{value} vs {expected}");
    assert_eq!(row[5], test.len().to_string());
}

#[test]
fn demd_report_has_stddev_over_repeats() {
    let tmp = TempDir::new().unwrap();
    let data = traj_data(tmp.path());
    let ckpt = tmp.path().join("z.ckpt");
    zero_checkpoint(&ckpt, 4, 2);
    let report = tmp.path().join("out/report.csv");
    let args = ["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--metrics", "demd,emd", "--out", p(&report), "--probes", "4", "--samples", "32", "--seed", "9"];
    run_ok(&args);
    let text = std::fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("metric,model,dataset,value,stddev,n,seed"));
    let demd: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&demd[..3], &["demd", "regflow", "traj2d"]);
    let sd: f64 = demd[4].parse().unwrap();
    assert!(sd > 0.0 && sd.is_finite());
    assert_eq!(demd[6], "9");
    let first = std::fs::read(&report).unwrap();
    run_ok(&args);
    assert_eq!(std::fs::read(&report).unwrap(), first);
}

#[test]
fn zero_psi_heatmap_peaks_at_center_and_integrates_to_one() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("z.ckpt");
    zero_checkpoint(&ckpt, 4, 2);
    let out = tmp.path().join("h.pgm");
    let args = ["density-grid", "--checkpoint", p(&ckpt), "--x", "0,0,1,0", "--grid", "-3,3,-3,3,64", "--out", p(&out)];
    run_ok(&args);

    let pgm = std::fs::read_to_string(&out).unwrap();
    let mut tokens = pgm.split_whitespace();
    assert_eq!(tokens.next(), Some("P2"));
    let (w, h, max): (usize, usize, u32) = (
        tokens.next().unwrap().parse().unwrap(),
        tokens.next().unwrap().parse().unwrap(),
        tokens.next().unwrap().parse().unwrap(),
    );
    assert_eq!((w, h, max), (64, 64, 255));
    let pixels: Vec<u32> = tokens.map(|t| t.parse().unwrap()).collect();
    assert_eq!(pixels.len(), 64 * 64);
    let best = pixels.iter().enumerate().max_by_key(|(_, v)| **v).unwrap().0;
    let (row, col) = (best / 64, best % 64);
    assert!((31..=32).contains(&row) && (31..=32).contains(&col), "peak at ({row}, {col})");

    let first = (std::fs::read(&out).unwrap(), std::fs::read(tmp.path().join("h.csv")).unwrap());
    run_ok(&args);
    assert_eq!(std::fs::read(&out).unwrap(), first.0);
    assert_eq!(std::fs::read(tmp.path().join("h.csv")).unwrap(), first.1);

    let wide = tmp.path().join("wide.pgm");
    run_ok(&["density-grid", "--checkpoint", p(&ckpt), "--x", "0,0,1,0", "--grid", "-6,6,-6,6,120", "--out", p(&wide)]);
    let csv = std::fs::read_to_string(tmp.path().join("wide.csv")).unwrap();
    let cell = (12.0f64 / 120.0).powi(2);
    let mass: f64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum::<f64>() * cell;
    assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
}

#[test]
fn oversized_grid_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("z.ckpt");
    zero_checkpoint(&ckpt, 4, 2);
    let o = regflow(&["density-grid", "--checkpoint", p(&ckpt), "--x", "0,0,1,0", "--grid", "-3,3,-3,3,2048", "--out", p(&tmp.path().join("h.pgm"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mdn_checkpoints_with_eight_and_twenty_components_evaluate() {
    let tmp = TempDir::new().unwrap();
    let data = toy_data(tmp.path(), 200);
    for k in [8, 20] {
        let cfg = write(tmp.path(), &format!("k{k}.cfg"), &format!("components={k}\nmax_steps=30\neval_every=10\n"));
        let out = tmp.path().join(format!("mdn{k}"));
        run_ok(&["train", "--model", "mdn", "--data", p(&data), "--config", p(&cfg), "--out", p(&out)]);
        let meta = std::fs::read_to_string(out.join("model.meta")).unwrap();
        assert!(meta.contains(&format!("components={k}")), "{meta}");
        let report = out.join("report.csv");
        let ckpt = out.join("model.ckpt");
        run_ok(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data), "--metrics", "nll,emd", "--out", p(&report), "--probes", "3", "--samples", "32"]);
        let text = std::fs::read_to_string(&report).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("nll,mdn,toy,"));
        let grid = out.join("grid.pgm");
        run_ok(&["density-grid", "--checkpoint", p(&ckpt), "--grid", "-10,10,-20,20,16", "--out", p(&grid)]);
    }
}

#[test]
fn samples_are_seeded() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("z.ckpt");
    zero_checkpoint(&ckpt, 4, 2);
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    for out in [&a, &b] {
        run_ok(&["sample", "--checkpoint", p(&ckpt), "--x", "1,-1,0,1", "--n", "50", "--seed", "4", "--out", p(out)]);
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().next(), Some("y0,y1"));
    assert_eq!(text.lines().count(), 51);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn thread_cap_must_be_positive() {
    let o = Command::new(env!("CARGO_BIN_EXE_regflow"))
        .args(["sample", "--checkpoint", "x", "--x", "0", "--out", "y"])
        .env("REGFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("REGFLOW_THREADS"));
}
