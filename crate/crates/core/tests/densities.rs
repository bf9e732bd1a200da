//! Normalization and sampler/density agreement for every density model.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regflow::autodiff::Tensor;
use regflow::data::{gen_toy, Branch, ToyConfig};
use regflow::flow::{forward_batch, log_prob_batch, FlowConfig, FlowParams};
use regflow::hypernet::{HyperConfig, HyperNet};
use regflow::mdn::{mixture_log_prob, MdnConfig, Mdn, MixtureParams};
use regflow::metrics::{emd_exact, SampleSet};
use regflow::model::{ConditionVector, ConditionalModel, Scaling};
use regflow::train::{train, TrainConfig};

/// Cell centers of a `res x res` grid over `[-half, half]^2`, row-major.
fn grid_2d(half: f64, res: usize) -> (Tensor<f64>, f64) {
    let h = 2.0 * half / res as f64;
    let mut pts = Vec::with_capacity(2 * res * res);
    for i in 0..res {
        for j in 0..res {
            pts.push(-half + (i as f64 + 0.5) * h);
            pts.push(-half + (j as f64 + 0.5) * h);
        }
    }
    (Tensor::matrix(res * res, 2, pts).unwrap(), h * h)
}

fn grid_1d(lo: f64, hi: f64, res: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / res as f64;
    ((0..res).map(|i| lo + (i as f64 + 0.5) * h).collect(), h)
}

fn quadrature(log_probs: &[f64], cell: f64) -> f64 {
    log_probs.iter().map(|lp| lp.exp()).sum::<f64>() * cell
}

fn random_theta(config: &FlowConfig<f64>, scale: f64, seed: u64) -> FlowParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = config.layout();
    let theta = (0..layout.len()).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
    FlowParams::new(theta, layout).unwrap()
}

#[test]
fn random_flows_integrate_to_one() {
    let config = FlowConfig::desk(2);
    // the acceptance suite sweeps ten flows on a coarser grid
    let (grid, cell) = grid_2d(8.0, 400);
    for seed in 0..2 {
        let theta = random_theta(&config, 0.4, seed);
        // the box must hold essentially all of the mass
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let zs = Tensor::matrix(2000, 2, (0..4000).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect()).unwrap();
        let ys = forward_batch(&theta, &zs, &config).unwrap();
        let inside = ys.data().chunks(2).filter(|p| p[0].abs() < 8.0 && p[1].abs() < 8.0).count();
        assert!(inside as f64 / 2000.0 >= 0.999, "seed {seed}: {inside} of 2000 inside");

        let mass = quadrature(&log_prob_batch(&theta, &grid, &config).unwrap(), cell);
        assert!((mass - 1.0).abs() < 0.02, "seed {seed}: mass {mass}");
    }
}

#[test]
fn wide_flow_integrates_to_one() {
    let config = FlowConfig::<f64>::default();
    assert_eq!(config.hidden_widths, vec![128, 128, 128]);
    let theta = random_theta(&config, 0.05, 3);
    let (grid, cell) = grid_2d(6.0, 60);
    let mass = quadrature(&log_prob_batch(&theta, &grid, &config).unwrap(), cell);
    assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
}

#[test]
fn random_mixtures_integrate_to_one() {
    let (grid, cell) = grid_2d(10.0, 400);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..10 {
        let k = rng.random_range(1..6);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let means = (0..k).map(|_| vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]).collect();
        let scales = (0..k).map(|_| rng.random_range(0.3..1.5)).collect();
        let params = MixtureParams::new(weights, means, scales).unwrap();
        let lp: Vec<f64> = (0..grid.dims2().0).map(|r| mixture_log_prob(&params, grid.row_slice(r)).unwrap()).collect();
        let mass = quadrature(&lp, cell);
        assert!((mass - 1.0).abs() < 0.02, "trial {trial}: mass {mass}");
    }
}

#[test]
fn network_densities_integrate_to_one_at_fixed_inputs() {
    let (grid, cell) = grid_2d(8.0, 240);
    let hyper = HyperConfig { output_scale: 0.05, ..HyperConfig::new(3) };
    let net = HyperNet::init(hyper, FlowConfig::desk(2), 5).unwrap();
    let mdn = Mdn::init(MdnConfig::new(3, 2, 4), 5).unwrap();
    for x in [[0.0, 0.0, 0.0], [1.5, -0.5, 2.0], [-2.0, 1.0, 0.3]] {
        let cx = ConditionVector::new(x.to_vec()).unwrap();
        let mass = quadrature(&net.log_prob_at(&cx, &grid).unwrap(), cell);
        assert!((mass - 1.0).abs() < 0.02, "hypernet at {x:?}: {mass}");
        let mass = quadrature(&mdn.log_prob_at(&cx, &grid).unwrap(), cell);
        assert!((mass - 1.0).abs() < 0.02, "mdn at {x:?}: {mass}");
    }
}

#[test]
fn scaled_models_stay_normalized_in_data_units() {
    let scaling = Scaling { x_shift: vec![1.0], x_scale: vec![2.0], y_shift: vec![3.0], y_scale: vec![0.5] };
    let hyper = HyperConfig { output_scale: 0.1, ..HyperConfig::new(1) };
    let net = HyperNet::init(hyper, FlowConfig::desk(1), 2).unwrap().with_scaling(scaling).unwrap();
    let (ys, h) = grid_1d(-5.0, 11.0, 4000);
    let cx = ConditionVector::new(vec![0.7]).unwrap();
    let lp = net.log_prob_at(&cx, &Tensor::matrix(ys.len(), 1, ys).unwrap()).unwrap();
    let mass = quadrature(&lp, h);
    assert!((mass - 1.0).abs() < 0.005, "mass {mass}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixture_density_ignores_component_order(seed in any::<u64>(), y0 in -6.0f64..6.0, y1 in -6.0f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..7);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let means: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)]).collect();
        let scales: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..2.0)).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.reverse();
        order.rotate_left(1);
        let a = MixtureParams::new(weights.clone(), means.clone(), scales.clone()).unwrap();
        let b = MixtureParams::new(
            order.iter().map(|&i| weights[i]).collect(),
            order.iter().map(|&i| means[i].clone()).collect(),
            order.iter().map(|&i| scales[i]).collect(),
        ).unwrap();
        let (la, lb) = (mixture_log_prob(&a, &[y0, y1]).unwrap(), mixture_log_prob(&b, &[y0, y1]).unwrap());
        prop_assert!((la - lb).abs() < 1e-12, "{la} vs {lb}");
    }
}

/// Draws `n` points from a density tabulated on 1D cell centers: a cell by
/// its mass, then a uniform position inside it.
fn quadrature_sample(centers: &[f64], h: f64, density: &[f64], n: usize, seed: u64) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(density.len());
    let mut acc = 0.0;
    for d in density {
        acc += d;
        cumulative.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let i = cumulative.partition_point(|&c| c < u).min(centers.len() - 1);
            centers[i] + h * (rng.random::<f64>() - 0.5)
        })
        .collect()
}

fn briefly_trained(branches: Vec<Branch>, noise: f64, steps: usize) -> HyperNet<f64> {
    let cfg = ToyConfig { branches, noise_sigma: noise, n_samples: 2000, ..ToyConfig::default() };
    let data = gen_toy(&cfg, 1).unwrap();
    let scaling = Scaling::fit_with_spread(data.xs(), data.ys(), 4.0);
    let net = HyperNet::init(HyperConfig::new(1), FlowConfig::desk(1), 1).unwrap().with_scaling(scaling).unwrap();
    let tc = TrainConfig { learning_rate: 1e-2, batch_size: 64, max_steps: steps, adam_beta2: 0.99, ..TrainConfig::default() };
    let run = train(net, &data, &tc).unwrap();
    assert!(run.abort.is_none());
    run.model
}

#[test]
fn samples_agree_with_tabulated_density() {
    let net = briefly_trained(ToyConfig::default().branches, 0.1, 150);
    let (ys, h) = grid_1d(-25.0, 25.0, 5000);
    let n = 512;
    for (i, x) in [-6.0, 2.5, 8.0].into_iter().enumerate() {
        let cx = ConditionVector::new(vec![x]).unwrap();
        let density: Vec<f64> = net
            .log_prob_at(&cx, &Tensor::matrix(ys.len(), 1, ys.clone()).unwrap())
            .unwrap()
            .into_iter()
            .map(f64::exp)
            .collect();
        let seed = 10 * i as u64;
        let model = SampleSet::from_tensor(&net.conditional_sample(&cx, n, seed).unwrap()).unwrap();
        let q1 = SampleSet::from_scalars(quadrature_sample(&ys, h, &density, n, seed + 1)).unwrap();
        let q2 = SampleSet::from_scalars(quadrature_sample(&ys, h, &density, n, seed + 2)).unwrap();
        let (cross, floor) = (emd_exact(&model, &q1).unwrap(), emd_exact(&q1, &q2).unwrap());
        assert!(cross < 3.0 * floor, "x = {x}: model-vs-quadrature {cross}, noise floor {floor}");
    }
}

#[test]
fn sample_mean_matches_quadrature_mean() {
    let net = briefly_trained(vec![Branch::new(0.5, 1.0, -10.0, 10.0)], 0.5, 150);
    let cx = ConditionVector::new(vec![2.0]).unwrap();
    let samples = net.conditional_sample(&cx, 100_000, 3).unwrap().into_data();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();

    let (ys, h) = grid_1d(-15.0, 20.0, 7000);
    let lp = net.log_prob_at(&cx, &Tensor::matrix(ys.len(), 1, ys.clone()).unwrap()).unwrap();
    let mass = quadrature(&lp, h);
    let q_mean = ys.iter().zip(&lp).map(|(y, l)| y * l.exp()).sum::<f64>() * h / mass;
    assert!((mean - q_mean).abs() < 3.0 * sd / n.sqrt(), "sample mean {mean}, quadrature mean {q_mean}, sd {sd}");
}
