use proptest::prelude::*;
use regflow::data::{gen_toy, true_conditional_log_prob, ToyConfig};
use regflow::density::kde_peak_count;

/// Integrates `exp(log_prob)` over a y window covering every active branch.
fn y_mass(cfg: &ToyConfig, x: f64) -> f64 {
    let means: Vec<f64> = cfg.active_branches(x).iter().map(|b| b.mean(x)).collect();
    let pad = 12.0 * cfg.noise_sigma;
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min) - pad;
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + pad;
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|i| true_conditional_log_prob(cfg, x, lo + (i as f64 + 0.5) * h).unwrap().exp())
        .sum::<f64>()
        * h
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditional_density_is_normalized(x in -10.0f64..=10.0) {
        let mass = y_mass(&ToyConfig::default(), x);
        prop_assert!((mass - 1.0).abs() < 0.005, "x = {x}: mass {mass}");
    }

    #[test]
    fn wide_noise_stays_normalized(x in -10.0f64..=10.0, sigma in 0.05f64..2.0) {
        let cfg = ToyConfig { noise_sigma: sigma, ..ToyConfig::default() };
        let mass = y_mass(&cfg, x);
        prop_assert!((mass - 1.0).abs() < 0.005, "x = {x}, sigma {sigma}: mass {mass}");
    }
}

#[test]
fn three_branch_slices_have_three_modes() {
    let cfg = ToyConfig::default();
    let data = gen_toy(&cfg, 11).unwrap();
    for x0 in [-6.0, 2.5] {
        assert_eq!(cfg.active_branches(x0).len(), 3);
        let ys: Vec<f64> = (0..data.len())
            .filter(|&i| (data.x(i)[0] - x0).abs() < 0.1)
            .map(|i| data.y(i)[0])
            .collect();
        assert!(ys.len() > 50, "only {} pairs near x = {x0}", ys.len());
        let peaks = kde_peak_count(&ys, 0.15, -15.0, 15.0, 3000, 0.1);
        assert_eq!(peaks, 3, "x = {x0}");
    }
}

/// `-integral p log p dy` of the generative mixture, from its own formula.
fn slice_entropy(cfg: &ToyConfig, x: f64) -> f64 {
    let means: Vec<f64> = cfg.active_branches(x).iter().map(|b| b.mean(x)).collect();
    let k = means.len() as f64;
    let s = cfg.noise_sigma;
    let density = |y: f64| {
        means
            .iter()
            .map(|m| (-0.5 * ((y - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt()))
            .sum::<f64>()
            / k
    };
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * s;
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * s;
    let n = 6000;
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|i| {
            let p = density(lo + (i as f64 + 0.5) * h);
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .sum::<f64>()
        * h
}

#[test]
fn empirical_nll_converges_to_generative_entropy() {
    let cfg = ToyConfig { n_samples: 100_000, ..ToyConfig::default() };
    // x is uniform, so the conditional entropy is the x-average of slice entropies
    let nx = 4000;
    let (lo, hi) = cfg.x_range;
    let hx = (hi - lo) / nx as f64;
    let entropy = (0..nx).map(|i| slice_entropy(&cfg, lo + (i as f64 + 0.5) * hx)).sum::<f64>() / nx as f64;
    for seed in [0, 1, 2] {
        let data = gen_toy(&cfg, seed).unwrap();
        let nll = (0..data.len())
            .map(|i| -true_conditional_log_prob(&cfg, data.x(i)[0], data.y(i)[0]).unwrap())
            .sum::<f64>()
            / data.len() as f64;
        assert!((nll - entropy).abs() < 0.02, "seed {seed}: nll {nll}, entropy {entropy}");
    }
}
