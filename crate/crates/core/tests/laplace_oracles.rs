use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use robustgp::bench::{metrics, neal_truth};
use robustgp::laplace::find_mode_with_gram;
use robustgp::likelihood::{huber_log_likelihood, pseudo_huber};
use robustgp::{
    build_gram, find_mode, fit_ml2, gaussian_log_evidence, optimize_hyperparams, ConjugateModel, Dataset, HuberConfig,
    HuberGpModel, KernelParams, LaplaceFitSettings, Loss, ModeSettings, OptimizerSettings, RobustWeighting, ScaleRule,
};

fn clean_data(seed: u64, n: usize, noise_sd: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.5..2.5)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| neal_truth(*v) + noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::from_1d(&x, &y).unwrap()
}

fn unit_weights(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0)
}

fn gaussian_limit() -> HuberConfig {
    HuberConfig::new(1e6, 0.45, 0.5).unwrap()
}

#[test]
fn pseudo_huber_derivatives_match_finite_differences() {
    let h = 1e-5;
    for b in [0.5, 1.5, 3.0] {
        for k in 0..=400 {
            let r = -10.0 + 0.05 * k as f64;
            let d = pseudo_huber(r, b);
            let fd1 = (pseudo_huber(r + h, b).value - pseudo_huber(r - h, b).value) / (2.0 * h);
            let fd2 = (pseudo_huber(r + h, b).first - pseudo_huber(r - h, b).first) / (2.0 * h);
            assert!((d.first - fd1).abs() < 1e-6, "b={b} r={r}");
            assert!((d.second - fd2).abs() < 1e-6, "b={b} r={r}");
        }
    }
}

#[test]
fn gaussian_limit_mode_is_conjugate_posterior_mean() {
    let data = clean_data(1, 30, 0.2);
    let kernel = KernelParams::new(1.2, vec![0.8]).unwrap();
    let cfg = gaussian_limit();
    let post = find_mode(&data, &cfg, &kernel, &unit_weights(30), &ModeSettings::default()).unwrap();
    let lam2 = (cfg.sigma * post.scale).powi(2);
    let k = build_gram(&data.x, &kernel, 0.0).unwrap().into_matrix();
    let mut r = k.clone();
    for i in 0..30 {
        r[(i, i)] += lam2;
    }
    let want = &k * r.lu().solve(&data.y).unwrap();
    assert!((&post.mode - want).amax() < 1e-6);
}

#[test]
fn gaussian_limit_evidence_matches_conjugate_up_to_constant() {
    let data = clean_data(2, 25, 0.3);
    let kernel = KernelParams::new(0.9, vec![1.1]).unwrap();
    let cfg = gaussian_limit();
    let post = find_mode(&data, &cfg, &kernel, &unit_weights(25), &ModeSettings::default()).unwrap();
    let lam2 = (cfg.sigma * post.scale).powi(2);
    let (gauss, _) = gaussian_log_evidence(&data, lam2, &kernel).unwrap();
    let shift = 25.0 * (1.0 - cfg.contamination).ln();
    assert!((post.log_evidence - (gauss + shift)).abs() < 1e-6);
}

#[test]
fn gaussian_limit_prediction_matches_conjugate() {
    let data = clean_data(3, 30, 0.2);
    let kernel = KernelParams::new(1.0, vec![0.7]).unwrap();
    let cfg = gaussian_limit();
    let model = HuberGpModel::new(&data, cfg, kernel.clone(), RobustWeighting::uniform(30), &ModeSettings::default()).unwrap();
    let lam2 = (cfg.sigma * model.posterior().scale).powi(2);
    let conj = ConjugateModel::new(&data, kernel, lam2).unwrap();
    let xs = DMatrix::from_fn(50, 1, |i, _| -3.0 + 0.12 * i as f64);
    for noise in [false, true] {
        let a = model.predict(&xs, noise).unwrap();
        let b = conj.predict(&xs, noise).unwrap();
        assert!((&a.mean - &b.mean).amax() < 1e-6);
        assert!((&a.variance - &b.variance).amax() < 1e-6);
    }
    let at_train = model.predict(&data.x, false).unwrap();
    assert!((at_train.mean - &model.posterior().mode).amax() < 1e-8);
}

#[test]
fn mode_is_stationary_by_finite_differences() {
    let data = clean_data(4, 12, 0.3);
    let kernel = KernelParams::new(1.0, vec![0.9]).unwrap();
    let cfg = HuberConfig::default();
    let w = unit_weights(12);
    let settings = ModeSettings::default();
    let post = find_mode(&data, &cfg, &kernel, &w, &settings).unwrap();
    let k = build_gram(&data.x, &kernel, 0.0).unwrap().into_matrix();
    // Log posterior in a = K⁻¹f coordinates, so no inverse is needed.
    let psi = |a: &DVector<f64>| {
        let f = &k * a;
        huber_log_likelihood(&data.y, &f, &cfg, &w, post.scale, Loss::PseudoHuber).unwrap() - 0.5 * a.dot(&f)
    };
    let a0 = post.alpha().clone();
    let h = 1e-6;
    for i in 0..12 {
        let mut up = a0.clone();
        let mut down = a0.clone();
        up[i] += h;
        down[i] -= h;
        let g = (psi(&up) - psi(&down)) / (2.0 * h);
        assert!(g.abs() < 1e-5, "component {i}: {g}");
    }
}

#[test]
fn vertical_outlier_has_bounded_influence() {
    let data = clean_data(5, 30, 0.2);
    let kernel = KernelParams::new(1.0, vec![0.8]).unwrap();
    let cfg = HuberConfig::default();
    let j = 13;
    let mut dirty = data.clone();
    dirty.y[j] = 1e6;
    let settings = ModeSettings::default();
    let post = find_mode(&dirty, &cfg, &kernel, &unit_weights(30), &settings).unwrap();
    let max_inlier = (0..30).filter(|&i| i != j).map(|i| data.y[i].abs()).fold(0.0, f64::max);
    assert!(post.mode[j].abs() < max_inlier + 3.0 * cfg.sigma * post.scale);

    let keep: Vec<usize> = (0..30).filter(|&i| i != j).collect();
    let without = find_mode(&data.subset(&keep), &cfg, &kernel, &unit_weights(29), &settings).unwrap();
    for (pos, &i) in keep.iter().enumerate() {
        let moved = (post.mode[i] - without.mode[pos]).abs();
        assert!(moved < 1e-2, "index {i} moved by {moved}");
    }
}

#[test]
fn evidence_falls_as_outlier_grows() {
    let data = clean_data(6, 30, 0.2);
    let kernel = KernelParams::new(1.0, vec![0.8]).unwrap();
    let cfg = HuberConfig::default();
    let mut previous = f64::INFINITY;
    for m in [1e3, 1e4, 1e5, 1e6] {
        let mut dirty = data.clone();
        dirty.y[4] = m;
        let post = find_mode(&dirty, &cfg, &kernel, &unit_weights(30), &ModeSettings::default()).unwrap();
        assert!(post.log_evidence < previous);
        previous = post.log_evidence;
    }
}

/// Scalar Newton for the single-point mode, then the Laplace formula.
fn scalar_laplace(y: f64, k: f64, lam: f64, cfg: &HuberConfig) -> f64 {
    let b = cfg.threshold;
    let mut f = 0.0;
    for _ in 0..100 {
        let d = pseudo_huber((y - f) / lam, b);
        let g = d.first / lam - f / k;
        let hess = -d.second / (lam * lam) - 1.0 / k;
        f -= g / hess;
    }
    let d = pseudo_huber((y - f) / lam, b);
    let w = d.second / (lam * lam);
    let loglik = (1.0 - cfg.contamination).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - lam.ln() - d.value;
    loglik - 0.5 * f * f / k - 0.5 * (1.0 + k * w).ln()
}

fn single_point(y: f64, cfg: &HuberConfig, s: f64, tau: f64) -> f64 {
    let k = DMatrix::from_element(1, 1, tau * tau);
    let settings = ModeSettings {
        scale: ScaleRule::Fixed(s),
        ..ModeSettings::default()
    };
    find_mode_with_gram(&k, &DVector::from_element(1, y), 1, cfg, &unit_weights(1), &settings)
        .unwrap()
        .log_evidence
}

#[test]
fn single_point_evidence_matches_scalar_formula() {
    for (y, b) in [(0.7, 1.5), (4.0, 1.5), (-9.0, 0.5)] {
        let cfg = HuberConfig::new(b, 0.45, 0.5).unwrap();
        let got = single_point(y, &cfg, 1.2, 1.1);
        let want = scalar_laplace(y, 1.21, 0.6, &cfg);
        assert!((got - want).abs() < 1e-7, "y={y} b={b}: {got} vs {want}");
    }
}

#[test]
fn single_point_evidence_matches_quadrature_in_gaussian_limit() {
    let cfg = gaussian_limit();
    let (y, s, tau) = (0.7, 1.0, 1.1);
    let lam = cfg.sigma * s;
    let integrand = |f: f64| {
        let r = (y - f) / lam;
        let lik = (1.0 - cfg.contamination) / ((2.0 * std::f64::consts::PI).sqrt() * lam) * (-pseudo_huber(r, cfg.threshold).value).exp();
        let prior = (-0.5 * f * f / (tau * tau)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * tau);
        lik * prior
    };
    // Composite Simpson on [-12, 12].
    let m = 20_000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / m as f64;
    let mut total = integrand(a) + integrand(b);
    for i in 1..m {
        let x = a + i as f64 * h;
        total += if i % 2 == 1 { 4.0 } else { 2.0 } * integrand(x);
    }
    let quad = (total * h / 3.0).ln();
    assert!((single_point(y, &cfg, s, tau) - quad).abs() < 1e-4);
}

#[test]
fn clean_data_accuracy_close_to_conjugate() {
    let data = clean_data(8, 60, 0.2);
    let xs = DMatrix::from_fn(200, 1, |i, _| -2.5 + 5.0 * i as f64 / 199.0);
    let ys = DVector::from_fn(200, |i, _| neal_truth(xs[(i, 0)]));
    let gp = fit_ml2(&data, None, &OptimizerSettings::default()).unwrap();
    let weighting = RobustWeighting::for_regression(&data.x).unwrap();
    let la = optimize_hyperparams(&data, &HuberConfig::default(), &weighting, None, &LaplaceFitSettings::default()).unwrap();
    let rg = metrics(&gp.predict(&xs, false).unwrap(), &ys).unwrap().rmse;
    let rl = metrics(&la.predict(&xs, false).unwrap(), &ys).unwrap().rmse;
    assert!(rl <= 1.2 * rg, "huber {rl} vs conjugate {rg}");
}

#[test]
fn doubling_responses_doubles_predictions() {
    let data = clean_data(9, 40, 0.2);
    let mut doubled = data.clone();
    doubled.y *= 2.0;
    let weighting = RobustWeighting::for_regression(&data.x).unwrap();
    let settings = LaplaceFitSettings::default();
    let a = optimize_hyperparams(&data, &HuberConfig::default(), &weighting, None, &settings).unwrap();
    let b = optimize_hyperparams(&doubled, &HuberConfig::default(), &weighting, None, &settings).unwrap();
    let xs = DMatrix::from_fn(30, 1, |i, _| -2.5 + i as f64 * 0.17);
    let pa = a.predict(&xs, true).unwrap();
    let pb = b.predict(&xs, true).unwrap();
    for i in 0..30 {
        assert!((pb.mean[i] - 2.0 * pa.mean[i]).abs() <= 1e-6 * pa.mean[i].abs().max(1.0));
        assert!((pb.variance[i] - 4.0 * pa.variance[i]).abs() <= 1e-6 * pa.variance[i].max(1.0));
    }
}

#[test]
fn growing_outlier_leaves_huber_mean_fixed_but_moves_conjugate() {
    let data = clean_data(10, 40, 0.2);
    let kernel = KernelParams::new(1.0, vec![0.8]).unwrap();
    let cfg = HuberConfig::default();
    let j = 20;
    let xs = DMatrix::from_fn(25, 1, |i, _| -2.4 + 0.2 * i as f64);
    let fit = |m: f64| {
        let mut dirty = data.clone();
        dirty.y[j] = m;
        let la = HuberGpModel::new(&dirty, cfg, kernel.clone(), RobustWeighting::uniform(40), &ModeSettings::default()).unwrap();
        let gp = ConjugateModel::new(&dirty, kernel.clone(), 0.04).unwrap();
        (la.predict(&xs, false).unwrap().mean, gp.predict(&xs, false).unwrap().mean)
    };
    let (la4, gp4) = fit(1e4);
    let (la6, gp6) = fit(1e6);
    assert!((la6 - la4).amax() < 1e-6);
    assert!((gp6 - gp4).amax() > 0.1);
}
