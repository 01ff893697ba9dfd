use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use robustgp::{build_gram, fit_ml2, gaussian_log_evidence, Dataset, KernelParams, OptimizerSettings, SpdFactor};

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Dataset {
    let x = DMatrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Dataset::new(x, y).unwrap()
}

/// Gauss-Jordan inverse with partial pivoting.
fn gauss_jordan_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    let mut inv = DMatrix::identity(n, n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[(i, col)].abs().partial_cmp(&a[(j, col)].abs()).unwrap()).unwrap();
        a.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for i in 0..n {
            if i != col {
                let f = a[(i, col)];
                for j in 0..n {
                    a[(i, j)] -= f * a[(col, j)];
                    inv[(i, j)] -= f * inv[(col, j)];
                }
            }
        }
    }
    inv
}

#[test]
fn random_gram_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let p = KernelParams::new(rng.random_range(0.5..2.0), vec![0.3, 1.0, 2.0]).unwrap();
        let k = build_gram(&x, &p, 0.0).unwrap().into_matrix();
        let eig = SymmetricEigen::new(k.clone()).eigenvalues;
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-12 * k.diagonal().max(), "min eigenvalue {min}");
    }
}

#[test]
fn spd_solve_matches_elimination_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
    let m = &a * a.transpose() + DMatrix::identity(6, 6) * 0.5;
    let b = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
    let z = SpdFactor::new(m.clone()).unwrap().solve(&b);
    let want = gauss_jordan_inverse(&m) * &b;
    assert!((z - want).amax() < 1e-10);
}

/// Value of the Gaussian evidence through an LU decomposition.
fn dense_evidence(data: &Dataset, noise_var: f64, p: &KernelParams) -> f64 {
    let n = data.len();
    let mut r = DMatrix::from_fn(n, n, |i, j| {
        let d2: f64 = (0..data.dim())
            .map(|c| ((data.x[(i, c)] - data.x[(j, c)]) / p.length_scales()[c]).powi(2))
            .sum();
        p.variance() * (-d2).exp()
    });
    for i in 0..n {
        r[(i, i)] += noise_var;
    }
    let lu = r.clone().lu();
    let alpha = lu.solve(&data.y).unwrap();
    -0.5 * data.y.dot(&alpha) - 0.5 * lu.determinant().ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn evidence_matches_lu_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let data = random_data(&mut rng, 8, 2);
        let p = KernelParams::new(rng.random_range(0.3..2.0), vec![rng.random_range(0.3..2.0), rng.random_range(0.3..2.0)])
            .unwrap();
        let noise = rng.random_range(0.05..1.0);
        let (v, _) = gaussian_log_evidence(&data, noise, &p).unwrap();
        assert!((v - dense_evidence(&data, noise, &p)).abs() < 1e-9);
    }
}

#[test]
fn evidence_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-5;
    for _ in 0..10 {
        let data = random_data(&mut rng, 8, 2);
        let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..0.7)).collect();
        let eval = |t: &[f64]| {
            let p = KernelParams::from_log(&t[1..]).unwrap();
            gaussian_log_evidence(&data, t[0].exp(), &p).unwrap()
        };
        let (_, grad) = eval(&theta);
        for k in 0..4 {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (eval(&up).0 - eval(&down).0) / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-3);
            assert!(rel < 1e-4, "coordinate {k}: analytic {} fd {fd}", grad[k]);
        }
    }
}

fn prior_draw(seed: u64, n: usize, tau: f64, ls: f64, noise_sd: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, 1, |_, _| rng.random_range(0.0..5.0));
    let k = DMatrix::from_fn(n, n, |i, j| {
        let z = (x[(i, 0)] - x[(j, 0)]) / ls;
        tau * tau * (-z * z).exp() + if i == j { 1e-10 } else { 0.0 }
    });
    let l = k.cholesky().unwrap().unpack();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let f = l * z;
    let y = DVector::from_fn(n, |i, _| f[i] + noise_sd * rng.sample::<f64, _>(StandardNormal));
    Dataset::new(x, y).unwrap()
}

#[test]
fn recovers_prior_hyperparameters() {
    let (tau, ls, sd) = (1.5, 0.7, 0.2);
    let data = prior_draw(6, 60, tau, ls, sd);
    let model = fit_ml2(&data, None, &OptimizerSettings::default()).unwrap();
    let scale = model.scaling().scale;
    let noise_var = model.noise_var() * scale * scale;
    assert!((noise_var.ln() - (sd * sd).ln()).abs() < 0.5, "noise var {noise_var}");
    assert!((model.amplitude_response_units().ln() - tau.ln()).abs() < 0.5);
    assert!((model.kernel().length_scales()[0].ln() - ls.ln()).abs() < 0.5);
}

#[test]
fn pure_noise_shrinks_amplitude_when_grid_agrees() {
    let mut shrunk = 0;
    for seed in 0..6 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(100, 1, |_, _| rng.random_range(0.0..5.0));
        let y = DVector::from_fn(100, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Dataset::new(x, y).unwrap();
        let model = fit_ml2(&data, None, &OptimizerSettings::default()).unwrap();
        let scaled = Dataset::new(data.x.clone(), model.scaling().apply(&data.y)).unwrap();
        let mut grid_best = (f64::NEG_INFINITY, 0.0, 0.0);
        for lt in [-7.0, -3.0, -1.0, 0.0, 1.0] {
            for ls in [-2.0, -1.0, 0.0, 1.0] {
                for ln in [-2.0, -1.0, -0.5, 0.0, 0.5] {
                    let p = KernelParams::from_log(&[lt, ls]).unwrap();
                    let (v, _) = gaussian_log_evidence(&scaled, f64::exp(ln), &p).unwrap();
                    if v > grid_best.0 {
                        grid_best = (v, p.variance(), f64::exp(ln));
                    }
                }
            }
        }
        assert!(model.log_evidence() >= grid_best.0 - 1e-6, "seed {seed}");
        if grid_best.1 < grid_best.2 / 10.0 {
            assert!(model.kernel().variance() < model.noise_var() / 10.0, "seed {seed}");
            shrunk += 1;
        }
    }
    assert!(shrunk > 0);
}

#[test]
fn predictions_ignore_training_order() {
    let data = prior_draw(8, 25, 1.0, 0.8, 0.1);
    let p = KernelParams::new(1.0, vec![0.8]).unwrap();
    let model = robustgp::ConjugateModel::new(&data, p.clone(), 0.01).unwrap();
    let order: Vec<usize> = (0..25).rev().collect();
    let permuted = robustgp::ConjugateModel::new(&data.subset(&order), p, 0.01).unwrap();
    let xs = DMatrix::from_fn(15, 1, |i, _| i as f64 * 0.4);
    let a = model.predict(&xs, true).unwrap();
    let b = permuted.predict(&xs, true).unwrap();
    assert!((a.mean - b.mean).amax() < 1e-10);
    assert!((a.variance - b.variance).amax() < 1e-10);
}
