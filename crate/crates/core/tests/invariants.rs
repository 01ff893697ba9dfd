use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use robustgp::bench::{kfold_split, metrics, NoiseSpec};
use robustgp::likelihood::{pseudo_huber, split_residuals};
use robustgp::mcmc::mixture_moments;
use robustgp::{
    build_gram, find_mode, kernel_eval, projection_statistics, robust_scale, Dataset, HuberConfig, KernelParams,
    ModeSettings, PredictiveDistribution, RobustWeighting, SamplerSettings,
};

fn matrix(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0..10.0f64, n * d).prop_map(move |v| DMatrix::from_vec(n, d, v))
}

fn sized_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (3usize..16, 1usize..4).prop_flat_map(|(n, d)| matrix(n, d))
}

fn kernel(d: usize) -> impl Strategy<Value = KernelParams> {
    (0.1..5.0f64, prop::collection::vec(0.1..5.0f64, d)).prop_map(|(a, s)| KernelParams::new(a, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_bounded(a in prop::collection::vec(-5.0..5.0f64, 3),
                                       b in prop::collection::vec(-5.0..5.0f64, 3),
                                       p in kernel(3)) {
        let kab = kernel_eval(&a, &b, &p).unwrap();
        prop_assert_eq!(kab, kernel_eval(&b, &a, &p).unwrap());
        prop_assert!(kab >= 0.0 && kab <= p.variance());
    }

    #[test]
    fn gram_is_symmetric_and_factorizable(x in matrix(8, 2), p in kernel(2)) {
        let g = build_gram(&x, &p, 0.0).unwrap();
        let k = g.matrix();
        prop_assert!((k - k.transpose()).amax() <= 1e-12 * p.variance());
        prop_assert!(g.factor().is_ok());
    }

    #[test]
    fn ps_nonnegative_and_translation_invariant(x in sized_matrix(), shift in prop::collection::vec(-50.0..50.0f64, 3)) {
        if let Ok(ps) = projection_statistics(&x) {
            prop_assert!(ps.iter().all(|v| *v >= 0.0));
            let moved = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] + shift[j]);
            let ps2 = projection_statistics(&moved).unwrap();
            for i in 0..x.nrows() {
                prop_assert!((ps[i] - ps2[i]).abs() <= 1e-6 * ps[i].max(1.0));
            }
        }
    }

    #[test]
    fn ps_permutation_invariant(x in sized_matrix(), rot in 1usize..15) {
        let n = x.nrows();
        let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let px = DMatrix::from_fn(n, x.ncols(), |i, j| x[(perm[i], j)]);
        if let Ok(ps) = projection_statistics(&x) {
            let pps = projection_statistics(&px).unwrap();
            for i in 0..n {
                prop_assert!((pps[i] - ps[perm[i]]).abs() <= 1e-9 * ps[perm[i]].max(1.0));
            }
        }
    }

    #[test]
    fn weights_follow_threshold_rule(x in sized_matrix()) {
        if let Ok(w) = RobustWeighting::from_inputs(&x) {
            for i in 0..w.len() {
                let wi = w.weights[i];
                prop_assert!(wi > 0.0 && wi <= 1.0);
                let stat = match w.regime.as_str() {
                    "squared" => w.ps[i] * w.ps[i],
                    _ => w.ps[i],
                };
                if stat <= w.thresholds[i] {
                    prop_assert_eq!(wi, 1.0);
                } else {
                    prop_assert!((wi - w.thresholds[i] / (w.ps[i] * w.ps[i])).abs() < 1e-15);
                    prop_assert!(wi < 1.0);
                }
            }
        }
    }

    #[test]
    fn robust_scale_formula_and_equivariance(r in prop::collection::vec(-5.0..5.0f64, 4..30), c in 0.1..20.0f64) {
        let d = 1;
        let s = robust_scale(&r, d).unwrap();
        let mut abs: Vec<f64> = r.iter().map(|v| v.abs()).collect();
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = abs.len();
        let med = if n % 2 == 1 { abs[n / 2] } else { 0.5 * (abs[n / 2 - 1] + abs[n / 2]) };
        let bd = 1.0 + 5.0 / (n - d) as f64;
        prop_assert!((s.correction - bd).abs() < 1e-15);
        if med > 0.0 {
            prop_assert!((s.scale - 1.4826 * bd * med).abs() <= 1e-12 * s.scale);
        }
        let scaled: Vec<f64> = r.iter().map(|v| -c * v).collect();
        let s2 = robust_scale(&scaled, d).unwrap();
        prop_assert!((s2.scale - c * s.scale).abs() <= 1e-9 * s2.scale.max(1e-8));
    }

    #[test]
    fn split_partitions_indices(y in prop::collection::vec(-20.0..20.0f64, 1..30), b in 0.1..5.0f64) {
        let n = y.len();
        let cfg = HuberConfig::default().with_threshold(b);
        let split = split_residuals(&DVector::from_vec(y), &DVector::zeros(n), &cfg, &DVector::from_element(n, 1.0), 1.0).unwrap();
        let mut all: Vec<usize> = split.inliers.iter().chain(&split.outliers).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        for &i in &split.inliers {
            prop_assert!(split.standardized[i].abs() <= b);
        }
    }

    #[test]
    fn pseudo_huber_is_convex_and_below_quadratic(r in -1e3..1e3f64, b in 0.05..10.0f64) {
        let d = pseudo_huber(r, b);
        prop_assert!(d.second > 0.0 && d.second <= 1.0);
        prop_assert!(d.value >= 0.0 && d.value <= 0.5 * r * r + 1e-12);
        prop_assert!(d.first.abs() <= b * (1.0 + 1e-12));
    }

    #[test]
    fn laplace_curvature_positive(seed_y in prop::collection::vec(-3.0..3.0f64, 8), outlier in -100.0..100.0f64) {
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        let mut y = seed_y;
        y[3] += outlier;
        let data = Dataset::from_1d(&x, &y).unwrap();
        let p = KernelParams::new(1.0, vec![0.7]).unwrap();
        let post = find_mode(&data, &HuberConfig::default(), &p, &DVector::from_element(8, 1.0), &ModeSettings::default()).unwrap();
        prop_assert!(post.w.iter().all(|w| *w > 0.0));
        if post.converged {
            prop_assert!(post.grad_norm < 1e-6);
        }
    }

    #[test]
    fn mixture_variance_dominates_mean_variance(
        m in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 1..8),
        v in prop::collection::vec(prop::collection::vec(0.01..3.0f64, 3), 8),
    ) {
        let means: Vec<DVector<f64>> = m.iter().map(|c| DVector::from_vec(c.clone())).collect();
        let vars: Vec<DVector<f64>> = v[..means.len()].iter().map(|c| DVector::from_vec(c.clone())).collect();
        let (_, var) = mixture_moments(&means, &vars).unwrap();
        for j in 0..3 {
            let avg = vars.iter().map(|x| x[j]).sum::<f64>() / vars.len() as f64;
            prop_assert!(var[j] >= avg - 1e-12);
        }
    }

    #[test]
    fn metric_ordering(e in prop::collection::vec(-10.0..10.0f64, 1..40), v in 0.01..4.0f64) {
        let n = e.len();
        let pred = PredictiveDistribution { mean: DVector::zeros(n), variance: DVector::from_element(n, v), covariance: None };
        let m = metrics(&pred, &DVector::from_vec(e)).unwrap();
        prop_assert!(m.rmse >= 0.0 && m.mae >= 0.0);
        prop_assert!(m.mae <= m.rmse + 1e-12);
    }

    #[test]
    fn kfold_partitions(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let folds = kfold_split(n, k, seed).unwrap();
        let mut count = vec![0usize; n];
        for (train, test) in &folds {
            prop_assert_eq!(train.len() + test.len(), n);
            prop_assert!(test.len() == n / k || test.len() == n / k + 1);
            for &i in test {
                count[i] += 1;
            }
        }
        prop_assert!(count.iter().all(|c| *c == 1));
    }

    #[test]
    fn noise_spec_round_trip(which in 0usize..5, a in -3.0..3.0f64, b in 0.01..5.0f64) {
        let spec = match which {
            0 => NoiseSpec::None,
            1 => NoiseSpec::Normal { mean: a, sd: b },
            2 => NoiseSpec::StudentT { dof: b },
            3 => NoiseSpec::Laplace { location: a, scale: b },
            _ => NoiseSpec::Cauchy { location: a, scale: b },
        };
        let back: NoiseSpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn retained_count_arithmetic(burn in 0usize..500, extra in 1usize..2000, thin in 1usize..10) {
        let s = SamplerSettings { total: burn + extra, burn_in: burn, thin, ..SamplerSettings::default() };
        prop_assert_eq!(s.retained(), extra / thin);
    }
}
