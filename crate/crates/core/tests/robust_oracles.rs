use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use robustgp::robust::{chi_square_quantile, ps_weights};
use robustgp::{projection_statistics, robust_scale, RobustWeighting};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn sorted_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Brute force over the n candidate directions, unnormalized.
fn ps_oracle(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let center: Vec<f64> = (0..d)
        .map(|k| sorted_median(&rows.iter().map(|r| r[k]).collect::<Vec<_>>()))
        .collect();
    let mut best = vec![0.0f64; n];
    for dir_row in rows {
        let v: Vec<f64> = (0..d).map(|k| dir_row[k] - center[k]).collect();
        if v.iter().all(|c| *c == 0.0) {
            continue;
        }
        let z: Vec<f64> = rows.iter().map(|r| (0..d).map(|k| r[k] * v[k]).sum()).collect();
        let m = sorted_median(&z);
        let dev: Vec<f64> = z.iter().map(|p| (p - m).abs()).collect();
        let mad = 1.4826 * sorted_median(&dev);
        if mad == 0.0 {
            continue;
        }
        for i in 0..n {
            best[i] = best[i].max(dev[i] / mad);
        }
    }
    best
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0 + 0.5).collect())
        .collect()
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

#[test]
fn ps_matches_direction_enumeration_on_random_datasets() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(3..=30);
        let d = rng.random_range(1..=5);
        let rows = random_rows(&mut rng, n, d);
        let got = projection_statistics(&to_matrix(&rows)).unwrap();
        let want = ps_oracle(&rows);
        for i in 0..n {
            assert!(
                (got[i] - want[i]).abs() <= 1e-12 * want[i].max(1.0),
                "n={n} d={d} i={i}: {} vs {}",
                got[i],
                want[i]
            );
        }
    }
}

#[test]
fn ps_small_cloud_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = random_rows(&mut rng, 7, 2);
    let got = projection_statistics(&to_matrix(&rows)).unwrap();
    for (g, w) in got.iter().zip(ps_oracle(&rows)) {
        assert!((g - w).abs() <= 1e-12 * w.max(1.0));
    }
}

fn planted_cloud() -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rows: Vec<Vec<f64>> = (0..20)
        .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    rows.push(vec![50.0, 50.0]);
    rows
}

#[test]
fn planted_point_has_largest_ps() {
    let rows = planted_cloud();
    let ps = projection_statistics(&to_matrix(&rows)).unwrap();
    let oracle = ps_oracle(&rows);
    let far = rows.len() - 1;
    for i in 0..far {
        assert!(ps[far] > ps[i]);
        assert!(oracle[far] > oracle[i]);
    }
}

#[test]
fn planted_point_weights_follow_oracle_pipeline() {
    let rows = planted_cloud();
    let w = RobustWeighting::from_inputs(&to_matrix(&rows)).unwrap();
    let oracle = ps_oracle(&rows);
    let c = ChiSquared::new(2.0).unwrap().inverse_cdf(0.975);
    let far = rows.len() - 1;
    assert!(w.weights[far] < 0.2);
    for i in 0..rows.len() {
        let ps2 = oracle[i] * oracle[i];
        let want = if ps2 <= c { 1.0 } else { c / ps2 };
        assert!((w.weights[i] - want).abs() < 1e-9, "row {i}: {} vs {want}", w.weights[i]);
    }
}

#[test]
fn weight_halves_at_twice_the_cutoff() {
    let c = ChiSquared::new(2.0).unwrap().inverse_cdf(0.975);
    assert!((c - 7.3778).abs() < 1e-4);
    // Eleven rows in two dimensions puts the squared statistic in play.
    let x = DMatrix::from_fn(11, 2, |i, j| 1.0 + (i + j) as f64);
    let mut ps = DVector::from_element(11, 1.0);
    ps[4] = 14.7556f64.sqrt();
    let w = ps_weights(&ps, &x).unwrap();
    assert_eq!(w.dof[4], 2);
    assert!((w.weights[4] - c / 14.7556).abs() < 1e-9);
    assert!((w.weights[4] - 0.5).abs() < 1e-5);
    assert_eq!(w.weights[0], 1.0);
}

#[test]
fn chi_square_quantile_matches_statrs() {
    for nu in 1..=13 {
        for p in [0.5, 0.9, 0.975, 0.99] {
            let want = ChiSquared::new(nu as f64).unwrap().inverse_cdf(p);
            let got = chi_square_quantile(p, nu as f64).unwrap();
            assert!((got - want).abs() < 1e-8 * want.max(1.0), "nu={nu} p={p}: {got} vs {want}");
        }
    }
}

#[test]
fn robust_scale_ignores_residual_signs() {
    let r = [1.5, -0.2, 3.0, -7.0, 0.4, -2.2];
    let abs: Vec<f64> = r.iter().map(|v: &f64| v.abs()).collect();
    assert_eq!(robust_scale(&r, 1).unwrap().scale, robust_scale(&abs, 1).unwrap().scale);
}
