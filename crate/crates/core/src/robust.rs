//! Robust diagnostics on the input cloud and the residual scale.
//!
//! Projection statistics measure how far each row sits from the bulk of the
//! data along the directions joining the coordinatewise median to every data
//! point. Rows whose statistic exceeds a chi-square cutoff are downweighted.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

/// Consistency factor turning a MAD into a normal standard deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;
/// Tail probability of the chi-square cutoff.
pub const CUTOFF_PROBABILITY: f64 = 0.975;
/// Smallest residual scale handed out by [`robust_scale`].
pub const SCALE_FLOOR: f64 = 1e-8;

/// Median; the mean of the two central order statistics for even lengths.
///
/// Returns NaN for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    median_in_place(&mut v)
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median absolute deviation from the median (unscaled).
pub fn mad(values: &[f64]) -> f64 {
    let m = median(values);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - m).abs()).collect();
    if dev.is_empty() {
        return f64::NAN;
    }
    median_in_place(&mut dev)
}

/// Column-by-column median of `x`.
pub fn coordinatewise_median(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        x.ncols(),
        x.column_iter().map(|c| median(c.as_slice())),
    )
}

/// Projection statistic of every row of `x`.
///
/// Directions run from the coordinatewise median through each row. A
/// direction is skipped when the row coincides with the median or when the
/// projected MAD vanishes. Fails only when every direction is skipped.
pub fn projection_statistics(x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("x", "projection statistics need at least two rows"));
    }
    let center = coordinatewise_median(x);
    let mut ps = DVector::zeros(n);
    let mut used = 0usize;
    let mut proj = vec![0.0; n];
    let mut dev = vec![0.0; n];
    for j in 0..n {
        let v = x.row(j).transpose() - &center;
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let u = v / norm;
        for (i, p) in proj.iter_mut().enumerate() {
            *p = x.row(i).dot(&u.transpose());
        }
        let m = median(&proj);
        for (d, p) in dev.iter_mut().zip(&proj) {
            *d = (p - m).abs();
        }
        let spread = median(&dev);
        if spread == 0.0 {
            continue;
        }
        used += 1;
        let denom = MAD_CONSISTENCY * spread;
        for (out, d) in ps.iter_mut().zip(&dev) {
            *out = f64::max(*out, d / denom);
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every projection direction is degenerate; rows are identical or collinear with zero spread".into(),
        ));
    }
    Ok(ps)
}

/// `[1, x]`, the regressor matrix of a one-dimensional input.
pub fn augment_intercept(x: &[f64]) -> Result<DMatrix<f64>> {
    if x.len() < 2 {
        return Err(Error::invalid("x", format!("need at least two inputs, got {}", x.len())));
    }
    Ok(DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] }))
}

/// Which statistic is compared with the chi-square cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `n > 5d`: `PS²` is compared with the cutoff.
    SquaredPs,
    /// `n ≤ 5d`: `PS` itself is compared with the cutoff.
    RawPs,
}

impl Regime {
    pub fn for_shape(n: usize, d: usize) -> Self {
        if n > 5 * d {
            Regime::SquaredPs
        } else {
            Regime::RawPs
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::SquaredPs => "squared",
            Regime::RawPs => "raw",
        }
    }
}

/// Projection statistics together with the derived weights.
#[derive(Debug, Clone)]
pub struct RobustWeighting {
    pub ps: DVector<f64>,
    pub weights: DVector<f64>,
    pub thresholds: DVector<f64>,
    pub dof: Vec<usize>,
    pub regime: Regime,
}

impl RobustWeighting {
    /// Unit weights, for callers that want no input-space downweighting.
    pub fn uniform(n: usize) -> Self {
        Self {
            ps: DVector::zeros(n),
            weights: DVector::from_element(n, 1.0),
            thresholds: DVector::from_element(n, f64::INFINITY),
            dof: vec![0; n],
            regime: Regime::SquaredPs,
        }
    }

    /// Projection statistics and weights of `x` in one call.
    pub fn from_inputs(x: &DMatrix<f64>) -> Result<Self> {
        let ps = projection_statistics(x)?;
        ps_weights(&ps, x)
    }

    /// Weights for regression inputs: one-dimensional inputs are augmented
    /// with an intercept column first, since projections of a single
    /// coordinate carry no direction information.
    pub fn for_regression(x: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 1 {
            let col: Vec<f64> = x.column(0).iter().copied().collect();
            Self::from_inputs(&augment_intercept(&col)?)
        } else {
            Self::from_inputs(x)
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Weights `w_i = min(1, c_i / PS_i²)` with the chi-square cutoff `c_i`
/// chosen per row from its count of nonzero entries.
pub fn ps_weights(ps: &DVector<f64>, x: &DMatrix<f64>) -> Result<RobustWeighting> {
    if ps.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: ps.len(),
        });
    }
    let regime = Regime::for_shape(x.nrows(), x.ncols());
    // Quantiles depend only on the dof, so cache them.
    let mut cache: Vec<Option<f64>> = vec![None; x.ncols() + 1];
    let mut dof = Vec::with_capacity(x.nrows());
    let mut thresholds = DVector::zeros(x.nrows());
    let mut weights = DVector::zeros(x.nrows());
    for i in 0..x.nrows() {
        // An all-zero row would have zero degrees of freedom; use one.
        let nu = x.row(i).iter().filter(|v| **v != 0.0).count().max(1);
        let c = match cache[nu] {
            Some(c) => c,
            None => {
                let c = chi_square_quantile(CUTOFF_PROBABILITY, nu as f64)?;
                cache[nu] = Some(c);
                c
            }
        };
        let stat = match regime {
            Regime::SquaredPs => ps[i] * ps[i],
            Regime::RawPs => ps[i],
        };
        weights[i] = if stat <= c { 1.0 } else { c / (ps[i] * ps[i]) };
        thresholds[i] = c;
        dof.push(nu);
    }
    Ok(RobustWeighting {
        ps: ps.clone(),
        weights,
        thresholds,
        dof,
        regime,
    })
}

/// Quantile of the chi-square distribution by bisection on the regularized
/// lower incomplete gamma function.
pub fn chi_square_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid("p", format!("must lie in (0, 1), got {p}")));
    }
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(Error::invalid("dof", format!("must be positive, got {dof}")));
    }
    let cdf = |x: f64| gamma_lr(0.5 * dof, 0.5 * x);
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Robust residual scale `1.4826 · b_d · median|r|` with `b_d = 1 + 5/(n - d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustScale {
    pub scale: f64,
    pub correction: f64,
}

pub fn robust_scale(residuals: &[f64], d: usize) -> Result<RobustScale> {
    let n = residuals.len();
    if n <= d {
        return Err(Error::invalid(
            "residuals",
            format!("need more residuals than input dimensions ({n} <= {d})"),
        ));
    }
    let correction = 1.0 + 5.0 / (n - d) as f64;
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    let med = median_in_place(&mut abs);
    if !med.is_finite() {
        return Err(Error::NonFinite("residuals".into()));
    }
    let scale = (MAD_CONSISTENCY * correction * med).max(SCALE_FLOOR);
    Ok(RobustScale { scale, correction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[7.0]), 7.0);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn coordinatewise_median_examples() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 10.0, 2.0, 20.0, 3.0, 30.0]);
        assert_eq!(coordinatewise_median(&x).as_slice(), &[2.0, 20.0]);
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(coordinatewise_median(&x).as_slice(), &[2.5]);
        let x = DMatrix::from_row_slice(1, 3, &[5.0, -1.0, 0.5]);
        assert_eq!(coordinatewise_median(&x).as_slice(), &[5.0, -1.0, 0.5]);
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(projection_statistics(&x), Err(Error::Degenerate(_))));
    }

    #[test]
    fn intercept_matrix() {
        let h = augment_intercept(&[0.5, -1.0, 4.3]).unwrap();
        assert_eq!(h.shape(), (3, 2));
        assert_eq!(h.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 4.3]);
        assert!(h.column(0).iter().all(|v| *v == 1.0));
        assert!(augment_intercept(&[]).is_err());
    }

    #[test]
    fn chi_square_known_values() {
        assert_relative_eq!(chi_square_quantile(0.975, 2.0).unwrap(), -2.0 * 0.025f64.ln(), epsilon = 1e-10);
        assert_relative_eq!(chi_square_quantile(0.975, 1.0).unwrap(), 5.023886187314888, epsilon = 1e-9);
        assert!(chi_square_quantile(1.0, 2.0).is_err());
    }

    #[test]
    fn weight_branches() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i * 3 + j) as f64 + 1.0);
        let c = chi_square_quantile(0.975, 2.0).unwrap();
        let mut ps = DVector::from_element(20, 1.0);
        ps[3] = (2.0 * c).sqrt();
        let w = ps_weights(&ps, &x).unwrap();
        assert_eq!(w.regime, Regime::SquaredPs);
        assert_eq!(w.weights[0], 1.0);
        assert_relative_eq!(w.weights[3], 0.5, epsilon = 1e-12);
        assert_eq!(w.dof[0], 2);
    }

    #[test]
    fn raw_regime_for_small_n() {
        let x = DMatrix::from_fn(6, 2, |i, j| (i + j) as f64 + 1.0);
        let mut ps = DVector::from_element(6, 2.0);
        ps[0] = 9.0;
        let w = ps_weights(&ps, &x).unwrap();
        assert_eq!(w.regime, Regime::RawPs);
        // 2² = 4 > 7.38 would fail the squared rule; the raw rule keeps it.
        assert_eq!(w.weights[1], 1.0);
        assert!(w.weights[0] < 1.0);
    }

    #[test]
    fn robust_scale_examples() {
        let s = robust_scale(&[1.0, -2.0, 3.0, -4.0, 5.0], 1).unwrap();
        assert_relative_eq!(s.correction, 2.25);
        assert_relative_eq!(s.scale, 10.00755, epsilon = 1e-10);
        assert_eq!(robust_scale(&[0.0; 5], 1).unwrap().scale, SCALE_FLOOR);
        let r = [0.3, -1.2, 2.2, 0.1, -0.7, 4.0];
        let r10: Vec<f64> = r.iter().map(|v| v * 10.0).collect();
        assert_relative_eq!(
            robust_scale(&r10, 2).unwrap().scale,
            10.0 * robust_scale(&r, 2).unwrap().scale,
            max_relative = 1e-14
        );
        assert!(robust_scale(&[1.0, 2.0], 2).is_err());
    }
}
