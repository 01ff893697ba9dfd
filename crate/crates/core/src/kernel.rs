//! Anisotropic squared-exponential kernel and the dense symmetric
//! positive-definite machinery shared by every inference path.
//!
//! The kernel is `k(a, b) = τ² exp(-Σ_k (a_k - b_k)² / s_k²)`; note the
//! absence of the usual factor one half in the exponent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative jitter tried first when a factorization fails.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter before giving up.
pub const JITTER_CAP: f64 = 1e-4;

/// Amplitude and per-dimension length scales of the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    amplitude: f64,
    length_scales: Vec<f64>,
}

impl KernelParams {
    pub fn new(amplitude: f64, length_scales: Vec<f64>) -> Result<Self> {
        if !(amplitude.is_finite() && amplitude > 0.0) {
            return Err(Error::invalid("amplitude", format!("must be positive, got {amplitude}")));
        }
        if length_scales.is_empty() {
            return Err(Error::invalid("length_scales", "at least one length scale is required"));
        }
        if let Some(bad) = length_scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::invalid("length_scales", format!("must be positive, got {bad}")));
        }
        Ok(Self {
            amplitude,
            length_scales,
        })
    }

    /// Same length scale in every one of `dim` dimensions.
    pub fn isotropic(amplitude: f64, length_scale: f64, dim: usize) -> Result<Self> {
        Self::new(amplitude, vec![length_scale; dim])
    }

    /// Build from `[ln τ, ln s₁, …, ln s_d]`.
    pub fn from_log(log_params: &[f64]) -> Result<Self> {
        let (first, rest) = log_params
            .split_first()
            .ok_or_else(|| Error::invalid("log_params", "empty parameter vector"))?;
        Self::new(first.exp(), rest.iter().map(|v| v.exp()).collect())
    }

    /// `[ln τ, ln s₁, …, ln s_d]`.
    pub fn to_log(&self) -> Vec<f64> {
        std::iter::once(self.amplitude.ln())
            .chain(self.length_scales.iter().map(|s| s.ln()))
            .collect()
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn variance(&self) -> f64 {
        self.amplitude * self.amplitude
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: dim,
            });
        }
        Ok(())
    }

    #[inline]
    fn eval_unchecked<'a>(
        &self,
        a: impl Iterator<Item = &'a f64>,
        b: impl Iterator<Item = &'a f64>,
    ) -> f64 {
        let dist: f64 = a
            .zip(b)
            .zip(&self.length_scales)
            .map(|((ai, bi), s)| {
                let z = (ai - bi) / s;
                z * z
            })
            .sum();
        self.variance() * (-dist).exp()
    }
}

/// Kernel value between two points.
pub fn kernel_eval(a: &[f64], b: &[f64], params: &KernelParams) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    params.check_dim(a.len())?;
    Ok(params.eval_unchecked(a.iter(), b.iter()))
}

/// `k(xa_i, xb_j)` for every pair of rows, shape `na × nb`.
pub fn cross_covariance(xa: &DMatrix<f64>, xb: &DMatrix<f64>, params: &KernelParams) -> Result<DMatrix<f64>> {
    params.check_dim(xa.ncols())?;
    params.check_dim(xb.ncols())?;
    Ok(DMatrix::from_fn(xa.nrows(), xb.nrows(), |i, j| {
        params.eval_unchecked(xa.row(i).iter(), xb.row(j).iter())
    }))
}

/// Dense kernel matrix of a training set with a diagonal jitter.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    jitter: f64,
    scale: f64,
}

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Cholesky factor, escalating the jitter relative to `τ²` if needed.
    pub fn factor(&self) -> Result<SpdFactor> {
        SpdFactor::with_scale(self.matrix.clone(), self.scale)
    }
}

/// `K(X, X) + jitter·I`.
pub fn build_gram(x: &DMatrix<f64>, params: &KernelParams, jitter: f64) -> Result<GramMatrix> {
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::invalid("jitter", format!("must be non-negative, got {jitter}")));
    }
    params.check_dim(x.ncols())?;
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.variance() + jitter;
        for j in 0..i {
            let v = params.eval_unchecked(x.row(i).iter(), x.row(j).iter());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        matrix: k,
        jitter,
        scale: params.variance(),
    })
}

/// Lower Cholesky factor of a symmetric positive-definite matrix, possibly
/// after adding diagonal jitter.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    l: DMatrix<f64>,
    added_jitter: f64,
}

impl SpdFactor {
    /// Factor `m`, using its mean diagonal as the jitter reference scale.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let n = m.nrows();
        let scale = if n == 0 { 1.0 } else { m.diagonal().mean().abs().max(f64::MIN_POSITIVE) };
        Self::with_scale(m, scale)
    }

    /// Factor `m`; on failure retry with jitter `1e-10·scale`, growing tenfold
    /// up to `1e-4·scale`.
    pub fn with_scale(m: DMatrix<f64>, scale: f64) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix to factor".into()));
        }
        if let Some(l) = try_cholesky(&m) {
            return Ok(Self { l, added_jitter: 0.0 });
        }
        let mut jitter = JITTER_START * scale;
        let cap = JITTER_CAP * scale * (1.0 + 1e-9);
        while jitter <= cap {
            let mut shifted = m.clone();
            for i in 0..shifted.nrows() {
                shifted[(i, i)] += jitter;
            }
            if let Some(l) = try_cholesky(&shifted) {
                return Ok(Self { l, added_jitter: jitter });
            }
            jitter *= 10.0;
        }
        Err(Error::NotPositiveDefinite { jitter: jitter / 10.0 })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Lower-triangular factor `L` with `M + jitter·I = L Lᵀ`.
    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Jitter that had to be added for the factorization to succeed.
    pub fn added_jitter(&self) -> f64 {
        self.added_jitter
    }

    /// `ln |M|`, computed as `2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.solve_lower(b);
        self.l.tr_solve_lower_triangular_mut(&mut z);
        z
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut z = b.clone();
        self.l.solve_lower_triangular_mut(&mut z);
        self.l.tr_solve_lower_triangular_mut(&mut z);
        z
    }

    /// `L⁻¹ B`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = b.clone();
        self.l.solve_lower_triangular_mut(&mut z);
        z
    }

    /// `M⁻¹`, only for small matrices and diagnostics.
    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }
}

fn try_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone())?;
    let l = chol.unpack();
    if l.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
        Some(l)
    } else {
        None
    }
}

/// Solve `M Z = B` for symmetric positive-definite `M`, returning `Z` and
/// `ln |M|` from the same factorization.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if b.nrows() != m.nrows() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: b.nrows(),
        });
    }
    let factor = SpdFactor::new(m.clone())?;
    Ok((factor.solve(b), factor.log_det()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernel_at_zero_distance_is_variance() {
        let p = KernelParams::new(1.7, vec![0.3, 2.0]).unwrap();
        assert_eq!(kernel_eval(&[0.4, -1.0], &[0.4, -1.0], &p).unwrap(), 1.7 * 1.7);
    }

    #[test]
    fn kernel_unit_distance() {
        let p = KernelParams::new(1.0, vec![1.0]).unwrap();
        assert_relative_eq!(kernel_eval(&[0.0], &[1.0], &p).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn kernel_symmetric_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = KernelParams::new(0.8, vec![0.5, 1.5, 3.0]).unwrap();
        for _ in 0..100 {
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_eq!(kernel_eval(&a, &b, &p).unwrap(), kernel_eval(&b, &a, &p).unwrap());
        }
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let p = KernelParams::new(1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            kernel_eval(&[0.0], &[1.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(kernel_eval(&[0.0, 1.0], &[1.0], &p).is_err());
    }

    #[test]
    fn params_reject_non_positive() {
        assert!(KernelParams::new(0.0, vec![1.0]).is_err());
        assert!(KernelParams::new(1.0, vec![1.0, -2.0]).is_err());
        assert!(KernelParams::new(1.0, vec![]).is_err());
    }

    #[test]
    fn log_round_trip() {
        let p = KernelParams::new(2.5, vec![0.1, 7.0]).unwrap();
        let q = KernelParams::from_log(&p.to_log()).unwrap();
        assert_relative_eq!(p.amplitude(), q.amplitude(), max_relative = 1e-14);
        assert_relative_eq!(p.length_scales()[1], q.length_scales()[1], max_relative = 1e-14);
    }

    #[test]
    fn gram_single_point() {
        let p = KernelParams::new(2.0, vec![1.0]).unwrap();
        let k = build_gram(&DMatrix::from_row_slice(1, 1, &[0.3]), &p, 0.5).unwrap();
        assert_eq!(k.matrix()[(0, 0)], 4.5);
    }

    #[test]
    fn duplicated_rows_need_jitter() {
        let p = KernelParams::new(1.0, vec![1.0]).unwrap();
        let x = DMatrix::from_row_slice(2, 1, &[0.7, 0.7]);
        let k = build_gram(&x, &p, 0.0).unwrap();
        assert!(k.matrix().iter().all(|v| *v == 1.0));
        let f = k.factor().unwrap();
        assert!(f.added_jitter() > 0.0);
        assert!(f.added_jitter() <= JITTER_CAP);
    }

    #[test]
    fn negative_jitter_rejected() {
        let p = KernelParams::new(1.0, vec![1.0]).unwrap();
        assert!(build_gram(&DMatrix::zeros(2, 1), &p, -1.0).is_err());
    }

    #[test]
    fn indefinite_matrix_fails_after_cap() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(SpdFactor::new(m), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (z, logdet) = spd_solve(&DMatrix::identity(3, 3), &b).unwrap();
        assert_eq!(z, b);
        assert_eq!(logdet, 0.0);

        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let (z, logdet) = spd_solve(&m, &DMatrix::from_column_slice(2, 1, &[2.0, 4.0])).unwrap();
        assert_relative_eq!(z[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(z[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(logdet, 8.0f64.ln(), epsilon = 1e-14);
    }
}
