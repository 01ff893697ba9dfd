//! Gaussian-likelihood GP regression with type-II maximum likelihood.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Dataset, PredictiveDistribution, ResponseScaling};
use crate::error::{Error, Result};
use crate::kernel::{build_gram, cross_covariance, KernelParams, SpdFactor};
use crate::optim::{maximize_multistart, OptimizerSettings};

/// Summary of a hyperparameter search.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub grad_norm: f64,
    /// Final objective of each start, in start order.
    pub start_values: Vec<f64>,
}

/// Log of `N(y | 0, K + σ²I)` and its gradient over
/// `[ln σ², ln τ, ln s_1, …, ln s_d]`.
pub fn gaussian_log_evidence(
    data: &Dataset,
    noise_var: f64,
    params: &KernelParams,
) -> Result<(f64, DVector<f64>)> {
    if !(noise_var.is_finite() && noise_var > 0.0) {
        return Err(Error::invalid("noise_var", format!("must be positive, got {noise_var}")));
    }
    let n = data.len();
    let gram = build_gram(&data.x, params, 0.0)?;
    let k = gram.into_matrix();
    let mut r = k.clone();
    for i in 0..n {
        r[(i, i)] += noise_var;
    }
    let factor = SpdFactor::with_scale(r, params.variance() + noise_var)?;
    let alpha = factor.solve_vec(&data.y);
    let value = -0.5 * data.y.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * n as f64 * (2.0 * PI).ln();

    // Q = ααᵀ - R⁻¹; dL/dθ = ½ tr(Q ∂R/∂θ).
    let mut q = factor.inverse();
    q.neg_mut();
    q.ger(1.0, &alpha, &alpha, 1.0);

    let d = data.dim();
    let mut grad = DVector::zeros(d + 2);
    grad[0] = 0.5 * noise_var * q.trace();
    grad[1] = q.component_mul(&k).sum();
    let ls = params.length_scales();
    for j in 0..n {
        for i in 0..n {
            let qk = q[(i, j)] * k[(i, j)];
            if qk == 0.0 {
                continue;
            }
            for c in 0..d {
                let delta = (data.x[(i, c)] - data.x[(j, c)]) / ls[c];
                grad[c + 2] += qk * delta * delta;
            }
        }
    }
    Ok((value, grad))
}

/// Fitted Gaussian-likelihood GP.
#[derive(Debug, Clone)]
pub struct ConjugateModel {
    kernel: KernelParams,
    noise_var: f64,
    x: DMatrix<f64>,
    scaling: ResponseScaling,
    factor: SpdFactor,
    alpha: DVector<f64>,
    log_evidence: f64,
    report: Option<FitReport>,
}

impl ConjugateModel {
    /// Condition on `data` with fixed hyperparameters and no response scaling.
    pub fn new(data: &Dataset, kernel: KernelParams, noise_var: f64) -> Result<Self> {
        Self::with_scaling(data, kernel, noise_var, ResponseScaling::identity())
    }

    /// Condition on `data` after mapping responses through `scaling`.
    /// Hyperparameters are on the scaled response axis.
    pub fn with_scaling(
        data: &Dataset,
        kernel: KernelParams,
        noise_var: f64,
        scaling: ResponseScaling,
    ) -> Result<Self> {
        if !(noise_var.is_finite() && noise_var > 0.0) {
            return Err(Error::invalid("noise_var", format!("must be positive, got {noise_var}")));
        }
        let z = scaling.apply(&data.y);
        let mut r = build_gram(&data.x, &kernel, 0.0)?.into_matrix();
        for i in 0..data.len() {
            r[(i, i)] += noise_var;
        }
        let factor = SpdFactor::with_scale(r, kernel.variance() + noise_var)?;
        let alpha = factor.solve_vec(&z);
        let log_evidence =
            -0.5 * z.dot(&alpha) - 0.5 * factor.log_det() - 0.5 * data.len() as f64 * (2.0 * PI).ln();
        Ok(Self {
            kernel,
            noise_var,
            x: data.x.clone(),
            scaling,
            factor,
            alpha,
            log_evidence,
            report: None,
        })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    /// Noise variance on the scaled response axis.
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn scaling(&self) -> &ResponseScaling {
        &self.scaling
    }

    /// Log evidence of the scaled responses.
    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn log_det(&self) -> f64 {
        self.factor.log_det()
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    /// Kernel amplitude in response units.
    pub fn amplitude_response_units(&self) -> f64 {
        self.kernel.amplitude() * self.scaling.scale
    }

    /// Noise standard deviation in response units.
    pub fn noise_sd_response_units(&self) -> f64 {
        self.noise_var.sqrt() * self.scaling.scale
    }

    /// Predictive mean and marginal variances, in response units.
    pub fn predict(&self, x_star: &DMatrix<f64>, include_noise: bool) -> Result<PredictiveDistribution> {
        self.predict_inner(x_star, include_noise, false)
    }

    /// As [`predict`](Self::predict) with the full predictive covariance.
    pub fn predict_full(&self, x_star: &DMatrix<f64>, include_noise: bool) -> Result<PredictiveDistribution> {
        self.predict_inner(x_star, include_noise, true)
    }

    fn predict_inner(&self, x_star: &DMatrix<f64>, include_noise: bool, full: bool) -> Result<PredictiveDistribution> {
        if x_star.ncols() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.x.ncols(),
                found: x_star.ncols(),
            });
        }
        let c = cross_covariance(&self.x, x_star, &self.kernel)?;
        let mean = c.tr_mul(&self.alpha);
        let v = self.factor.solve_lower(&c);
        let tau2 = self.kernel.variance();
        let noise = if include_noise { self.noise_var } else { 0.0 };
        let floor = 1e-12 * tau2;
        let variance = DVector::from_fn(x_star.nrows(), |j, _| {
            (tau2 - v.column(j).norm_squared()).max(floor) + noise
        });
        let covariance = if full {
            let mut cov = cross_covariance(x_star, x_star, &self.kernel)?;
            cov -= v.tr_mul(&v);
            for j in 0..cov.nrows() {
                cov[(j, j)] = variance[j];
            }
            Some(cov)
        } else {
            None
        };
        Ok(PredictiveDistribution {
            mean,
            variance,
            covariance,
        }
        .unscale(&self.scaling))
    }
}

/// Starting log-hyperparameters `[ln σ², ln τ, ln s…]` for standardized
/// responses: unit amplitude, noise variance 0.1, and length scales equal to
/// each column's spread times `√d`, so that typical pairs of inputs start out
/// correlated whatever the dimension.
pub fn default_log_init(x: &DMatrix<f64>) -> Vec<f64> {
    let mut init = vec![(0.1f64).ln(), 0.0];
    let widen = 0.5 * (x.ncols().max(1) as f64).ln();
    for c in 0..x.ncols() {
        let col = x.column(c);
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len().max(1) as f64).sqrt();
        init.push(if sd.is_finite() && sd > 0.0 { sd.ln() + widen } else { widen });
    }
    init
}

/// Maximize the Gaussian evidence of the robustly standardized responses
/// from `init` (log-hyperparameters `[ln σ², ln τ, ln s…]`, defaulting to
/// [`default_log_init`]) plus the configured random restarts.
pub fn fit_ml2(data: &Dataset, init: Option<&[f64]>, settings: &OptimizerSettings) -> Result<ConjugateModel> {
    if data.len() < 2 {
        return Err(Error::invalid("data", "at least two observations are required"));
    }
    let d = data.dim();
    let init = match init {
        Some(v) if v.len() != d + 2 => {
            return Err(Error::DimensionMismatch {
                expected: d + 2,
                found: v.len(),
            })
        }
        Some(v) => v.to_vec(),
        None => default_log_init(&data.x),
    };
    let scaling = ResponseScaling::robust(data.y.as_slice());
    let scaled = Dataset {
        x: data.x.clone(),
        y: scaling.apply(&data.y),
    };
    let mut objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let kernel = KernelParams::from_log(&theta[1..])?;
        let (v, g) = gaussian_log_evidence(&scaled, theta[0].exp(), &kernel)?;
        Ok((v, g.as_slice().to_vec()))
    };
    let (v0, _) = objective(&clamped(&init, settings))?;
    if !v0.is_finite() {
        return Err(Error::NonFinite("evidence at the initial hyperparameters".into()));
    }
    let ms = maximize_multistart(&mut objective, &init, settings)?;
    let best = &ms.best;
    let kernel = KernelParams::from_log(&best.x[1..])?;
    let mut model = ConjugateModel::with_scaling(data, kernel, best.x[0].exp(), scaling)?;
    model.report = Some(FitReport {
        converged: best.converged,
        iterations: best.iterations,
        evaluations: ms.runs.iter().map(|r| r.evaluations).sum(),
        grad_norm: best.grad_norm(),
        start_values: ms.runs.iter().map(|r| r.value).collect(),
    });
    Ok(model)
}

fn clamped(x: &[f64], s: &OptimizerSettings) -> Vec<f64> {
    x.iter().map(|v| v.clamp(s.log_lower, s.log_upper)).collect()
}
