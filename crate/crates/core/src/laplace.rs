//! Laplace approximation for the GP with a pseudo-Huber likelihood.
//!
//! The mode is found by Newton iterations in the `a = K⁻¹f` parameterization
//! with `B = I + W½ K W½`, so `K` is never inverted. The robust scale `s` is
//! held fixed during each run of Newton steps and recomputed from the
//! residuals between runs.
//!
//! The approximate log evidence is
//! `ln p_H(y | f̂) - ½ f̂ᵀK⁻¹f̂ - ½ ln|I + W½ K W½|`,
//! with the likelihood term read as the Huber log-likelihood at the mode.

use std::cell::RefCell;

use nalgebra::{DMatrix, DVector};

use crate::conjugate::FitReport;
use crate::dataset::{Dataset, PredictiveDistribution, ResponseScaling};
use crate::error::{Error, Result};
use crate::kernel::{build_gram, cross_covariance, KernelParams, SpdFactor};
use crate::likelihood::{huber_log_likelihood, pseudo_huber, HuberConfig, Loss};
use crate::optim::{central_difference, maximize_multistart, OptimizerSettings, SplitObjective};
use crate::robust::{robust_scale, RobustWeighting, SCALE_FLOOR};

/// How the residual scale `s` is obtained during mode finding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleRule {
    /// Recompute `s` from the residuals after each run of Newton steps.
    Robust,
    /// Keep `s` fixed.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSettings {
    pub max_outer: usize,
    pub max_inner: usize,
    /// Inner stop: ∞-norm of the log-posterior gradient.
    pub grad_tol: f64,
    /// Inner stop: ∞-norm of the change in `f`.
    pub step_tol: f64,
    /// Outer stop: relative change in `s`.
    pub scale_tol: f64,
    pub scale: ScaleRule,
    /// Record the log-posterior after every accepted Newton step.
    pub record_trace: bool,
}

impl Default for ModeSettings {
    fn default() -> Self {
        Self {
            max_outer: 100,
            max_inner: 50,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            scale_tol: 1e-12,
            scale: ScaleRule::Robust,
            record_trace: false,
        }
    }
}

/// Gaussian approximation to the latent posterior around its mode.
#[derive(Debug, Clone)]
pub struct LaplacePosterior {
    pub mode: DVector<f64>,
    /// Negative second derivative of the log-likelihood at the mode.
    pub w: DVector<f64>,
    pub log_evidence: f64,
    pub converged: bool,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub scale: f64,
    /// ∞-norm of the log-posterior gradient at the mode.
    pub grad_norm: f64,
    /// Log-posterior values per outer iteration; empty unless recorded.
    pub trace: Vec<Vec<f64>>,
    a: DVector<f64>,
    l_b: DMatrix<f64>,
}

impl LaplacePosterior {
    /// `K⁻¹ f̂`.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.a
    }

    /// Cholesky factor of `I + W½ K W½`.
    pub fn b_factor(&self) -> &DMatrix<f64> {
        &self.l_b
    }

    /// `½ ln|B|` where `B = I + W½ K W½`.
    pub fn half_log_det_b(&self) -> f64 {
        self.l_b.diagonal().iter().map(|v| v.ln()).sum()
    }
}

struct Terms {
    grad: DVector<f64>,
    w: DVector<f64>,
    loglik: f64,
}

fn terms(y: &DVector<f64>, f: &DVector<f64>, cfg: &HuberConfig, weights: &DVector<f64>, s: f64) -> Terms {
    let n = y.len();
    let b = cfg.threshold;
    let log_c = (1.0 - cfg.contamination).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut grad = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    let mut loglik = 0.0;
    for i in 0..n {
        let lam = weights[i] * cfg.sigma * s;
        let d = pseudo_huber((y[i] - f[i]) / lam, b);
        grad[i] = d.first / lam;
        w[i] = d.second / (lam * lam);
        loglik += log_c - lam.ln() - d.value;
    }
    Terms {
        grad,
        w,
        loglik,
    }
}

fn factor_b(k: &DMatrix<f64>, w: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let sw = w.map(f64::sqrt);
    let n = k.nrows();
    let mut b = DMatrix::from_fn(n, n, |i, j| sw[i] * k[(i, j)] * sw[j]);
    for i in 0..n {
        b[(i, i)] += 1.0;
    }
    let factor = SpdFactor::with_scale(b, 1.0)?;
    Ok((factor.l().clone(), sw))
}

fn chol_solve(l: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut z = v.clone();
    l.solve_lower_triangular_mut(&mut z);
    l.tr_solve_lower_triangular_mut(&mut z);
    z
}

fn check_inputs(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    weights: &DVector<f64>,
    cfg: &HuberConfig,
) -> Result<()> {
    cfg.validate()?;
    for len in [k.nrows(), k.ncols(), weights.len()] {
        if len != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: len,
            });
        }
    }
    if let Some(bad) = weights.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::invalid("weights", format!("must lie in (0, 1], got {bad}")));
    }
    Ok(())
}

/// Posterior mode under the pseudo-Huber likelihood for a given kernel
/// matrix. `input_dim` enters the robust scale's correction factor.
pub fn find_mode_with_gram(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    input_dim: usize,
    cfg: &HuberConfig,
    weights: &DVector<f64>,
    settings: &ModeSettings,
) -> Result<LaplacePosterior> {
    find_mode_from(k, y, input_dim, cfg, weights, settings, None)
}

/// As [`find_mode_with_gram`], starting Newton from `a = warm` instead of
/// zero. The scale still starts from `y`, so the sequence of scales and the
/// mode reached do not depend on `warm`.
pub fn find_mode_from(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    input_dim: usize,
    cfg: &HuberConfig,
    weights: &DVector<f64>,
    settings: &ModeSettings,
    warm: Option<&DVector<f64>>,
) -> Result<LaplacePosterior> {
    check_inputs(k, y, weights, cfg)?;
    let n = y.len();
    let (mut f, mut a) = match warm {
        Some(a0) if a0.len() == n && a0.iter().all(|v| v.is_finite()) => (k * a0, a0.clone()),
        _ => (DVector::zeros(n), DVector::zeros(n)),
    };
    let mut s = match settings.scale {
        ScaleRule::Fixed(s) if s.is_finite() && s > 0.0 => s,
        ScaleRule::Fixed(s) => return Err(Error::invalid("scale", format!("must be positive, got {s}"))),
        ScaleRule::Robust => robust_scale(y.as_slice(), input_dim)?.scale,
    };
    let mut trace = Vec::new();
    let mut inner_total = 0;
    let mut outer = 0;
    let mut converged = false;

    while outer < settings.max_outer {
        outer += 1;
        let mut psi = terms(y, &f, cfg, weights, s).loglik - 0.5 * a.dot(&f);
        let mut history = vec![psi];
        let mut inner_converged = false;
        for _ in 0..settings.max_inner {
            let t = terms(y, &f, cfg, weights, s);
            let g = &t.grad - &a;
            if g.amax() < settings.grad_tol {
                inner_converged = true;
                break;
            }
            inner_total += 1;
            let (l, sw) = factor_b(k, &t.w)?;
            let bb = t.w.component_mul(&f) + &t.grad;
            let rhs = sw.component_mul(&(k * &bb));
            let a_newton = &bb - sw.component_mul(&chol_solve(&l, &rhs));
            let da = a_newton - &a;
            let df = k * &da;

            let mut step = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let a_try = &a + &da * step;
                let f_try = &f + &df * step;
                let psi_try = terms(y, &f_try, cfg, weights, s).loglik - 0.5 * a_try.dot(&f_try);
                if psi_try >= psi {
                    let change = (&df * step).amax();
                    a = a_try;
                    f = f_try;
                    psi = psi_try;
                    accepted = true;
                    if change < settings.step_tol {
                        inner_converged = true;
                    }
                    break;
                }
                step *= 0.5;
            }
            history.push(psi);
            if !accepted {
                // No ascent possible at working precision.
                inner_converged = df.amax() * step < settings.step_tol || g.amax() < 1e3 * settings.grad_tol;
                break;
            }
            if inner_converged {
                break;
            }
        }
        if settings.record_trace {
            trace.push(history);
        }

        match settings.scale {
            ScaleRule::Fixed(_) => {
                converged = inner_converged;
                break;
            }
            ScaleRule::Robust => {
                let r = y - &f;
                let s_new = robust_scale(r.as_slice(), input_dim)?.scale;
                if s_new <= SCALE_FLOOR {
                    s = SCALE_FLOOR;
                    converged = true;
                    break;
                }
                let stable = (s_new - s).abs() <= settings.scale_tol * s;
                if stable && inner_converged {
                    converged = true;
                    break;
                }
                s = s_new;
            }
        }
    }

    let t = terms(y, &f, cfg, weights, s);
    let grad_norm = (&t.grad - &a).amax();
    let (l_b, _) = factor_b(k, &t.w)?;
    let half_log_det: f64 = l_b.diagonal().iter().map(|v| v.ln()).sum();
    let log_evidence = t.loglik - 0.5 * a.dot(&f) - half_log_det;
    Ok(LaplacePosterior {
        mode: f,
        w: t.w,
        log_evidence,
        converged,
        outer_iterations: outer,
        inner_iterations: inner_total,
        scale: s,
        grad_norm,
        trace,
        a,
        l_b,
    })
}

/// Posterior mode for `data` with fixed hyperparameters.
pub fn find_mode(
    data: &Dataset,
    cfg: &HuberConfig,
    params: &KernelParams,
    weights: &DVector<f64>,
    settings: &ModeSettings,
) -> Result<LaplacePosterior> {
    let k = build_gram(&data.x, params, 0.0)?.into_matrix();
    find_mode_with_gram(&k, &data.y, data.dim(), cfg, weights, settings)
}

/// Approximate log evidence of a posterior, recomputed from its mode with
/// the Huber log-likelihood selected by `loss`.
pub fn approx_log_evidence(
    posterior: &LaplacePosterior,
    y: &DVector<f64>,
    cfg: &HuberConfig,
    weights: &DVector<f64>,
    loss: Loss,
) -> Result<f64> {
    let ll = huber_log_likelihood(y, &posterior.mode, cfg, weights, posterior.scale, loss)?;
    Ok(ll - 0.5 * posterior.a.dot(&posterior.mode) - posterior.half_log_det_b())
}

/// Settings for the evidence maximization.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceFitSettings {
    pub optimizer: OptimizerSettings,
    pub mode: ModeSettings,
    /// Central-difference step in log-hyperparameter space.
    pub fd_step: f64,
    /// Standardize responses by median and normalized MAD before fitting.
    pub scale_response: bool,
}

impl Default for LaplaceFitSettings {
    fn default() -> Self {
        Self {
            optimizer: OptimizerSettings::default(),
            mode: ModeSettings::default(),
            fd_step: 1e-4,
            scale_response: true,
        }
    }
}

/// Huber-likelihood GP fitted by the Laplace approximation.
#[derive(Debug, Clone)]
pub struct HuberGpModel {
    kernel: KernelParams,
    cfg: HuberConfig,
    weighting: RobustWeighting,
    posterior: LaplacePosterior,
    x: DMatrix<f64>,
    scaling: ResponseScaling,
    report: Option<FitReport>,
}

impl HuberGpModel {
    /// Condition on `data` with fixed hyperparameters and no response scaling.
    pub fn new(
        data: &Dataset,
        cfg: HuberConfig,
        kernel: KernelParams,
        weighting: RobustWeighting,
        settings: &ModeSettings,
    ) -> Result<Self> {
        Self::with_scaling(data, cfg, kernel, weighting, settings, ResponseScaling::identity())
    }

    pub fn with_scaling(
        data: &Dataset,
        cfg: HuberConfig,
        kernel: KernelParams,
        weighting: RobustWeighting,
        settings: &ModeSettings,
        scaling: ResponseScaling,
    ) -> Result<Self> {
        if weighting.len() != data.len() {
            return Err(Error::DimensionMismatch {
                expected: data.len(),
                found: weighting.len(),
            });
        }
        let scaled = Dataset {
            x: data.x.clone(),
            y: scaling.apply(&data.y),
        };
        let posterior = find_mode(&scaled, &cfg, &kernel, &weighting.weights, settings)?;
        Ok(Self {
            kernel,
            cfg,
            weighting,
            posterior,
            x: data.x.clone(),
            scaling,
            report: None,
        })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn config(&self) -> &HuberConfig {
        &self.cfg
    }

    pub fn weighting(&self) -> &RobustWeighting {
        &self.weighting
    }

    pub fn posterior(&self) -> &LaplacePosterior {
        &self.posterior
    }

    pub fn scaling(&self) -> &ResponseScaling {
        &self.scaling
    }

    pub fn report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    /// `σ̂ŝ` in response units.
    pub fn noise_sd_response_units(&self) -> f64 {
        self.cfg.sigma * self.posterior.scale * self.scaling.scale
    }

    pub fn predict(&self, x_star: &DMatrix<f64>, include_noise: bool) -> Result<PredictiveDistribution> {
        predict_laplace(self, x_star, include_noise)
    }
}

/// Latent-Gaussian prediction around the Laplace posterior:
/// `μ* = C*ᵀK⁻¹f̂`, latent variance `k** - C*ᵀ(K + W⁻¹)⁻¹C*`. Test points
/// get unit weight, so the noise term is `(σ̂ŝ)²`.
pub fn predict_laplace(
    model: &HuberGpModel,
    x_star: &DMatrix<f64>,
    include_noise: bool,
) -> Result<PredictiveDistribution> {
    if x_star.ncols() != model.x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: model.x.ncols(),
            found: x_star.ncols(),
        });
    }
    let post = &model.posterior;
    let c = cross_covariance(&model.x, x_star, &model.kernel)?;
    let mean = c.tr_mul(&post.a);
    let sw = post.w.map(f64::sqrt);
    let mut v = c;
    for (i, mut row) in v.row_iter_mut().enumerate() {
        row *= sw[i];
    }
    post.l_b.solve_lower_triangular_mut(&mut v);
    let tau2 = model.kernel.variance();
    let noise = if include_noise {
        (model.cfg.sigma * post.scale).powi(2)
    } else {
        0.0
    };
    let floor = 1e-12 * tau2;
    let variance = DVector::from_fn(x_star.nrows(), |j, _| (tau2 - v.column(j).norm_squared()).max(floor) + noise);
    Ok(PredictiveDistribution {
        mean,
        variance,
        covariance: None,
    }
    .unscale(&model.scaling))
}

/// Default starting point `[ln σ, ln τ, ln s…]` on standardized responses.
pub fn default_log_init(x: &DMatrix<f64>) -> Vec<f64> {
    let mut init = crate::conjugate::default_log_init(x);
    init[0] = 0.0;
    init
}

/// Maximize the approximate evidence over `[ln σ, ln τ, ln s_1, …, ln s_d]`
/// with central-difference gradients, then condition on the best point.
pub fn optimize_hyperparams(
    data: &Dataset,
    cfg: &HuberConfig,
    weighting: &RobustWeighting,
    init: Option<&[f64]>,
    settings: &LaplaceFitSettings,
) -> Result<HuberGpModel> {
    if data.len() < 2 {
        return Err(Error::invalid("data", "at least two observations are required"));
    }
    if weighting.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: weighting.len(),
        });
    }
    cfg.validate()?;
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
    let scaling = if settings.scale_response {
        ResponseScaling::robust(data.y.as_slice())
    } else {
        ResponseScaling::identity()
    };
    let scaled = Dataset {
        x: data.x.clone(),
        y: scaling.apply(&data.y),
    };
    let w = &weighting.weights;
    // Newton restarts from the mode at the last point where a gradient was taken.
    let warm: RefCell<Option<DVector<f64>>> = RefCell::new(None);
    let evidence_from = |theta: &[f64], start: Option<&DVector<f64>>| -> Result<LaplacePosterior> {
        let kernel = KernelParams::from_log(&theta[1..])?;
        let c = cfg.with_sigma(theta[0].exp());
        let k = build_gram(&scaled.x, &kernel, 0.0)?.into_matrix();
        let post = find_mode_from(&k, &scaled.y, d, &c, w, &settings.mode, start)?;
        if !post.log_evidence.is_finite() {
            return Err(Error::NonFinite("approximate evidence".into()));
        }
        Ok(post)
    };
    let evidence = |theta: &[f64]| -> Result<f64> {
        let start = warm.borrow().clone();
        Ok(evidence_from(theta, start.as_ref())?.log_evidence)
    };
    let lo = settings.optimizer.log_lower;
    let hi = settings.optimizer.log_upper;
    let h = settings.fd_step;
    let mut objective = SplitObjective {
        value: evidence,
        value_grad: |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
            let start = warm.borrow().clone();
            let post = evidence_from(theta, start.as_ref())?;
            let value = post.log_evidence;
            // Keep difference points inside the box by shifting the stencil.
            let centre: Vec<f64> = theta.iter().map(|v| v.clamp(lo + h, hi - h)).collect();
            let a = post.a;
            let grad = central_difference(|t: &[f64]| Ok(evidence_from(t, Some(&a))?.log_evidence), &centre, h)?;
            *warm.borrow_mut() = Some(a);
            Ok((value, grad))
        },
    };
    let start: Vec<f64> = init.iter().map(|v| v.clamp(lo, hi)).collect();
    evidence(&start)?;
    let ms = maximize_multistart(&mut objective, &init, &settings.optimizer)?;
    let best = &ms.best;
    let kernel = KernelParams::from_log(&best.x[1..])?;
    let fitted_cfg = cfg.with_sigma(best.x[0].exp());
    let mut model =
        HuberGpModel::with_scaling(data, fitted_cfg, kernel, weighting.clone(), &settings.mode, scaling)?;
    model.report = Some(FitReport {
        converged: best.converged,
        iterations: best.iterations,
        evaluations: ms.runs.iter().map(|r| r.evaluations).sum(),
        grad_norm: best.grad_norm(),
        start_values: ms.runs.iter().map(|r| r.value).collect(),
    });
    Ok(model)
}
