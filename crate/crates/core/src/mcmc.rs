//! Sampling the Huber-likelihood GP through its scale-mixture form.
//!
//! Inliers share the noise variance `(w_i σ_g)²`; each outlier carries its
//! own variance `σ²_{l,i}` with an exponential prior of rate `β_l`. With the
//! latent function integrated out, `y ~ N(0, K + Σ)`, and the hyperparameters
//! are updated one coordinate at a time by random-walk Metropolis in log
//! space. Step sizes adapt by dual averaging during burn-in and are frozen
//! afterwards. The inlier/outlier split is recomputed once per sweep from the
//! latent conditional mean.
//!
//! Chain `c` draws from stream `c` of a ChaCha8 generator seeded with the
//! master seed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, PredictiveDistribution, ResponseScaling};
use crate::error::{Error, Result};
use crate::kernel::{build_gram, cross_covariance, KernelParams, SpdFactor};
use crate::likelihood::{log_mixture_constants, HuberConfig, ResidualSplit};
use crate::robust::robust_scale;

/// Log-uniform prior support for every positive hyperparameter.
pub const PRIOR_LOW: f64 = 1e-4;
pub const PRIOR_HIGH: f64 = 1e4;

/// Sampler state. Kernel parameters are stored as `[ln τ, ln s_1, …]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureState {
    pub log_sigma_g2: f64,
    pub log_beta: f64,
    pub log_theta: Vec<f64>,
    /// `ln σ²_l` for each index in `split.outliers`, in the same order.
    pub outlier_log_var: Vec<f64>,
    pub split: ResidualSplit,
    pub iteration: usize,
}

impl MixtureState {
    pub fn sigma_g2(&self) -> f64 {
        self.log_sigma_g2.exp()
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn kernel(&self) -> Result<KernelParams> {
        KernelParams::from_log(&self.log_theta)
    }

    /// Diagonal of `Σ`.
    pub fn noise_diag(&self, weights: &DVector<f64>) -> DVector<f64> {
        let sg2 = self.sigma_g2();
        let mut d = DVector::from_fn(weights.len(), |i, _| weights[i] * weights[i] * sg2);
        for (k, &i) in self.split.outliers.iter().enumerate() {
            d[i] = self.outlier_log_var[k].exp();
        }
        d
    }
}

/// Whether kernel parameters are sampled or held fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelMode {
    Sample,
    Fixed(KernelParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSettings {
    pub total: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub target_accept: f64,
    /// Standardize responses by median and normalized MAD first.
    pub scale_response: bool,
    pub kernel: KernelMode,
    /// Recompute the inlier/outlier split after every sweep.
    pub refresh_split: bool,
    /// Starting kernel parameters `[ln τ, ln s…]`; a default is used if absent.
    pub init_theta: Option<Vec<f64>>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            total: 10_000,
            burn_in: 2_000,
            thin: 4,
            seed: 0,
            chains: 2,
            target_accept: 0.44,
            scale_response: true,
            kernel: KernelMode::Sample,
            refresh_split: true,
            init_theta: None,
        }
    }
}

impl SamplerSettings {
    pub fn validate(&self) -> Result<()> {
        if self.total <= self.burn_in {
            return Err(Error::invalid("total", format!("must exceed burn_in ({} <= {})", self.total, self.burn_in)));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin", "must be at least 1"));
        }
        if self.chains == 0 {
            return Err(Error::invalid("chains", "must be at least 1"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target_accept", "must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Samples kept per chain.
    pub fn retained(&self) -> usize {
        (self.total - self.burn_in) / self.thin
    }
}

fn default_theta(x: &DMatrix<f64>) -> Vec<f64> {
    crate::conjugate::default_log_init(x)[1..].to_vec()
}

/// Initial state: the split is taken from standardized residuals at `f = 0`
/// with `σ_g` equal to the robust scale of `y`; each outlier starts at its
/// squared residual and `β_l` at the reciprocal mean outlier variance.
pub fn init_chain(data: &Dataset, cfg: &HuberConfig, weights: &DVector<f64>, seed: u64) -> Result<MixtureState> {
    init_state(data, cfg, weights, default_theta(&data.x), seed)
}

fn init_state(
    data: &Dataset,
    cfg: &HuberConfig,
    weights: &DVector<f64>,
    log_theta: Vec<f64>,
    seed: u64,
) -> Result<MixtureState> {
    // The seed is accepted for interface symmetry; initialization is deterministic.
    let _ = seed;
    cfg.validate()?;
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: weights.len(),
        });
    }
    if log_theta.len() != data.dim() + 1 {
        return Err(Error::DimensionMismatch {
            expected: data.dim() + 1,
            found: log_theta.len(),
        });
    }
    let s = if data.len() > data.dim() {
        robust_scale(data.y.as_slice(), data.dim())?.scale
    } else {
        1.0
    };
    let bounds = PRIOR_LOW..=PRIOR_HIGH;
    let sg2 = (s * s).clamp(*bounds.start(), *bounds.end());
    let sg = sg2.sqrt();
    let standardized = DVector::from_fn(data.len(), |i, _| data.y[i] / (weights[i] * sg));
    let split = ResidualSplit::from_standardized(standardized, cfg.threshold);
    let outlier_var: Vec<f64> = split
        .outliers
        .iter()
        .map(|&i| (data.y[i] * data.y[i]).max(sg2 * 1e-6))
        .collect();
    let beta = if outlier_var.is_empty() {
        1.0
    } else {
        (outlier_var.len() as f64 / outlier_var.iter().sum::<f64>()).clamp(PRIOR_LOW, PRIOR_HIGH)
    };
    Ok(MixtureState {
        log_sigma_g2: sg2.ln(),
        log_beta: beta.ln(),
        log_theta,
        outlier_log_var: outlier_var.iter().map(|v| v.ln()).collect(),
        split,
        iteration: 0,
    })
}

fn in_prior(v: f64) -> bool {
    (PRIOR_LOW.ln()..=PRIOR_HIGH.ln()).contains(&v)
}

/// Log of the hyperparameter priors in log coordinates, with the split
/// constants `n_g ln C₁ + n_l ln C₂`.
fn log_prior(state: &MixtureState, cfg: &HuberConfig, kernel_sampled: bool) -> f64 {
    let mut lp = 0.0;
    if !in_prior(state.log_sigma_g2) || !in_prior(state.log_beta) {
        return f64::NEG_INFINITY;
    }
    if kernel_sampled && !state.log_theta.iter().all(|v| in_prior(*v)) {
        return f64::NEG_INFINITY;
    }
    let beta = state.beta();
    for &lv in &state.outlier_log_var {
        lp += beta.ln() - beta * lv.exp() + lv;
    }
    let (lc1, lc2) = log_mixture_constants(cfg);
    lp += state.split.n_inliers() as f64 * lc1 + state.split.n_outliers() as f64 * lc2;
    lp
}

fn gaussian_log_density(k: &DMatrix<f64>, noise: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    let mut r = k.clone();
    for i in 0..r.nrows() {
        r[(i, i)] += noise[i];
    }
    let scale = r.diagonal().mean();
    let f = SpdFactor::with_scale(r, scale)?;
    let alpha = f.solve_vec(y);
    Ok(-0.5 * y.dot(&alpha) - 0.5 * f.log_det() - 0.5 * y.len() as f64 * (2.0 * PI).ln())
}

/// Collapsed log target `ln N(y | 0, K + Σ) + ln priors + split constants`.
pub fn log_target(state: &MixtureState, data: &Dataset, weights: &DVector<f64>, cfg: &HuberConfig) -> Result<f64> {
    let lp = log_prior(state, cfg, true);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    let k = build_gram(&data.x, &state.kernel()?, 0.0)?.into_matrix();
    Ok(gaussian_log_density(&k, &state.noise_diag(weights), &data.y)? + lp)
}

/// Moments of `f | y, Σ, θ`.
#[derive(Debug, Clone)]
pub struct LatentConditional {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// `N(K(K+Σ)⁻¹y, K − K(K+Σ)⁻¹K)`.
pub fn latent_conditional(state: &MixtureState, data: &Dataset, weights: &DVector<f64>) -> Result<LatentConditional> {
    let k = build_gram(&data.x, &state.kernel()?, 0.0)?.into_matrix();
    latent_from_gram(&k, &state.noise_diag(weights), &data.y, true)
}

fn latent_from_gram(
    k: &DMatrix<f64>,
    noise: &DVector<f64>,
    y: &DVector<f64>,
    with_cov: bool,
) -> Result<LatentConditional> {
    let mut r = k.clone();
    for i in 0..r.nrows() {
        r[(i, i)] += noise[i];
    }
    let scale = r.diagonal().mean();
    let f = SpdFactor::with_scale(r, scale)?;
    let mean = k * f.solve_vec(y);
    let covariance = if with_cov {
        let v = f.solve_lower(k);
        k - v.tr_mul(&v)
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(LatentConditional { mean, covariance })
}

/// Dual-averaging state for one step size.
#[derive(Debug, Clone)]
struct DualAverage {
    log_step: f64,
    log_step_bar: f64,
    h_bar: f64,
    mu: f64,
    count: f64,
}

impl DualAverage {
    fn new(step: f64) -> Self {
        Self {
            log_step: step.ln(),
            log_step_bar: step.ln(),
            h_bar: 0.0,
            mu: (10.0 * step).ln(),
            count: 0.0,
        }
    }

    fn step(&self) -> f64 {
        self.log_step.exp()
    }

    fn update(&mut self, accept_prob: f64, target: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1.0;
        let m = self.count;
        let eta = 1.0 / (m + T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (target - accept_prob);
        self.log_step = (self.mu - m.sqrt() / GAMMA * self.h_bar).clamp(-12.0, 3.0);
        let w = m.powf(-KAPPA);
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar;
    }

    fn freeze(&mut self) {
        self.log_step = self.log_step_bar;
    }
}

/// Random-walk step sizes: `σ_g²`, `β_l`, each kernel coordinate, and one
/// shared step for all outlier variances.
#[derive(Debug, Clone)]
pub struct StepSizes {
    sigma: DualAverage,
    beta: DualAverage,
    theta: Vec<DualAverage>,
    outlier: DualAverage,
}

impl StepSizes {
    pub fn new(theta_len: usize) -> Self {
        Self {
            sigma: DualAverage::new(0.5),
            beta: DualAverage::new(1.0),
            theta: (0..theta_len).map(|_| DualAverage::new(0.5)).collect(),
            outlier: DualAverage::new(1.0),
        }
    }

    fn freeze(&mut self) {
        self.sigma.freeze();
        self.beta.freeze();
        self.theta.iter_mut().for_each(DualAverage::freeze);
        self.outlier.freeze();
    }

    /// Current steps `[σ_g², β_l, θ…, outlier]`.
    pub fn current(&self) -> Vec<f64> {
        let mut v = vec![self.sigma.step(), self.beta.step()];
        v.extend(self.theta.iter().map(DualAverage::step));
        v.push(self.outlier.step());
        v
    }
}

/// Accepted and proposed move counts per coordinate group.
#[derive(Debug, Clone, Default)]
pub struct SweepStats {
    pub accepted: Vec<u64>,
    pub proposed: Vec<u64>,
}

impl SweepStats {
    fn new(groups: usize) -> Self {
        Self {
            accepted: vec![0; groups],
            proposed: vec![0; groups],
        }
    }

    fn record(&mut self, group: usize, accepted: bool) {
        self.proposed[group] += 1;
        if accepted {
            self.accepted[group] += 1;
        }
    }

    fn merge(&mut self, other: &SweepStats) {
        for g in 0..self.accepted.len() {
            self.accepted[g] += other.accepted[g];
            self.proposed[g] += other.proposed[g];
        }
    }
}

struct Sampler<'a> {
    data: &'a Dataset,
    weights: &'a DVector<f64>,
    cfg: HuberConfig,
    kernel_sampled: bool,
    k: DMatrix<f64>,
    loglik: f64,
    logprior: f64,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a Dataset, weights: &'a DVector<f64>, cfg: HuberConfig, state: &MixtureState, kernel_sampled: bool) -> Result<Self> {
        let k = build_gram(&data.x, &state.kernel()?, 0.0)?.into_matrix();
        let loglik = gaussian_log_density(&k, &state.noise_diag(weights), &data.y)?;
        let logprior = log_prior(state, &cfg, kernel_sampled);
        if !(loglik.is_finite() && logprior.is_finite()) {
            return Err(Error::NonFinite("log target at the initial state".into()));
        }
        Ok(Self {
            data,
            weights,
            cfg,
            kernel_sampled,
            k,
            loglik,
            logprior,
        })
    }

    /// One Metropolis step on a proposal built by `propose`.
    fn metropolis<R: Rng>(
        &mut self,
        state: &mut MixtureState,
        rng: &mut R,
        kernel_changed: bool,
        propose: impl FnOnce(&mut MixtureState),
    ) -> Result<(bool, f64)> {
        let mut trial = state.clone();
        propose(&mut trial);
        let lp = log_prior(&trial, &self.cfg, self.kernel_sampled);
        if lp == f64::NEG_INFINITY {
            return Ok((false, 0.0));
        }
        let k_trial = if kernel_changed {
            Some(build_gram(&self.data.x, &trial.kernel()?, 0.0)?.into_matrix())
        } else {
            None
        };
        let k_ref = k_trial.as_ref().unwrap_or(&self.k);
        let ll = match gaussian_log_density(k_ref, &trial.noise_diag(self.weights), &self.data.y) {
            Ok(v) if v.is_finite() => v,
            _ => return Ok((false, 0.0)),
        };
        let log_ratio = ll + lp - self.loglik - self.logprior;
        let prob = log_ratio.min(0.0).exp();
        let accept = rng.random::<f64>().ln() < log_ratio;
        if accept {
            *state = trial;
            self.loglik = ll;
            self.logprior = lp;
            if let Some(k) = k_trial {
                self.k = k;
            }
        }
        Ok((accept, prob))
    }

    fn sweep<R: Rng>(
        &mut self,
        state: &mut MixtureState,
        steps: &mut StepSizes,
        adapt: bool,
        target: f64,
        rng: &mut R,
    ) -> Result<SweepStats> {
        let n_theta = state.log_theta.len();
        let mut stats = SweepStats::new(3 + n_theta);

        let z: f64 = standard_normal(rng);
        let eps = steps.sigma.step();
        let (a, p) = self.metropolis(state, rng, false, |s| s.log_sigma_g2 += eps * z)?;
        stats.record(0, a);
        if adapt {
            steps.sigma.update(p, target);
        }

        let z: f64 = standard_normal(rng);
        let eps = steps.beta.step();
        let (a, p) = self.metropolis(state, rng, false, |s| s.log_beta += eps * z)?;
        stats.record(1, a);
        if adapt {
            steps.beta.update(p, target);
        }

        if self.kernel_sampled {
            for c in 0..n_theta {
                let z: f64 = standard_normal(rng);
                let eps = steps.theta[c].step();
                let (a, p) = self.metropolis(state, rng, true, |s| s.log_theta[c] += eps * z)?;
                stats.record(2 + c, a);
                if adapt {
                    steps.theta[c].update(p, target);
                }
            }
        }

        for k in 0..state.outlier_log_var.len() {
            let z: f64 = standard_normal(rng);
            let eps = steps.outlier.step();
            let (a, p) = self.metropolis(state, rng, false, |s| s.outlier_log_var[k] += eps * z)?;
            stats.record(2 + n_theta, a);
            if adapt {
                steps.outlier.update(p, target);
            }
        }
        state.iteration += 1;
        Ok(stats)
    }

    /// Recompute the split from the latent conditional mean, standardizing
    /// residuals by `w_i s` with `s` their robust scale. Points that become
    /// outliers start at their squared residual.
    fn refresh_split(&mut self, state: &mut MixtureState) -> Result<DVector<f64>> {
        let lc = latent_from_gram(&self.k, &state.noise_diag(self.weights), &self.data.y, false)?;
        let resid = &self.data.y - &lc.mean;
        let sg = if self.data.len() > self.data.dim() {
            robust_scale(resid.as_slice(), self.data.dim())?.scale
        } else {
            state.sigma_g2().sqrt()
        };
        let standardized = DVector::from_fn(resid.len(), |i, _| resid[i] / (self.weights[i] * sg));
        let split = ResidualSplit::from_standardized(standardized, self.cfg.threshold);
        if split.outliers != state.split.outliers {
            let floor = state.sigma_g2() * 1e-6;
            let old: Vec<(usize, f64)> = state.split.outliers.iter().copied().zip(state.outlier_log_var.iter().copied()).collect();
            state.outlier_log_var = split
                .outliers
                .iter()
                .map(|&i| match old.iter().find(|(j, _)| *j == i) {
                    Some((_, lv)) => *lv,
                    None => (resid[i] * resid[i]).max(floor).ln(),
                })
                .collect();
            state.split = split;
            self.loglik = gaussian_log_density(&self.k, &state.noise_diag(self.weights), &self.data.y)?;
            self.logprior = log_prior(state, &self.cfg, self.kernel_sampled);
            if !self.logprior.is_finite() {
                // Re-entering outlier variances can only leave the support
                // through the σ_g² or β bounds, which are unchanged here.
                return Err(Error::NonFinite("log prior after split refresh".into()));
            }
        } else {
            state.split = split;
        }
        Ok(lc.mean)
    }
}

fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// One sweep of hyperparameter updates from `state`, with `steps` adapted
/// when `adapt` is set. Kernel parameters are left unchanged when `kernel`
/// is [`KernelMode::Fixed`].
#[allow(clippy::too_many_arguments)]
pub fn sample_hyperparams<R: Rng>(
    state: &MixtureState,
    data: &Dataset,
    weights: &DVector<f64>,
    cfg: &HuberConfig,
    kernel: &KernelMode,
    steps: &mut StepSizes,
    adapt: bool,
    rng: &mut R,
) -> Result<(MixtureState, SweepStats)> {
    let mut next = state.clone();
    if let KernelMode::Fixed(p) = kernel {
        next.log_theta = p.to_log();
    }
    let mut sampler = Sampler::new(data, weights, *cfg, &next, matches!(kernel, KernelMode::Sample))?;
    let stats = sampler.sweep(&mut next, steps, adapt, 0.44, rng)?;
    Ok((next, stats))
}

/// One retained draw.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSample {
    pub chain: usize,
    pub iteration: usize,
    pub log_sigma_g2: f64,
    pub log_beta: f64,
    pub log_theta: Vec<f64>,
    /// Diagonal of `Σ` on the fitting scale.
    pub noise_var: DVector<f64>,
    pub n_outliers: usize,
    /// Latent conditional mean at the training inputs, on the fitting scale.
    pub latent_mean: DVector<f64>,
    pub log_target: f64,
}

/// Retained draws of all chains with diagnostics.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub samples: Vec<ChainSample>,
    pub chains: usize,
    /// `log_sigma_g2`, `log_beta`, `log_tau`, `log_s1`, …
    pub coordinate_names: Vec<String>,
    pub ess: Vec<f64>,
    pub rhat: Vec<f64>,
    /// Post-burn-in acceptance rate per coordinate group
    /// (`sigma_g2`, `beta`, kernel coordinates, `outlier_var`).
    pub acceptance: Vec<(String, f64)>,
    pub step_sizes: Vec<Vec<f64>>,
    x: DMatrix<f64>,
    scaling: ResponseScaling,
}

impl ChainOutput {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scaling(&self) -> &ResponseScaling {
        &self.scaling
    }

    /// Draws of one diagnostic coordinate, split by chain.
    pub fn coordinate(&self, index: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.chains];
        for s in &self.samples {
            let v = match index {
                0 => s.log_sigma_g2,
                1 => s.log_beta,
                k => s.log_theta[k - 2],
            };
            out[s.chain].push(v);
        }
        out
    }

    /// Overall post-burn-in acceptance rate.
    pub fn mean_acceptance(&self) -> f64 {
        let v: Vec<f64> = self.acceptance.iter().map(|(_, a)| *a).filter(|a| a.is_finite()).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

fn coordinate_names(d: usize) -> Vec<String> {
    let mut names = vec!["log_sigma_g2".to_string(), "log_beta".to_string(), "log_tau".to_string()];
    names.extend((1..=d).map(|k| format!("log_s{k}")));
    names
}

/// One chain from `init`, using stream `chain` of `settings.seed`.
fn run_single(
    data: &Dataset,
    cfg: &HuberConfig,
    weights: &DVector<f64>,
    settings: &SamplerSettings,
    init: &MixtureState,
    chain: usize,
) -> Result<(Vec<ChainSample>, SweepStats, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(chain as u64);
    let sampled = matches!(settings.kernel, KernelMode::Sample);
    let mut state = init.clone();
    let mut sampler = Sampler::new(data, weights, *cfg, &state, sampled)?;
    let mut steps = StepSizes::new(state.log_theta.len());
    let mut stats = SweepStats::new(3 + state.log_theta.len());
    let mut samples = Vec::with_capacity(settings.retained());
    for t in 1..=settings.total {
        let adapt = t <= settings.burn_in;
        let sweep = sampler.sweep(&mut state, &mut steps, adapt, settings.target_accept, &mut rng)?;
        if t == settings.burn_in {
            steps.freeze();
        }
        let keep = !adapt && (t - settings.burn_in) % settings.thin == 0;
        let mean = if settings.refresh_split || keep {
            Some(sampler.refresh_split_or_mean(&mut state, settings.refresh_split)?)
        } else {
            None
        };
        if !adapt {
            stats.merge(&sweep);
        }
        if keep {
            samples.push(ChainSample {
                chain,
                iteration: t,
                log_sigma_g2: state.log_sigma_g2,
                log_beta: state.log_beta,
                log_theta: state.log_theta.clone(),
                noise_var: state.noise_diag(weights),
                n_outliers: state.split.n_outliers(),
                latent_mean: mean.expect("mean computed for retained draws"),
                log_target: sampler.loglik + sampler.logprior,
            });
        }
    }
    Ok((samples, stats, steps.current()))
}

impl Sampler<'_> {
    fn refresh_split_or_mean(&mut self, state: &mut MixtureState, refresh: bool) -> Result<DVector<f64>> {
        if refresh {
            self.refresh_split(state)
        } else {
            Ok(latent_from_gram(&self.k, &state.noise_diag(self.weights), &self.data.y, false)?.mean)
        }
    }
}

/// Run `settings.chains` chains (in parallel threads) and pool their draws.
pub fn run_chain(
    data: &Dataset,
    cfg: &HuberConfig,
    weights: &DVector<f64>,
    settings: &SamplerSettings,
) -> Result<ChainOutput> {
    settings.validate()?;
    cfg.validate()?;
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: weights.len(),
        });
    }
    let scaling = if settings.scale_response {
        ResponseScaling::robust(data.y.as_slice())
    } else {
        ResponseScaling::identity()
    };
    let scaled = Dataset {
        x: data.x.clone(),
        y: scaling.apply(&data.y),
    };
    let theta = match (&settings.kernel, &settings.init_theta) {
        (KernelMode::Fixed(p), _) => p.to_log(),
        (KernelMode::Sample, Some(t)) => t.clone(),
        (KernelMode::Sample, None) => default_theta(&data.x),
    };
    let init = init_state(&scaled, cfg, weights, theta, settings.seed)?;

    let results: Vec<Result<(Vec<ChainSample>, SweepStats, Vec<f64>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..settings.chains)
            .map(|c| {
                let (scaled, init) = (&scaled, &init);
                scope.spawn(move || run_single(scaled, cfg, weights, settings, init, c))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::NonFinite("sampler thread panicked".into()))))
            .collect()
    });

    let d = data.dim();
    let mut samples = Vec::new();
    let mut stats = SweepStats::new(3 + d + 1);
    let mut step_sizes = Vec::new();
    for r in results {
        let (s, st, steps) = r?;
        samples.extend(s);
        stats.merge(&st);
        step_sizes.push(steps);
    }
    let mut groups = vec!["sigma_g2".to_string(), "beta".to_string(), "tau".to_string()];
    groups.extend((1..=d).map(|k| format!("s{k}")));
    groups.push("outlier_var".to_string());
    let acceptance = groups
        .into_iter()
        .enumerate()
        .map(|(g, name)| {
            let rate = if stats.proposed[g] == 0 {
                f64::NAN
            } else {
                stats.accepted[g] as f64 / stats.proposed[g] as f64
            };
            (name, rate)
        })
        .collect();

    let mut out = ChainOutput {
        samples,
        chains: settings.chains,
        coordinate_names: coordinate_names(d),
        ess: Vec::new(),
        rhat: Vec::new(),
        acceptance,
        step_sizes,
        x: data.x.clone(),
        scaling,
    };
    for c in 0..out.coordinate_names.len() {
        let draws = out.coordinate(c);
        out.ess.push(effective_sample_size(&draws));
        out.rhat.push(split_rhat(&draws));
    }
    Ok(out)
}

/// Effective sample size summed over chains, each from the autocorrelation
/// sum truncated by the initial monotone positive sequence rule.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    chains.iter().map(|c| chain_ess(c)).sum()
}

fn chain_ess(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 || !var.is_finite() {
        return n as f64;
    }
    let rho = |lag: usize| -> f64 {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * var)
    };
    let mut sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = rho(2 * k) + rho(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        k += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

/// Potential scale reduction over the halves of every chain.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut parts: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        parts.push(&c[..h]);
        parts.push(&c[c.len() - h..]);
    }
    let m = parts.len() as f64;
    let n = parts[0].len() as f64;
    let means: Vec<f64> = parts.iter().map(|p| p.iter().sum::<f64>() / p.len() as f64).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = parts
        .iter()
        .zip(&means)
        .map(|(p, mu)| p.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (p.len() as f64 - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Mixture moments: mean of means, and mean variance plus the variance of
/// the means.
pub fn mixture_moments(means: &[DVector<f64>], variances: &[DVector<f64>]) -> Result<(DVector<f64>, DVector<f64>)> {
    if means.is_empty() || means.len() != variances.len() {
        return Err(Error::invalid("samples", "need matching, nonempty mean and variance lists"));
    }
    let t = means.len() as f64;
    let n = means[0].len();
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    for (m, v) in means.iter().zip(variances) {
        mean += m;
        var += v;
    }
    mean /= t;
    var /= t;
    for m in means {
        let d = m - &mean;
        var += d.component_mul(&d) / t;
    }
    Ok((mean, var))
}

/// Averaged predictive with Monte Carlo standard errors of the mean.
#[derive(Debug, Clone)]
pub struct MixturePrediction {
    pub distribution: PredictiveDistribution,
    /// Per-sample predictive means, one vector per retained draw, in
    /// response units.
    pub sample_means: Vec<DVector<f64>>,
    pub mcse: DVector<f64>,
}

/// Exact Gaussian predictive for one draw, on the fitting scale.
fn sample_predictive(
    chain: &ChainOutput,
    sample: &ChainSample,
    y_scaled: &DVector<f64>,
    x_star: &DMatrix<f64>,
    include_noise: bool,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let kernel = KernelParams::from_log(&sample.log_theta)?;
    let mut r = build_gram(&chain.x, &kernel, 0.0)?.into_matrix();
    for i in 0..r.nrows() {
        r[(i, i)] += sample.noise_var[i];
    }
    let scale = r.diagonal().mean();
    let f = SpdFactor::with_scale(r, scale)?;
    let c = cross_covariance(&chain.x, x_star, &kernel)?;
    let mean = c.tr_mul(&f.solve_vec(y_scaled));
    let v = f.solve_lower(&c);
    let tau2 = kernel.variance();
    let noise = if include_noise { sample.log_sigma_g2.exp() } else { 0.0 };
    let var = DVector::from_fn(x_star.nrows(), |j, _| (tau2 - v.column(j).norm_squared()).max(1e-12 * tau2) + noise);
    Ok((mean, var))
}

/// Average the per-draw Gaussian predictives. `y` are the training responses
/// the chain was run on.
pub fn predictive_average(
    chain: &ChainOutput,
    y: &DVector<f64>,
    x_star: &DMatrix<f64>,
    include_noise: bool,
) -> Result<MixturePrediction> {
    if chain.is_empty() {
        return Err(Error::invalid("chain", "no retained samples"));
    }
    if x_star.ncols() != chain.x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: chain.x.ncols(),
            found: x_star.ncols(),
        });
    }
    if y.len() != chain.x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: chain.x.nrows(),
            found: y.len(),
        });
    }
    let y_scaled = chain.scaling.apply(y);
    let s = chain.scaling.scale;
    let mut means = Vec::with_capacity(chain.len());
    let mut vars = Vec::with_capacity(chain.len());
    for sample in &chain.samples {
        let (m, v) = sample_predictive(chain, sample, &y_scaled, x_star, include_noise)?;
        means.push(chain.scaling.invert(&m));
        vars.push(v * (s * s));
    }
    let (mean, variance) = mixture_moments(&means, &vars)?;
    let mcse = DVector::from_fn(x_star.nrows(), |j, _| {
        let mut per_chain = vec![Vec::new(); chain.chains];
        for (sample, m) in chain.samples.iter().zip(&means) {
            per_chain[sample.chain].push(m[j]);
        }
        let all: Vec<f64> = means.iter().map(|m| m[j]).collect();
        let mu = all.iter().sum::<f64>() / all.len() as f64;
        let sd = (all.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / all.len() as f64).sqrt();
        sd / effective_sample_size(&per_chain).max(1.0).sqrt()
    });
    Ok(MixturePrediction {
        distribution: PredictiveDistribution {
            mean,
            variance,
            covariance: None,
        },
        sample_means: means,
        mcse,
    })
}
