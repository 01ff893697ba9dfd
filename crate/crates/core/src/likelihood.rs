//! Huber and pseudo-Huber losses and the Huber observation density.
//!
//! The density of the observation vector is
//!
//! `p(y | f) = Π_i (1-ε)/(√(2π) w_i σ s) · exp(-ρ(r_i))`, `r_i = (y_i - f_i)/(w_i σ s)`.
//!
//! The normalizing constant is kept as written even though, for independent
//! choices of `ε` and `b`, the density does not integrate to one. Evidence
//! values are therefore defined up to an additive constant.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Threshold, contamination fraction and noise scale of the Huber density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberConfig {
    pub threshold: f64,
    pub contamination: f64,
    pub sigma: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        Self {
            threshold: 1.5,
            contamination: 0.45,
            sigma: 1.0,
        }
    }
}

impl HuberConfig {
    pub fn new(threshold: f64, contamination: f64, sigma: f64) -> Result<Self> {
        let cfg = Self {
            threshold,
            contamination,
            sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::invalid("threshold", format!("must be positive, got {}", self.threshold)));
        }
        if !(0.0..1.0).contains(&self.contamination) {
            return Err(Error::invalid(
                "contamination",
                format!("must lie in [0, 1), got {}", self.contamination),
            ));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

/// Which loss enters the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    Huber,
    PseudoHuber,
}

/// Huber loss: `r²/2` inside `[-b, b]`, `b(|r| - b/2)` outside.
pub fn huber_rho(r: f64, b: f64) -> f64 {
    let a = r.abs();
    if a <= b {
        0.5 * r * r
    } else {
        b * (a - 0.5 * b)
    }
}

/// Value and first two derivatives of a loss at one residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDerivatives {
    pub value: f64,
    pub first: f64,
    pub second: f64,
}

/// Pseudo-Huber loss `b²(√(1 + (r/b)²) - 1)` with its derivatives.
pub fn pseudo_huber(r: f64, b: f64) -> LossDerivatives {
    let z = r / b;
    let q = (1.0 + z * z).sqrt();
    // b²(q - 1) written as b² z²/(q + 1) to avoid cancellation near zero.
    LossDerivatives {
        value: b * b * z * z / (q + 1.0),
        first: r / q,
        second: 1.0 / (q * q * q),
    }
}

fn check_lengths(y: &DVector<f64>, f: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
    for len in [f.len(), w.len()] {
        if len != y.len() {
            return Err(Error::DimensionMismatch {
                expected: y.len(),
                found: len,
            });
        }
    }
    Ok(())
}

fn check_scales(cfg: &HuberConfig, w: &DVector<f64>, s: f64) -> Result<()> {
    cfg.validate()?;
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invalid("scale", format!("must be positive, got {s}")));
    }
    if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
        return Err(Error::invalid("weights", format!("must lie in (0, 1], got {bad}")));
    }
    Ok(())
}

/// Log of the Huber density of `y` given latent values `f`.
pub fn huber_log_likelihood(
    y: &DVector<f64>,
    f: &DVector<f64>,
    cfg: &HuberConfig,
    w: &DVector<f64>,
    s: f64,
    loss: Loss,
) -> Result<f64> {
    check_lengths(y, f, w)?;
    check_scales(cfg, w, s)?;
    let log_c1 = (1.0 - cfg.contamination).ln();
    let log_root_2pi = 0.5 * (2.0 * PI).ln();
    let b = cfg.threshold;
    let mut total = 0.0;
    for i in 0..y.len() {
        let scale = w[i] * cfg.sigma * s;
        let r = (y[i] - f[i]) / scale;
        let rho = match loss {
            Loss::Huber => huber_rho(r, b),
            Loss::PseudoHuber => pseudo_huber(r, b).value,
        };
        total += log_c1 - log_root_2pi - scale.ln() - rho;
    }
    Ok(total)
}

/// Standardized residuals and the inlier/outlier partition they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSplit {
    pub inliers: Vec<usize>,
    pub outliers: Vec<usize>,
    pub standardized: DVector<f64>,
}

impl ResidualSplit {
    /// Partition already standardized residuals; `|r| = b` counts as inlier.
    pub fn from_standardized(standardized: DVector<f64>, b: f64) -> Self {
        let (inliers, outliers) = (0..standardized.len()).partition(|&i| standardized[i].abs() <= b);
        Self {
            inliers,
            outliers,
            standardized,
        }
    }

    pub fn n_inliers(&self) -> usize {
        self.inliers.len()
    }

    pub fn n_outliers(&self) -> usize {
        self.outliers.len()
    }

    pub fn is_outlier(&self, i: usize) -> bool {
        self.outliers.binary_search(&i).is_ok()
    }
}

pub fn split_residuals(
    y: &DVector<f64>,
    f: &DVector<f64>,
    cfg: &HuberConfig,
    w: &DVector<f64>,
    s: f64,
) -> Result<ResidualSplit> {
    check_lengths(y, f, w)?;
    check_scales(cfg, w, s)?;
    let standardized = DVector::from_fn(y.len(), |i, _| (y[i] - f[i]) / (w[i] * cfg.sigma * s));
    Ok(ResidualSplit::from_standardized(standardized, cfg.threshold))
}

/// `C₁ = 1 - ε` and `C₂ = √(π/2) exp(b²/2)` of the truncated-normal / Laplace
/// decomposition.
pub fn mixture_constants(cfg: &HuberConfig) -> (f64, f64) {
    let c1 = 1.0 - cfg.contamination;
    let c2 = (0.5 * PI).sqrt() * (0.5 * cfg.threshold * cfg.threshold).exp();
    (c1, c2)
}

/// `(ln C₁, ln C₂)`, finite even where `C₂` overflows.
pub fn log_mixture_constants(cfg: &HuberConfig) -> (f64, f64) {
    let b = cfg.threshold;
    ((1.0 - cfg.contamination).ln(), 0.5 * (0.5 * PI).ln() + 0.5 * b * b)
}
