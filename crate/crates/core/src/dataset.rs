use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::robust::{mad, median, MAD_CONSISTENCY};

/// Training inputs (one row per observation) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: y.len(),
            });
        }
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::invalid("x", "dataset must have at least one row and one column"));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        Ok(Self { x, y })
    }

    /// One-dimensional inputs.
    pub fn from_1d(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(x.len(), 1, x), DVector::from_column_slice(y))
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
        }
    }
}

/// Affine map `(y - center) / scale` applied to responses before fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseScaling {
    pub center: f64,
    pub scale: f64,
}

impl ResponseScaling {
    pub fn identity() -> Self {
        Self {
            center: 0.0,
            scale: 1.0,
        }
    }

    /// Median center and normalized MAD scale; falls back to the standard
    /// deviation, then to one, when the MAD vanishes.
    pub fn robust(y: &[f64]) -> Self {
        let center = median(y);
        let mut scale = MAD_CONSISTENCY * mad(y);
        if !(scale.is_finite() && scale > 0.0) {
            let n = y.len() as f64;
            scale = (y.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n).sqrt();
        }
        if !(scale.is_finite() && scale > 0.0) {
            scale = 1.0;
        }
        Self { center, scale }
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.center) / self.scale)
    }

    pub fn invert(&self, z: &DVector<f64>) -> DVector<f64> {
        z.map(|v| v * self.scale + self.center)
    }
}

/// Predictive mean and variance at a set of test inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std_dev(&self) -> DVector<f64> {
        self.variance.map(f64::sqrt)
    }

    /// Map back from the fitting scale to response units.
    pub fn unscale(mut self, scaling: &ResponseScaling) -> Self {
        let s2 = scaling.scale * scaling.scale;
        self.mean = scaling.invert(&self.mean);
        self.variance *= s2;
        if let Some(c) = self.covariance.as_mut() {
            *c *= s2;
        }
        self
    }
}
