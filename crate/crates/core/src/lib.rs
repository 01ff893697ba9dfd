//! Gaussian process regression with a Huber likelihood.
//!
//! Inputs are downweighted by projection statistics, latent functions are
//! inferred either by a Laplace approximation under the pseudo-Huber loss or
//! by sampling a scale-mixture representation, and a Gaussian-likelihood GP
//! serves as the baseline.

pub mod bench;
pub mod conjugate;
pub mod dataset;
pub mod error;
pub mod kernel;
pub mod laplace;
pub mod likelihood;
pub mod mcmc;
pub mod optim;
pub mod robust;

pub use conjugate::{fit_ml2, gaussian_log_evidence, ConjugateModel, FitReport};
pub use dataset::{Dataset, PredictiveDistribution, ResponseScaling};
pub use error::{Error, Result};
pub use kernel::{build_gram, cross_covariance, kernel_eval, KernelParams, SpdFactor};
pub use laplace::{find_mode, optimize_hyperparams, predict_laplace, HuberGpModel, LaplaceFitSettings, LaplacePosterior, ModeSettings, ScaleRule};
pub use likelihood::{HuberConfig, Loss};
pub use mcmc::{predictive_average, run_chain, ChainOutput, KernelMode, MixturePrediction, SamplerSettings};
pub use optim::OptimizerSettings;
pub use robust::{projection_statistics, robust_scale, RobustWeighting};
