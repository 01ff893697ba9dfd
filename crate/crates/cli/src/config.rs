//! Command-line arguments, INI config files and the resolved experiment
//! configuration.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use robustgp::bench::NoiseSpec;
use robustgp::{HuberConfig, LaplaceFitSettings, OptimizerSettings, SamplerSettings};
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "robustgp", version, about = "Robust Gaussian process regression benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic training set with its outlier mask and the noise-free test set.
    #[command(args_override_self = true)]
    Generate(DataArgs),
    /// Projection statistics and weights for every training row.
    #[command(args_override_self = true)]
    Diagnose(DataArgs),
    /// Fit one model and predict at the test inputs.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Run a dataset × noise × model grid and tabulate accuracy.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Diagnose(_) => "diagnose",
            Command::Fit(_) => "fit",
            Command::Bench(_) => "bench",
        }
    }

    pub fn data(&self) -> &DataArgs {
        match self {
            Command::Generate(d) | Command::Diagnose(d) => d,
            Command::Fit(f) => &f.data,
            Command::Bench(b) => &b.data,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Neal,
    Friedman,
    Csv,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Neal => "neal",
            DatasetKind::Friedman => "friedman",
            DatasetKind::Csv => "csv",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contamination {
    /// Vertical outliers, leverage points and (Friedman) random outliers.
    Protocol,
    None,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Gp,
    HuberLa,
    HuberMcmc,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gp => "gp",
            ModelKind::HuberLa => "huber-la",
            ModelKind::HuberMcmc => "huber-mcmc",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// INI file with defaults; flags on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DatasetKind::Neal)]
    pub dataset: DatasetKind,
    /// Input file for `--dataset csv`.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Response column of the CSV file.
    #[arg(long, default_value = "y")]
    pub target: String,
    /// Standardize CSV inputs by column median and normalized MAD.
    #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = false, default_missing_value = "true")]
    pub standardize: bool,
    /// Noise law, e.g. `student-t:10`, `normal:0.01,0.08`, `laplace:0,0.1`, `cauchy`.
    #[arg(long)]
    pub noise: Option<NoiseSpec>,
    #[arg(long, value_enum, default_value_t = Contamination::Protocol)]
    pub contamination: Contamination,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Friedman training replicates.
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Friedman replicate used by `diagnose` and `fit` (zero-based).
    #[arg(long, default_value_t = 0)]
    pub replicate: usize,
    /// Friedman test-set size.
    #[arg(long, default_value_t = robustgp::bench::FRIEDMAN_TEST_N)]
    pub test_size: usize,
    #[arg(long, short, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (capped by ROBUSTGP_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Huber threshold; defaults to 0.5 for Laplace noise and 1.5 otherwise.
    #[arg(long)]
    pub b: Option<f64>,
    /// Contamination fraction of the Huber density.
    #[arg(long, default_value_t = HuberConfig::default().contamination)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub grad_tol: f64,
    /// Sampler sweeps per chain, burn-in included.
    #[arg(long, default_value_t = 10_000)]
    pub total: usize,
    /// Defaults to the smaller of 2000 and a fifth of `--total`.
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub thin: usize,
    #[arg(long, default_value_t = 2)]
    pub chains: usize,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long = "model", value_enum, default_value_t = ModelKind::HuberLa)]
    pub kind: ModelKind,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ModelKind::Gp, ModelKind::HuberLa])]
    pub models: Vec<ModelKind>,
    /// Noise laws separated by `;`. Defaults to the four Neal families, or the
    /// Friedman default.
    #[arg(long, value_delimiter = ';')]
    pub noises: Vec<NoiseSpec>,
    /// Number of consecutive seeds starting at `--seed` (Neal).
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Folds for `--dataset csv`.
    #[arg(long, default_value_t = 10)]
    pub kfold: usize,
}

/// The four Neal noise cases.
pub fn neal_noises() -> Vec<NoiseSpec> {
    vec![
        NoiseSpec::Normal { mean: 0.01, sd: 0.08 },
        NoiseSpec::StudentT { dof: 10.0 },
        NoiseSpec::Laplace {
            location: 0.0,
            scale: 0.1,
        },
        NoiseSpec::Cauchy {
            location: 0.0,
            scale: 1.0,
        },
    ]
}

pub fn default_noise(kind: DatasetKind) -> NoiseSpec {
    match kind {
        DatasetKind::Neal => NoiseSpec::StudentT { dof: 10.0 },
        DatasetKind::Friedman => NoiseSpec::Normal { mean: 0.01, sd: 0.08 },
        DatasetKind::Csv => NoiseSpec::None,
    }
}

impl DataArgs {
    pub fn noise(&self) -> NoiseSpec {
        self.noise.unwrap_or_else(|| default_noise(self.dataset))
    }

    pub fn validate(&self) -> CliResult<()> {
        match self.dataset {
            DatasetKind::Csv => {
                if self.csv.is_none() {
                    return Err(CliError::config("csv", "`--dataset csv` needs `--csv <path>`"));
                }
            }
            DatasetKind::Friedman => {
                if self.replicates == 0 {
                    return Err(CliError::config("replicates", "must be at least 1"));
                }
                if self.replicate >= self.replicates {
                    return Err(CliError::config(
                        "replicate",
                        format!("{} is out of range for {} replicates", self.replicate, self.replicates),
                    ));
                }
                if self.test_size == 0 {
                    return Err(CliError::config("test-size", "must be at least 1"));
                }
            }
            DatasetKind::Neal => {}
        }
        if self.threads == Some(0) {
            return Err(CliError::config("threads", "must be at least 1"));
        }
        Ok(())
    }

    pub fn echo(&self) -> Value {
        json!({
            "dataset": self.dataset.as_str(),
            "csv": self.csv.as_ref().map(|p| p.display().to_string()),
            "target": self.target,
            "standardize": self.standardize,
            "noise": self.noise().to_string(),
            "contamination": match self.contamination {
                Contamination::Protocol => "protocol",
                Contamination::None => "none",
            },
            "seed": self.seed,
            "replicates": self.replicates,
            "replicate": self.replicate,
            "test_size": self.test_size,
            "out": self.out.display().to_string(),
        })
    }
}

impl ModelArgs {
    pub fn threshold_for(&self, noise: &NoiseSpec) -> f64 {
        self.b.unwrap_or(match noise {
            NoiseSpec::Laplace { .. } => 0.5,
            _ => 1.5,
        })
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or_else(|| (self.total / 5).min(2000))
    }

    pub fn huber(&self, noise: &NoiseSpec) -> CliResult<HuberConfig> {
        HuberConfig::new(self.threshold_for(noise), self.epsilon, 1.0).map_err(|e| match e {
            robustgp::Error::InvalidParameter { name: "threshold", reason } => CliError::config("b", reason),
            robustgp::Error::InvalidParameter { name: "contamination", reason } => CliError::config("epsilon", reason),
            other => other.into(),
        })
    }

    pub fn optimizer(&self, seed: u64) -> OptimizerSettings {
        OptimizerSettings {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            restarts: self.restarts,
            seed,
            ..Default::default()
        }
    }

    pub fn laplace(&self, seed: u64) -> LaplaceFitSettings {
        LaplaceFitSettings {
            optimizer: self.optimizer(seed),
            ..Default::default()
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerSettings {
        SamplerSettings {
            total: self.total,
            burn_in: self.burn_in(),
            thin: self.thin,
            chains: self.chains,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self, models: &[ModelKind]) -> CliResult<()> {
        if let Some(b) = self.b {
            if !(b.is_finite() && b > 0.0) {
                return Err(CliError::config("b", format!("must be positive, got {b}")));
            }
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(CliError::config("epsilon", format!("must lie in [0, 1), got {}", self.epsilon)));
        }
        if self.max_iter == 0 {
            return Err(CliError::config("max-iter", "must be at least 1"));
        }
        if !(self.grad_tol.is_finite() && self.grad_tol > 0.0) {
            return Err(CliError::config("grad-tol", "must be positive"));
        }
        if models.contains(&ModelKind::HuberMcmc) {
            if self.total <= self.burn_in() {
                return Err(CliError::config(
                    "burn-in",
                    format!("must be below --total ({} >= {})", self.burn_in(), self.total),
                ));
            }
            if self.thin == 0 {
                return Err(CliError::config("thin", "must be at least 1"));
            }
            if self.chains == 0 {
                return Err(CliError::config("chains", "must be at least 1"));
            }
            if (self.total - self.burn_in()) / self.thin == 0 {
                return Err(CliError::config("thin", "no draws would be retained"));
            }
        }
        Ok(())
    }

    pub fn echo(&self) -> Value {
        json!({
            "b": self.b,
            "epsilon": self.epsilon,
            "restarts": self.restarts,
            "max_iter": self.max_iter,
            "grad_tol": self.grad_tol,
            "total": self.total,
            "burn_in": self.burn_in(),
            "thin": self.thin,
            "chains": self.chains,
        })
    }
}

impl BenchArgs {
    pub fn noises(&self) -> Vec<NoiseSpec> {
        if !self.noises.is_empty() {
            return self.noises.clone();
        }
        match self.data.dataset {
            DatasetKind::Neal => neal_noises(),
            other => vec![default_noise(other)],
        }
    }
}

/// Validate everything a command needs before any compute.
pub fn validate(command: &Command) -> CliResult<()> {
    command.data().validate()?;
    match command {
        Command::Generate(d) if d.dataset == DatasetKind::Csv => {
            Err(CliError::config("dataset", "`generate` supports the synthetic datasets only"))
        }
        Command::Fit(f) => f.model.validate(&[f.kind]),
        Command::Bench(b) => {
            if b.models.is_empty() {
                return Err(CliError::config("models", "at least one model is required"));
            }
            if b.seeds == 0 {
                return Err(CliError::config("seeds", "must be at least 1"));
            }
            if b.data.dataset == DatasetKind::Csv && b.kfold < 2 {
                return Err(CliError::config("kfold", "must be at least 2"));
            }
            b.model.validate(&b.models)
        }
        _ => Ok(()),
    }
}

/// Flags equivalent to the entries of an INI file. Section names only group
/// keys; `max_iter` and `max-iter` are the same key.
pub fn ini_flags(path: &Path) -> CliResult<Vec<OsString>> {
    let ini = ini::Ini::load_from_file(path).map_err(|e| match e {
        ini::Error::Io(e) => CliError::io(path, e),
        ini::Error::Parse(e) => CliError::config("config", format!("{}: {e}", path.display())),
    })?;
    let mut flags = Vec::new();
    for (_, props) in ini.iter() {
        for (key, value) in props.iter() {
            let key = key.trim().replace('_', "-");
            if key == "config" {
                return Err(CliError::config("config", "config files cannot include other config files"));
            }
            flags.push(OsString::from(format!("--{key}={}", value.trim())));
        }
    }
    Ok(flags)
}

/// Parse arguments, splicing config-file entries in front of the
/// command-line flags so that the latter take precedence.
pub fn parse(argv: Vec<OsString>) -> Result<Cli, clap::Error> {
    let cli = Cli::try_parse_from(&argv)?;
    let Some(path) = cli.command.data().config.clone() else {
        return Ok(cli);
    };
    let flags = match ini_flags(&path) {
        Ok(f) => f,
        Err(e) => {
            let kind = if matches!(e, CliError::Io { .. }) {
                clap::error::ErrorKind::Io
            } else {
                clap::error::ErrorKind::ValueValidation
            };
            return Err(clap::Error::raw(kind, format!("{e}\n")));
        }
    };
    let sub = argv
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
        .unwrap_or(1);
    let mut merged: Vec<OsString> = argv[..=sub].to_vec();
    merged.extend(flags);
    merged.extend(argv[sub + 1..].iter().cloned());
    Cli::try_parse_from(merged)
}
