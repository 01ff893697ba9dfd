//! CSV and JSON writers. Floats are written in shortest round-trip form.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use robustgp::bench::MetricsReport;
use robustgp::PredictiveDistribution;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

pub const MANIFEST_SCHEMA: &str = "robustgp.manifest";
pub const MANIFEST_VERSION: u32 = 1;
pub const RESULTS_SCHEMA: &str = "robustgp.results";
pub const RESULTS_VERSION: u32 = 1;
pub const RESULTS_COLUMNS: [&str; 11] = [
    "dataset", "noise", "model", "seed", "replicate", "fold", "rmse", "mae", "nlp", "converged", "status",
];
pub const SUMMARY_COLUMNS: [&str; 8] = [
    "dataset", "noise", "model", "runs", "failures", "median_rmse", "median_mae", "median_nlp",
];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn input_names(d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("x{k}")).collect()
}

/// Collects the files of one command for the manifest.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
        w.write_record(header).map_err(|e| CliError::io(&path, e))?;
        for row in rows {
            w.write_record(&row).map_err(|e| CliError::io(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> CliResult<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    /// Training or test data with optional outlier mask.
    pub fn write_dataset(&mut self, name: &str, x: &DMatrix<f64>, y: &[f64], mask: Option<&[bool]>) -> CliResult<()> {
        let mut header = input_names(x.ncols());
        header.push("y".into());
        if mask.is_some() {
            header.push("is_outlier".into());
        }
        let rows = (0..x.nrows()).map(|i| {
            let mut row: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(y[i]));
            if let Some(m) = mask {
                row.push(if m[i] { "1" } else { "0" }.into());
            }
            row
        });
        self.write_csv(name, &header, rows)
    }

    pub fn write_predictions(&mut self, name: &str, x: &DMatrix<f64>, pred: &PredictiveDistribution) -> CliResult<()> {
        let mut header = input_names(x.ncols());
        header.extend(["mean", "var", "lo2sd", "hi2sd"].map(String::from));
        let rows = (0..x.nrows()).map(|i| {
            let mut row: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            let (m, v) = (pred.mean[i], pred.variance[i]);
            let sd = v.sqrt();
            row.extend([fmt_f64(m), fmt_f64(v), fmt_f64(m - 2.0 * sd), fmt_f64(m + 2.0 * sd)]);
            row
        });
        self.write_csv(name, &header, rows)
    }
}

pub fn metrics_json(m: &MetricsReport) -> Value {
    json!({ "rmse": m.rmse, "mae": m.mae, "nlp": m.nlp, "n": m.n })
}

/// Wall-clock bookkeeping per phase.
pub struct Timer {
    started_unix: f64,
    phases: Vec<(String, f64)>,
    current: Option<(String, Instant)>,
}

impl Timer {
    pub fn start() -> Self {
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        Self {
            started_unix,
            phases: Vec::new(),
            current: None,
        }
    }

    pub fn phase(&mut self, name: &str) {
        self.stop();
        self.current = Some((name.to_string(), Instant::now()));
    }

    pub fn stop(&mut self) {
        if let Some((name, t)) = self.current.take() {
            self.phases.push((name, t.elapsed().as_secs_f64()));
        }
    }

    pub fn json(&mut self) -> Value {
        self.stop();
        let phases: Vec<Value> = self
            .phases
            .iter()
            .map(|(n, s)| json!({ "name": n, "seconds": s }))
            .collect();
        json!({ "started_unix": self.started_unix, "phases": phases })
    }
}

/// Write `manifest.json` listing every file written so far.
pub fn write_manifest(
    out: &mut OutputDir,
    command: &str,
    seed: u64,
    config: Value,
    timer: &mut Timer,
    metrics: Value,
) -> CliResult<()> {
    let mut files = Vec::new();
    for p in out.files() {
        let bytes = fs::metadata(p).map_err(|e| CliError::io(p, e))?.len();
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        files.push(json!({ "path": name, "bytes": bytes }));
    }
    let manifest = json!({
        "schema": MANIFEST_SCHEMA,
        "schema_version": MANIFEST_VERSION,
        "results_schema": {
            "name": RESULTS_SCHEMA,
            "version": RESULTS_VERSION,
            "columns": RESULTS_COLUMNS,
        },
        "command": command,
        "library_version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": config,
        "timing": timer.json(),
        "metrics": metrics,
        "files": files,
    });
    out.write_json("manifest.json", &manifest)
}
