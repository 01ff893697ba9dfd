//! The four subcommands.

use rayon::prelude::*;
use robustgp::bench::{
    self, gen_friedman_sized, gen_neal, kfold_split, load_csv, ContaminationPlan, MetricsReport, NoiseSpec,
    FRIEDMAN_N,
};
use robustgp::mcmc::{predictive_average, run_chain, ChainOutput};
use robustgp::{fit_ml2, optimize_hyperparams, Dataset, PredictiveDistribution, RobustWeighting};
use serde_json::{json, Value};

use crate::config::{BenchArgs, Command, Contamination, DataArgs, DatasetKind, FitArgs, ModelArgs, ModelKind};
use crate::error::{CliError, CliResult};
use crate::output::{fmt_f64, metrics_json, write_manifest, OutputDir, Timer, RESULTS_COLUMNS, SUMMARY_COLUMNS};

/// Training data, test data and ground-truth mask for one run.
pub struct Problem {
    pub train: Dataset,
    pub test: Dataset,
    pub mask: Option<Vec<bool>>,
}

fn plan(args: &DataArgs) -> ContaminationPlan {
    match (args.contamination, args.dataset) {
        (Contamination::None, _) | (_, DatasetKind::Csv) => ContaminationPlan::none(),
        (Contamination::Protocol, DatasetKind::Neal) => ContaminationPlan::neal(),
        (Contamination::Protocol, DatasetKind::Friedman) => ContaminationPlan::friedman(),
    }
}

fn neal_problem(args: &DataArgs, noise: &NoiseSpec, seed: u64) -> CliResult<Problem> {
    let b = gen_neal(noise, &plan(args), seed)?;
    Ok(Problem {
        mask: Some(b.train.outlier_mask()),
        train: b.train.data,
        test: b.test,
    })
}

fn friedman_problems(args: &DataArgs, noise: &NoiseSpec) -> CliResult<(Vec<bench::GeneratedData>, Dataset)> {
    Ok(gen_friedman_sized(args.replicates, FRIEDMAN_N, args.test_size, noise, &plan(args), args.seed)?)
}

fn csv_data(args: &DataArgs) -> CliResult<bench::CsvData> {
    let path = args.csv.as_ref().ok_or_else(|| CliError::config("csv", "missing path"))?;
    Ok(load_csv(path, &args.target, args.standardize)?)
}

/// The single problem addressed by `diagnose` and `fit`. CSV data serve as
/// their own test set.
pub fn load_problem(args: &DataArgs) -> CliResult<Problem> {
    let noise = args.noise();
    match args.dataset {
        DatasetKind::Neal => neal_problem(args, &noise, args.seed),
        DatasetKind::Friedman => {
            let (mut sets, test) = friedman_problems(args, &noise)?;
            let g = sets.swap_remove(args.replicate);
            Ok(Problem {
                mask: Some(g.outlier_mask()),
                train: g.data,
                test,
            })
        }
        DatasetKind::Csv => {
            let c = csv_data(args)?;
            Ok(Problem {
                test: c.data.clone(),
                train: c.data,
                mask: c.outlier_mask,
            })
        }
    }
}

/// Outcome of fitting one model.
pub struct FitOutcome {
    pub prediction: PredictiveDistribution,
    pub converged: bool,
    pub hyperparameters: Value,
    pub chain: Option<ChainOutput>,
}

pub fn fit_model(kind: ModelKind, model: &ModelArgs, noise: &NoiseSpec, train: &Dataset, test: &Dataset, seed: u64) -> CliResult<FitOutcome> {
    match kind {
        ModelKind::Gp => {
            let m = fit_ml2(train, None, &model.optimizer(seed))?;
            let prediction = m.predict(&test.x, true)?;
            let r = m.report().cloned();
            Ok(FitOutcome {
                prediction,
                converged: r.as_ref().is_none_or(|r| r.converged),
                hyperparameters: json!({
                    "model": kind.as_str(),
                    "amplitude": m.amplitude_response_units(),
                    "length_scales": m.kernel().length_scales(),
                    "noise_sd": m.noise_sd_response_units(),
                    "log_evidence": m.log_evidence(),
                    "converged": r.as_ref().map(|r| r.converged),
                    "iterations": r.as_ref().map(|r| r.iterations),
                    "evaluations": r.as_ref().map(|r| r.evaluations),
                    "grad_norm": r.as_ref().map(|r| r.grad_norm),
                }),
                chain: None,
            })
        }
        ModelKind::HuberLa => {
            let cfg = model.huber(noise)?;
            let weighting = RobustWeighting::for_regression(&train.x)?;
            let m = optimize_hyperparams(train, &cfg, &weighting, None, &model.laplace(seed))?;
            let prediction = m.predict(&test.x, true)?;
            let r = m.report().cloned();
            let post = m.posterior();
            Ok(FitOutcome {
                prediction,
                converged: r.as_ref().is_none_or(|r| r.converged) && post.converged,
                hyperparameters: json!({
                    "model": kind.as_str(),
                    "b": m.config().threshold,
                    "epsilon": m.config().contamination,
                    "sigma": m.config().sigma,
                    "scale": post.scale,
                    "amplitude": m.kernel().amplitude() * m.scaling().scale,
                    "length_scales": m.kernel().length_scales(),
                    "noise_sd": m.noise_sd_response_units(),
                    "log_evidence": post.log_evidence,
                    "mode_converged": post.converged,
                    "converged": r.as_ref().map(|r| r.converged),
                    "iterations": r.as_ref().map(|r| r.iterations),
                    "evaluations": r.as_ref().map(|r| r.evaluations),
                    "grad_norm": r.as_ref().map(|r| r.grad_norm),
                }),
                chain: None,
            })
        }
        ModelKind::HuberMcmc => {
            let cfg = model.huber(noise)?;
            let weighting = RobustWeighting::for_regression(&train.x)?;
            let chain = run_chain(train, &cfg, &weighting.weights, &model.sampler(seed))?;
            let avg = predictive_average(&chain, &train.y, &test.x, true)?;
            let coords: Vec<Value> = chain
                .coordinate_names
                .iter()
                .enumerate()
                .map(|(k, name)| {
                    let draws: Vec<f64> = chain.coordinate(k).concat();
                    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
                    json!({ "name": name, "mean": mean, "ess": chain.ess[k], "rhat": chain.rhat[k] })
                })
                .collect();
            let outliers = chain.samples.iter().map(|s| s.n_outliers as f64).sum::<f64>() / chain.len() as f64;
            let acceptance: Vec<Value> = chain.acceptance.iter().map(|(n, a)| json!({ "group": n, "rate": a })).collect();
            let max_rhat = chain.rhat.iter().copied().fold(f64::NAN, f64::max);
            Ok(FitOutcome {
                prediction: avg.distribution,
                converged: true,
                hyperparameters: json!({
                    "model": kind.as_str(),
                    "b": cfg.threshold,
                    "epsilon": cfg.contamination,
                    "response_center": chain.scaling().center,
                    "response_scale": chain.scaling().scale,
                    "coordinates": coords,
                    "mean_outliers": outliers,
                    "acceptance": acceptance,
                    "max_rhat": max_rhat,
                    "retained": chain.len(),
                    "max_mcse": avg.mcse.iter().copied().fold(0.0, f64::max),
                }),
                chain: Some(chain),
            })
        }
    }
}

pub fn cmd_generate(args: &DataArgs) -> CliResult<()> {
    let mut timer = Timer::start();
    let mut out = OutputDir::create(&args.out)?;
    timer.phase("generate");
    let noise = args.noise();
    match args.dataset {
        DatasetKind::Neal => {
            let p = neal_problem(args, &noise, args.seed)?;
            timer.phase("write");
            out.write_dataset("train.csv", &p.train.x, p.train.y.as_slice(), p.mask.as_deref())?;
            out.write_dataset("test.csv", &p.test.x, p.test.y.as_slice(), None)?;
        }
        DatasetKind::Friedman => {
            let (sets, test) = friedman_problems(args, &noise)?;
            timer.phase("write");
            for (r, g) in sets.iter().enumerate() {
                let mask = g.outlier_mask();
                out.write_dataset(&format!("train_r{r:02}.csv"), &g.data.x, g.data.y.as_slice(), Some(&mask))?;
            }
            out.write_dataset("test.csv", &test.x, test.y.as_slice(), None)?;
        }
        DatasetKind::Csv => return Err(CliError::config("dataset", "`generate` supports the synthetic datasets only")),
    }
    write_manifest(&mut out, "generate", args.seed, json!({ "data": args.echo() }), &mut timer, Value::Null)
}

pub fn cmd_diagnose(args: &DataArgs) -> CliResult<()> {
    let mut timer = Timer::start();
    let mut out = OutputDir::create(&args.out)?;
    timer.phase("load");
    let p = load_problem(args)?;
    timer.phase("diagnose");
    let w = RobustWeighting::for_regression(&p.train.x)
        .map_err(|e| CliError::Numerical(format!("projection statistics of the training inputs: {e}")))?;
    timer.phase("write");
    let mut header: Vec<String> = ["row", "ps", "weight", "nu", "threshold", "regime"].map(String::from).to_vec();
    if p.mask.is_some() {
        header.push("is_outlier".into());
    }
    let rows = (0..w.len()).map(|i| {
        let mut row = vec![
            (i + 1).to_string(),
            fmt_f64(w.ps[i]),
            fmt_f64(w.weights[i]),
            w.dof[i].to_string(),
            fmt_f64(w.thresholds[i]),
            w.regime.as_str().to_string(),
        ];
        if let Some(m) = &p.mask {
            row.push(if m[i] { "1" } else { "0" }.into());
        }
        row
    });
    out.write_csv("diagnostics.csv", &header, rows)?;
    let downweighted = w.weights.iter().filter(|v| **v < 1.0).count();
    println!("{downweighted} of {} rows downweighted", w.len());
    let summary = json!({ "rows": w.len(), "downweighted": downweighted, "regime": w.regime.as_str() });
    write_manifest(&mut out, "diagnose", args.seed, json!({ "data": args.echo() }), &mut timer, summary)
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<()> {
    let mut timer = Timer::start();
    let mut out = OutputDir::create(&args.data.out)?;
    timer.phase("load");
    let p = load_problem(&args.data)?;
    let noise = args.data.noise();
    timer.phase("fit");
    let fit = fit_model(args.kind, &args.model, &noise, &p.train, &p.test, args.data.seed)?;
    timer.phase("write");
    let report = bench::metrics(&fit.prediction, &p.test.y)?;
    out.write_predictions("predictions.csv", &p.test.x, &fit.prediction)?;
    out.write_json("hyperparameters.json", &fit.hyperparameters)?;
    out.write_json("metrics.json", &metrics_json(&report))?;
    if let Some(chain) = &fit.chain {
        write_chains(&mut out, chain)?;
    }
    let config = json!({
        "data": args.data.echo(),
        "model": args.kind.as_str(),
        "settings": args.model.echo(),
    });
    write_manifest(&mut out, "fit", args.data.seed, config, &mut timer, metrics_json(&report))?;
    println!(
        "{} rmse {} mae {} nlp {}",
        args.kind.as_str(),
        fmt_f64(report.rmse),
        fmt_f64(report.mae),
        fmt_f64(report.nlp)
    );
    if !fit.converged {
        return Err(CliError::Numerical(format!(
            "{} hyperparameter search did not converge; best iterate written to {}",
            args.kind.as_str(),
            args.data.out.display()
        )));
    }
    Ok(())
}

/// One file per chain, one record per retained draw.
fn write_chains(out: &mut OutputDir, chain: &ChainOutput) -> CliResult<()> {
    let mut header = vec!["iteration".to_string()];
    header.extend(chain.coordinate_names.iter().cloned());
    header.extend(["n_outliers", "log_target"].map(String::from));
    for c in 0..chain.chains {
        let rows = chain.samples.iter().filter(|s| s.chain == c).map(|s| {
            let mut row = vec![s.iteration.to_string(), fmt_f64(s.log_sigma_g2), fmt_f64(s.log_beta)];
            row.extend(s.log_theta.iter().map(|v| fmt_f64(*v)));
            row.push(s.n_outliers.to_string());
            row.push(fmt_f64(s.log_target));
            row
        });
        out.write_csv(&format!("chain_{c}.csv"), &header, rows)?;
    }
    Ok(())
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub dataset: String,
    pub noise: String,
    pub model: ModelKind,
    pub seed: u64,
    pub replicate: Option<usize>,
    pub fold: Option<usize>,
    pub metrics: Option<MetricsReport>,
    pub converged: bool,
    pub status: String,
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        let opt = |v: Option<usize>| v.map(|v| v.to_string()).unwrap_or_default();
        let m = |f: fn(&MetricsReport) -> f64| self.metrics.as_ref().map(|r| fmt_f64(f(r))).unwrap_or_else(|| "NaN".into());
        vec![
            self.dataset.clone(),
            self.noise.clone(),
            self.model.as_str().into(),
            self.seed.to_string(),
            opt(self.replicate),
            opt(self.fold),
            m(|r| r.rmse),
            m(|r| r.mae),
            m(|r| r.nlp),
            self.converged.to_string(),
            self.status.clone(),
        ]
    }
}

struct Cell {
    noise: NoiseSpec,
    model: ModelKind,
    seed: u64,
    replicate: Option<usize>,
    fold: Option<usize>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per (dataset, noise, model) medians over successful runs, in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<Vec<String>> {
    let mut keys: Vec<(String, String, ModelKind)> = Vec::new();
    for r in rows {
        let k = (r.dataset.clone(), r.noise.clone(), r.model);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(dataset, noise, model)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.dataset == dataset && r.noise == noise && r.model == model)
                .collect();
            let ok: Vec<&MetricsReport> = group.iter().filter_map(|r| r.metrics.as_ref()).collect();
            vec![
                dataset,
                noise,
                model.as_str().into(),
                group.len().to_string(),
                (group.len() - ok.len()).to_string(),
                fmt_f64(median(ok.iter().map(|m| m.rmse).collect())),
                fmt_f64(median(ok.iter().map(|m| m.mae).collect())),
                fmt_f64(median(ok.iter().map(|m| m.nlp).collect())),
            ]
        })
        .collect()
}

/// Pool size: `--threads`, else available cores, capped by `ROBUSTGP_THREADS`.
pub fn thread_count(requested: Option<usize>) -> usize {
    let base = requested.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let cap = std::env::var("ROBUSTGP_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|v| *v > 0);
    cap.map_or(base, |c| base.min(c)).max(1)
}

/// Run the grid and return the rows in grid order.
pub fn run_bench(args: &BenchArgs) -> CliResult<Vec<ResultRow>> {
    let data = &args.data;
    let noises = args.noises();
    let mut cells = Vec::new();
    let mut friedman = Vec::new();
    let mut csv = None;
    match data.dataset {
        DatasetKind::Neal => {
            for &noise in &noises {
                for &model in &args.models {
                    for seed in data.seed..data.seed + args.seeds {
                        cells.push(Cell { noise, model, seed, replicate: None, fold: None });
                    }
                }
            }
        }
        DatasetKind::Friedman => {
            for &noise in &noises {
                friedman.push((noise, friedman_problems(data, &noise)?));
                for &model in &args.models {
                    for r in 0..data.replicates {
                        cells.push(Cell { noise, model, seed: data.seed, replicate: Some(r), fold: None });
                    }
                }
            }
        }
        DatasetKind::Csv => {
            let c = csv_data(data)?;
            let folds = kfold_split(c.data.len(), args.kfold, data.seed)?;
            for &model in &args.models {
                for f in 0..folds.len() {
                    cells.push(Cell { noise: NoiseSpec::None, model, seed: data.seed, replicate: None, fold: Some(f) });
                }
            }
            csv = Some((c, folds));
        }
    }

    let run_cell = |cell: &Cell| -> ResultRow {
        let noise_name = match data.dataset {
            DatasetKind::Csv => "none".to_string(),
            _ => cell.noise.to_string(),
        };
        let outcome = (|| -> CliResult<(MetricsReport, bool)> {
            let (train, test, fit_seed) = match data.dataset {
                DatasetKind::Neal => {
                    let p = neal_problem(data, &cell.noise, cell.seed)?;
                    (p.train, p.test, cell.seed)
                }
                DatasetKind::Friedman => {
                    let r = cell.replicate.unwrap_or(0);
                    let (_, (sets, test)) = friedman
                        .iter()
                        .find(|(n, _)| *n == cell.noise)
                        .ok_or_else(|| CliError::Numerical("missing replicate".into()))?;
                    (sets[r].data.clone(), test.clone(), cell.seed.wrapping_add(r as u64))
                }
                DatasetKind::Csv => {
                    let (c, folds) = csv.as_ref().ok_or_else(|| CliError::Numerical("missing data".into()))?;
                    let f = cell.fold.unwrap_or(0);
                    let (tr, te) = &folds[f];
                    (c.data.subset(tr), c.data.subset(te), cell.seed.wrapping_add(f as u64))
                }
            };
            let fit = fit_model(cell.model, &args.model, &cell.noise, &train, &test, fit_seed)?;
            Ok((bench::metrics(&fit.prediction, &test.y)?, fit.converged))
        })();
        let (metrics, converged, status) = match outcome {
            Ok((m, c)) => (Some(m), c, "ok".to_string()),
            Err(e) => (None, false, format!("error: {e}")),
        };
        ResultRow {
            dataset: data.dataset.as_str().into(),
            noise: noise_name,
            model: cell.model,
            seed: cell.seed,
            replicate: cell.replicate,
            fold: cell.fold,
            metrics,
            converged,
            status,
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count(data.threads))
        .build()
        .map_err(|e| CliError::config("threads", e.to_string()))?;
    Ok(pool.install(|| cells.par_iter().map(run_cell).collect()))
}

pub fn cmd_bench(args: &BenchArgs) -> CliResult<()> {
    let mut timer = Timer::start();
    let mut out = OutputDir::create(&args.data.out)?;
    timer.phase("bench");
    let rows = run_bench(args)?;
    timer.phase("write");
    let header: Vec<String> = RESULTS_COLUMNS.map(String::from).to_vec();
    out.write_csv("results.csv", &header, rows.iter().map(ResultRow::record))?;
    let summary = summarize(&rows);
    let summary_header: Vec<String> = SUMMARY_COLUMNS.map(String::from).to_vec();
    out.write_csv("summary.csv", &summary_header, summary.iter().cloned())?;
    for s in &summary {
        println!("{}", s.join(" "));
    }
    let failures = rows.iter().filter(|r| r.metrics.is_none()).count();
    let config = json!({
        "data": args.data.echo(),
        "models": args.models.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
        "noises": args.noises().iter().map(|n| n.to_string()).collect::<Vec<_>>(),
        "seeds": args.seeds,
        "kfold": args.kfold,
        "settings": args.model.echo(),
    });
    let metrics = json!({ "rows": rows.len(), "failures": failures });
    write_manifest(&mut out, "bench", args.data.seed, config, &mut timer, metrics)
}

pub fn dispatch(command: &Command) -> CliResult<()> {
    crate::config::validate(command)?;
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

