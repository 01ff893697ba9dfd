//! Benchmark generators, tabular ingestion, fold splitting and metrics.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal, StudentT};

use crate::dataset::{Dataset, PredictiveDistribution};
use crate::error::{Error, Result};
use crate::robust::{mad, median, MAD_CONSISTENCY};

/// Observation noise distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    None,
    Normal { mean: f64, sd: f64 },
    StudentT { dof: f64 },
    Laplace { location: f64, scale: f64 },
    Cauchy { location: f64, scale: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::None => true,
            NoiseSpec::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            NoiseSpec::StudentT { dof } => dof.is_finite() && dof > 0.0,
            NoiseSpec::Laplace { location, scale } | NoiseSpec::Cauchy { location, scale } => {
                location.is_finite() && scale.is_finite() && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("noise", format!("invalid parameters in {self}")))
        }
    }

    /// Short family name.
    pub fn family(&self) -> &'static str {
        match self {
            NoiseSpec::None => "none",
            NoiseSpec::Normal { .. } => "normal",
            NoiseSpec::StudentT { .. } => "student-t",
            NoiseSpec::Laplace { .. } => "laplace",
            NoiseSpec::Cauchy { .. } => "cauchy",
        }
    }
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NoiseSpec::None => write!(f, "none"),
            NoiseSpec::Normal { mean, sd } => write!(f, "normal:{mean:?},{sd:?}"),
            NoiseSpec::StudentT { dof } => write!(f, "student-t:{dof:?}"),
            NoiseSpec::Laplace { location, scale } => write!(f, "laplace:{location:?},{scale:?}"),
            NoiseSpec::Cauchy { location, scale } => write!(f, "cauchy:{location:?},{scale:?}"),
        }
    }
}

/// Parses `family[:p1[,p2]]`, e.g. `student-t:10`, `normal:0.01,0.08`,
/// `laplace:0,0.1`, `cauchy`.
impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, args) = match s.split_once(':') {
            Some((f, a)) => (f.trim(), a.trim()),
            None => (s.trim(), ""),
        };
        let params: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|p| {
                    p.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::invalid("noise", format!("bad parameter `{p}` in `{s}`")))
                })
                .collect::<Result<_>>()?
        };
        let get = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
        let max_params = |m: usize| {
            if params.len() > m {
                Err(Error::invalid("noise", format!("too many parameters in `{s}`")))
            } else {
                Ok(())
            }
        };
        let spec = match family.to_ascii_lowercase().as_str() {
            "none" => {
                max_params(0)?;
                NoiseSpec::None
            }
            "normal" | "gaussian" => {
                max_params(2)?;
                NoiseSpec::Normal {
                    mean: get(0, 0.01),
                    sd: get(1, 0.08),
                }
            }
            "student-t" | "student_t" | "t" => {
                max_params(1)?;
                NoiseSpec::StudentT { dof: get(0, 10.0) }
            }
            "laplace" => {
                max_params(2)?;
                NoiseSpec::Laplace {
                    location: get(0, 0.0),
                    scale: get(1, 0.1),
                }
            }
            "cauchy" => {
                max_params(2)?;
                NoiseSpec::Cauchy {
                    location: get(0, 0.0),
                    scale: get(1, 1.0),
                }
            }
            other => return Err(Error::invalid("noise", format!("unknown noise family `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `n` i.i.d. draws from `spec`.
pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, n: usize, rng: &mut R) -> Result<DVector<f64>> {
    spec.validate()?;
    let bad = |e: String| Error::invalid("noise", e);
    let v = match *spec {
        NoiseSpec::None => DVector::zeros(n),
        NoiseSpec::Normal { mean, sd } => {
            let d = Normal::new(mean, sd).map_err(|e| bad(e.to_string()))?;
            DVector::from_fn(n, |_, _| d.sample(rng))
        }
        NoiseSpec::StudentT { dof } => {
            let d = StudentT::new(dof).map_err(|e| bad(e.to_string()))?;
            DVector::from_fn(n, |_, _| d.sample(rng))
        }
        NoiseSpec::Laplace { location, scale } => DVector::from_fn(n, |_, _| {
            // Inverse CDF on u ∈ (-½, ½).
            let u: f64 = rng.random::<f64>() - 0.5;
            location - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        }),
        NoiseSpec::Cauchy { location, scale } => {
            let d = Cauchy::new(location, scale).map_err(|e| bad(e.to_string()))?;
            DVector::from_fn(n, |_, _| d.sample(rng))
        }
    };
    Ok(v)
}

/// Replacement of one input coordinate (and optionally the response) at a row.
#[derive(Debug, Clone, PartialEq)]
pub struct LeverageReplacement {
    pub index: usize,
    pub column: usize,
    pub x: f64,
    pub y: Option<f64>,
    /// Bad leverage points are outlying in the response as well.
    pub bad: bool,
}

/// Where and how a generated training set is contaminated. Indices are
/// zero-based.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationPlan {
    pub vertical: Vec<usize>,
    pub vertical_magnitude: f64,
    pub leverage: Vec<LeverageReplacement>,
    pub random_count: usize,
    pub random_mean: f64,
    pub random_variance: f64,
}

/// One-based rows receiving vertical outliers in both synthetic benchmarks.
pub const VERTICAL_ROWS: [usize; 8] = [7, 8, 9, 10, 11, 15, 61, 70];
pub const NEAL_BAD_X: [f64; 3] = [4.3, 4.4, 4.5];
pub const NEAL_BAD_Y: [f64; 3] = [8.4763, 9.1938, 0.2833];
pub const NEAL_GOOD_X: [f64; 6] = [3.5, 3.55, 3.6, 3.65, 3.7, 3.75];
pub const NEAL_GOOD_Y: [f64; 6] = [1.9773, 2.1271, 2.1096, 1.8316, 1.9467, 2.373];
pub const FRIEDMAN_X5: [f64; 6] = [8.5312, 9.3654, 0.7739, 0.4802, 1.3408, 1.7653];

impl ContaminationPlan {
    pub fn none() -> Self {
        Self {
            vertical: Vec::new(),
            vertical_magnitude: 0.0,
            leverage: Vec::new(),
            random_count: 0,
            random_mean: 0.0,
            random_variance: 0.0,
        }
    }

    /// Vertical outliers of size 10, bad leverage at rows 21 to 23 and good
    /// leverage at rows 50 to 55 (one-based).
    pub fn neal() -> Self {
        let mut leverage = Vec::new();
        for (k, (&x, &y)) in NEAL_BAD_X.iter().zip(&NEAL_BAD_Y).enumerate() {
            leverage.push(LeverageReplacement {
                index: 20 + k,
                column: 0,
                x,
                y: Some(y),
                bad: true,
            });
        }
        for (k, (&x, &y)) in NEAL_GOOD_X.iter().zip(&NEAL_GOOD_Y).enumerate() {
            leverage.push(LeverageReplacement {
                index: 49 + k,
                column: 0,
                x,
                y: Some(y),
                bad: false,
            });
        }
        Self {
            vertical: VERTICAL_ROWS.iter().map(|i| i - 1).collect(),
            vertical_magnitude: 10.0,
            leverage,
            random_count: 0,
            random_mean: 0.0,
            random_variance: 0.0,
        }
    }

    /// Ten random outliers with mean 10 and variance 9, vertical outliers of
    /// size 10, and bad leverage on the fifth input at rows 21 to 26 (one-based).
    pub fn friedman() -> Self {
        Self {
            vertical: VERTICAL_ROWS.iter().map(|i| i - 1).collect(),
            vertical_magnitude: 10.0,
            leverage: FRIEDMAN_X5
                .iter()
                .enumerate()
                .map(|(k, &x)| LeverageReplacement {
                    index: 20 + k,
                    column: 4,
                    x,
                    y: None,
                    bad: true,
                })
                .collect(),
            random_count: 10,
            random_mean: 10.0,
            random_variance: 9.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertical.is_empty() && self.leverage.is_empty() && self.random_count == 0
    }

    pub fn validate(&self, n: usize, d: usize) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("contamination", reason));
        if let Some(i) = self.vertical.iter().find(|&&i| i >= n) {
            return bad(format!("vertical outlier row {} is out of range for {n} rows", i + 1));
        }
        for l in &self.leverage {
            if l.index >= n || l.column >= d {
                return bad(format!("leverage entry ({}, {}) out of range", l.index + 1, l.column + 1));
            }
            if self.vertical.contains(&l.index) {
                return bad(format!("row {} is both vertical and leverage", l.index + 1));
            }
        }
        let touched = self.touched_rows().len();
        if self.random_count > n.saturating_sub(touched) {
            return bad(format!("{} random outliers do not fit in {n} rows", self.random_count));
        }
        if self.random_count > 0 && !(self.random_variance >= 0.0 && self.random_mean.is_finite()) {
            return bad("random outlier distribution is invalid".into());
        }
        Ok(())
    }

    fn touched_rows(&self) -> Vec<usize> {
        let mut rows: Vec<usize> = self.vertical.iter().copied().chain(self.leverage.iter().map(|l| l.index)).collect();
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

/// Role of a training row in a contaminated benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    Clean,
    Vertical,
    BadLeverage,
    GoodLeverage,
    Random,
}

impl PointKind {
    /// Whether the response at this row is contaminated.
    pub fn is_outlier(self) -> bool {
        matches!(self, PointKind::Vertical | PointKind::BadLeverage | PointKind::Random)
    }
}

/// Generated training data with ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub data: Dataset,
    pub kinds: Vec<PointKind>,
}

impl GeneratedData {
    pub fn outlier_mask(&self) -> Vec<bool> {
        self.kinds.iter().map(|k| k.is_outlier()).collect()
    }
}

/// Training set plus a noise-free test set.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: GeneratedData,
    pub test: Dataset,
}

pub fn neal_truth(x: f64) -> f64 {
    0.3 + 0.4 * x + 0.5 * (2.7 * x).sin() + 1.1 / (1.0 + x * x)
}

pub const NEAL_N: usize = 100;
pub const NEAL_TEST_N: usize = 541;
pub const NEAL_LOW: f64 = -2.7;
pub const NEAL_HIGH: f64 = 2.5;
pub const NEAL_TEST_HIGH: f64 = 5.0;
/// Training inputs are uniform on each of `[NEAL_LOW, -1]`, `[-1, 1]` and
/// `[1, NEAL_HIGH]` with these masses, which places the sample median near 0
/// and the normalized MAD near 1.48.
pub const NEAL_INPUT_PIECES: [(f64, f64, f64); 3] = [(NEAL_LOW, -1.0, 0.275), (-1.0, 1.0, 0.549), (1.0, NEAL_HIGH, 0.176)];

/// `NEAL_TEST_N` equally spaced points from -2.7 to 5.
pub fn neal_test_grid() -> Vec<f64> {
    let step = (NEAL_TEST_HIGH - NEAL_LOW) / (NEAL_TEST_N - 1) as f64;
    (0..NEAL_TEST_N)
        .map(|i| if i + 1 == NEAL_TEST_N { NEAL_TEST_HIGH } else { NEAL_LOW + i as f64 * step })
        .collect()
}

fn neal_input_quantile(u: f64) -> f64 {
    let mut acc = 0.0;
    for &(a, b, mass) in &NEAL_INPUT_PIECES {
        if u <= acc + mass {
            return a + (b - a) * ((u - acc) / mass).clamp(0.0, 1.0);
        }
        acc += mass;
    }
    NEAL_HIGH
}

/// Stratified draws from the piecewise-uniform input law, in random order.
fn neal_inputs<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..m)
        .map(|i| neal_input_quantile((i as f64 + rng.random::<f64>()) / m as f64))
        .collect();
    x.shuffle(rng);
    x
}

/// Neal benchmark: `NEAL_N` training rows under `noise` and `plan`, and the
/// noise-free test grid.
pub fn gen_neal(noise: &NoiseSpec, plan: &ContaminationPlan, seed: u64) -> Result<Benchmark> {
    plan.validate(NEAL_N, 1)?;
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let replaced: Vec<usize> = plan.leverage.iter().map(|l| l.index).collect();
    let free: Vec<usize> = (0..NEAL_N).filter(|i| !replaced.contains(i)).collect();
    let draws = neal_inputs(free.len(), &mut rng);
    let mut x = vec![0.0; NEAL_N];
    for (&i, &v) in free.iter().zip(&draws) {
        x[i] = v;
    }
    for l in &plan.leverage {
        x[l.index] = l.x;
    }
    let e = sample_noise(noise, NEAL_N, &mut rng)?;
    let mut y: Vec<f64> = x.iter().zip(e.iter()).map(|(xi, ei)| neal_truth(*xi) + ei).collect();
    let mut x_mat = DMatrix::from_column_slice(NEAL_N, 1, &x);
    let kinds = contaminate(&mut x_mat, &mut y, plan, &mut rng)?;

    let grid = neal_test_grid();
    let truth: Vec<f64> = grid.iter().map(|v| neal_truth(*v)).collect();
    Ok(Benchmark {
        train: GeneratedData {
            data: Dataset::new(x_mat, DVector::from_vec(y))?,
            kinds,
        },
        test: Dataset::from_1d(&grid, &truth)?,
    })
}

/// Applies vertical, leverage and random contamination in place.
fn contaminate<R: Rng + ?Sized>(
    x: &mut DMatrix<f64>,
    y: &mut [f64],
    plan: &ContaminationPlan,
    rng: &mut R,
) -> Result<Vec<PointKind>> {
    let n = y.len();
    let mut kinds = vec![PointKind::Clean; n];
    for &i in &plan.vertical {
        y[i] += plan.vertical_magnitude;
        kinds[i] = PointKind::Vertical;
    }
    for l in &plan.leverage {
        x[(l.index, l.column)] = l.x;
        if let Some(v) = l.y {
            y[l.index] = v;
        }
        kinds[l.index] = if l.bad { PointKind::BadLeverage } else { PointKind::GoodLeverage };
    }
    if plan.random_count > 0 {
        let mut pool: Vec<usize> = (0..n).filter(|&i| kinds[i] == PointKind::Clean).collect();
        pool.shuffle(rng);
        let mut chosen = pool[..plan.random_count].to_vec();
        chosen.sort_unstable();
        let d = Normal::new(plan.random_mean, plan.random_variance.sqrt())
            .map_err(|e| Error::invalid("contamination", e.to_string()))?;
        for i in chosen {
            y[i] += d.sample(rng);
            kinds[i] = PointKind::Random;
        }
    }
    Ok(kinds)
}

pub fn friedman_truth(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3] + 5.0 * x[4]
}

pub const FRIEDMAN_DIM: usize = 10;
pub const FRIEDMAN_N: usize = 100;
pub const FRIEDMAN_TEST_N: usize = 10_000;
/// RNG stream of the shared Friedman test set; replicate `r` uses stream `r`.
pub const FRIEDMAN_TEST_STREAM: u64 = 1 << 32;

/// Friedman replicates. Replicate `r` draws from the ChaCha stream `r` of
/// `seed`; the test set draws from [`FRIEDMAN_TEST_STREAM`]. Responses are
/// computed before the leverage replacement of the fifth input.
pub fn gen_friedman(
    replicates: usize,
    noise: &NoiseSpec,
    plan: &ContaminationPlan,
    seed: u64,
) -> Result<(Vec<GeneratedData>, Dataset)> {
    gen_friedman_sized(replicates, FRIEDMAN_N, FRIEDMAN_TEST_N, noise, plan, seed)
}

pub fn gen_friedman_sized(
    replicates: usize,
    n: usize,
    n_test: usize,
    noise: &NoiseSpec,
    plan: &ContaminationPlan,
    seed: u64,
) -> Result<(Vec<GeneratedData>, Dataset)> {
    plan.validate(n, FRIEDMAN_DIM)?;
    noise.validate()?;
    let mut sets = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let mut x = DMatrix::from_fn(n, FRIEDMAN_DIM, |_, _| 0.0);
        for i in 0..n {
            for j in 0..FRIEDMAN_DIM {
                x[(i, j)] = rng.random::<f64>();
            }
        }
        let e = sample_noise(noise, n, &mut rng)?;
        let mut y: Vec<f64> = (0..n)
            .map(|i| friedman_truth(x.row(i).transpose().as_slice()) + e[i])
            .collect();
        let kinds = contaminate(&mut x, &mut y, plan, &mut rng)?;
        sets.push(GeneratedData {
            data: Dataset::new(x, DVector::from_vec(y))?,
            kinds,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(FRIEDMAN_TEST_STREAM);
    let mut xt = DMatrix::zeros(n_test, FRIEDMAN_DIM);
    for i in 0..n_test {
        for j in 0..FRIEDMAN_DIM {
            xt[(i, j)] = rng.random::<f64>();
        }
    }
    let yt = DVector::from_fn(n_test, |i, _| friedman_truth(xt.row(i).transpose().as_slice()));
    Ok((sets, Dataset::new(xt, yt)?))
}

/// Per-column affine map applied to inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnScaling {
    pub center: f64,
    pub scale: f64,
}

/// Median / normalized-MAD standardization of each input column, falling
/// back to unit scale for constant columns.
pub fn standardize_columns(x: &mut DMatrix<f64>) -> Vec<ColumnScaling> {
    let mut out = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let center = median(&col);
        let mut scale = MAD_CONSISTENCY * mad(&col);
        if !(scale.is_finite() && scale > 0.0) {
            scale = 1.0;
        }
        for v in x.column_mut(j).iter_mut() {
            *v = (*v - center) / scale;
        }
        out.push(ColumnScaling { center, scale });
    }
    out
}

pub fn unstandardize_columns(x: &mut DMatrix<f64>, scaling: &[ColumnScaling]) -> Result<()> {
    if scaling.len() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: scaling.len(),
        });
    }
    for (j, s) in scaling.iter().enumerate() {
        for v in x.column_mut(j).iter_mut() {
            *v = *v * s.scale + s.center;
        }
    }
    Ok(())
}

/// Dataset read from CSV.
#[derive(Debug, Clone)]
pub struct CsvData {
    pub data: Dataset,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Present when inputs were standardized.
    pub input_scaling: Option<Vec<ColumnScaling>>,
    /// Values of an `is_outlier` column, when the file has one.
    pub outlier_mask: Option<Vec<bool>>,
}

pub const OUTLIER_COLUMN: &str = "is_outlier";

/// Read a comma-separated file with a header row. Every column except the
/// target and an optional `is_outlier` column becomes an input. Errors name
/// the one-based data row and column of the offending cell.
pub fn load_csv(path: &Path, target: &str, standardize: bool) -> Result<CsvData> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(file, target, standardize)
}

pub fn read_csv<R: std::io::Read>(reader: R, target: &str, standardize: bool) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            column: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target_col = headers.iter().position(|h| h == target).ok_or_else(|| Error::Parse {
        row: 0,
        column: 0,
        message: format!("target column `{target}` not found"),
    })?;
    let mask_col = headers.iter().position(|h| h == OUTLIER_COLUMN && h != target);
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&c| c != target_col && Some(c) != mask_col).collect();
    if feature_cols.is_empty() {
        return Err(Error::invalid("csv", "no input columns besides the target"));
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut mask = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 0,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let cell = |c: usize| -> Result<f64> {
            let text = record[c].trim();
            match text.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("`{text}` is not a finite number"),
                }),
            }
        };
        for &c in &feature_cols {
            xs.push(cell(c)?);
        }
        ys.push(cell(target_col)?);
        if let Some(c) = mask_col {
            mask.push(cell(c)? != 0.0);
        }
    }
    let n = ys.len();
    if n == 0 {
        return Err(Error::invalid("csv", "no data rows"));
    }
    let mut x = DMatrix::from_row_slice(n, feature_cols.len(), &xs);
    let input_scaling = standardize.then(|| standardize_columns(&mut x));
    Ok(CsvData {
        data: Dataset::new(x, DVector::from_vec(ys))?,
        feature_names: feature_cols.iter().map(|&c| headers[c].clone()).collect(),
        target_name: target.to_string(),
        input_scaling,
        outlier_mask: mask_col.map(|_| mask),
    })
}

/// `k` (train, test) index pairs whose test sets partition `0..n`, with
/// sizes differing by at most one. Indices within each set are ascending.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(Error::invalid("kfold", format!("need 2 <= k <= n, got k={k}, n={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = Vec::with_capacity(k);
    for j in 0..k {
        let (a, b) = (j * n / k, (j + 1) * n / k);
        let mut test = order[a..b].to_vec();
        test.sort_unstable();
        let mut train: Vec<usize> = order[..a].iter().chain(&order[b..]).copied().collect();
        train.sort_unstable();
        folds.push((train, test));
    }
    Ok(folds)
}

/// Accuracy of a predictive distribution on held-out responses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub mae: f64,
    /// Mean negative log Gaussian predictive density.
    pub nlp: f64,
    pub n: usize,
}

pub fn metrics(pred: &PredictiveDistribution, y: &DVector<f64>) -> Result<MetricsReport> {
    if pred.len() != y.len() || pred.variance.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            found: pred.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::invalid("y", "no test points"));
    }
    if let Some(v) = pred.variance.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::invalid("variance", format!("must be positive, got {v}")));
    }
    let n = y.len() as f64;
    let mut se = 0.0;
    let mut ae = 0.0;
    let mut nlp = 0.0;
    for i in 0..y.len() {
        let e = y[i] - pred.mean[i];
        let v = pred.variance[i];
        se += e * e;
        ae += e.abs();
        nlp += 0.5 * (2.0 * PI * v).ln() + 0.5 * e * e / v;
    }
    Ok(MetricsReport {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        nlp: nlp / n,
        n: y.len(),
    })
}
