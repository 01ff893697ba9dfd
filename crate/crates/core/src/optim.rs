//! Box-constrained quasi-Newton ascent in log-parameter space with
//! backtracking line search and random restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub max_iter: usize,
    /// Stop when the projected gradient's ∞-norm drops below this.
    pub grad_tol: f64,
    /// Also stop when an accepted step raises the objective by less than
    /// `f_tol · max(1, |f|)`.
    pub f_tol: f64,
    /// Random restarts in addition to the supplied starting point.
    pub restarts: usize,
    /// Restart points are drawn log-uniformly on `[init_low, init_high]`.
    pub init_low: f64,
    pub init_high: f64,
    /// Box on every log-parameter.
    pub log_lower: f64,
    pub log_upper: f64,
    /// Largest step (∞-norm, log units) tried by the line search.
    pub max_step: f64,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-5,
            f_tol: 1e-10,
            restarts: 5,
            init_low: 1e-2,
            init_high: 1e2,
            log_lower: (1e-6f64).ln(),
            log_upper: (1e6f64).ln(),
            max_step: 2.0,
            seed: 0,
        }
    }
}

/// Outcome of one local ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

impl OptimResult {
    pub fn grad_norm(&self) -> f64 {
        self.gradient.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Best run plus every run, in start order.
#[derive(Debug, Clone)]
pub struct MultiStart {
    pub best: OptimResult,
    pub runs: Vec<OptimResult>,
}

/// Objective for [`maximize`]. The line search asks only for values; the
/// gradient is requested at accepted points.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64>;
    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self(x).map(|(v, _)| v)
    }

    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self(x)
    }
}

/// Objective with a separate, cheaper value function.
pub struct SplitObjective<V, G> {
    pub value: V,
    pub value_grad: G,
}

impl<V, G> Objective for SplitObjective<V, G>
where
    V: FnMut(&[f64]) -> Result<f64>,
    G: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        (self.value)(x)
    }

    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.value_grad)(x)
    }
}

fn clamp(x: &mut [f64], s: &OptimizerSettings) {
    for v in x.iter_mut() {
        *v = v.clamp(s.log_lower, s.log_upper);
    }
}

/// Gradient with components that push against an active bound removed.
fn projected(x: &[f64], g: &[f64], s: &OptimizerSettings) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| {
            if (xi <= s.log_lower && gi < 0.0) || (xi >= s.log_upper && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, g| m.max(g.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximize `objective`.
///
/// Evaluation errors and non-finite values during the line search count as
/// rejected steps; at the starting point they are fatal.
pub fn maximize<O: Objective + ?Sized>(objective: &mut O, x0: &[f64], settings: &OptimizerSettings) -> Result<OptimResult> {
    let n = x0.len();
    let mut x = x0.to_vec();
    clamp(&mut x, settings);
    let (mut fx, mut g) = objective.value_grad(&x)?;
    let mut evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("objective at the initial point".into()));
    }
    // Inverse Hessian approximation of -objective.
    let mut h = identity(n);
    let mut h_is_identity = true;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < settings.max_iter {
        let pg = projected(&x, &g, settings);
        if inf_norm(&pg) < settings.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut dir = mat_vec(&h, &pg);
        if dot(&dir, &pg) <= 0.0 {
            h = identity(n);
            h_is_identity = true;
            dir = pg.clone();
        }
        let dmax = inf_norm(&dir);
        if dmax > settings.max_step {
            dir.iter_mut().for_each(|d| *d *= settings.max_step / dmax);
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            clamp(&mut trial, settings);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if inf_norm(&step) == 0.0 {
                break;
            }
            evaluations += 1;
            if let Ok(ft) = objective.value(&trial) {
                if ft.is_finite() && ft >= fx + 1e-4 * dot(&g, &step) {
                    if let Ok((ft, gt)) = objective.value_grad(&trial) {
                        if ft.is_finite() && gt.iter().all(|v| v.is_finite()) {
                            accepted = Some((trial, ft, gt, step));
                            break;
                        }
                    }
                }
            }
            t *= 0.5;
        }

        match accepted {
            Some((xn, fnew, gnew, step)) => {
                // BFGS update on the minimization problem: gradient is -g.
                let yv: Vec<f64> = g.iter().zip(&gnew).map(|(a, b)| a - b).collect();
                let sy = dot(&step, &yv);
                if sy > 1e-12 * dot(&step, &step).sqrt() * dot(&yv, &yv).sqrt() && sy > 0.0 {
                    bfgs_update(&mut h, &step, &yv, sy);
                    h_is_identity = false;
                }
                let gain = fnew - fx;
                x = xn;
                g = gnew;
                if gain <= settings.f_tol * fx.abs().max(fnew.abs()).max(1.0) {
                    fx = fnew;
                    converged = true;
                    break;
                }
                fx = fnew;
            }
            None if !h_is_identity => {
                h = identity(n);
                h_is_identity = true;
            }
            None => break,
        }
    }

    let gradient = projected(&x, &g, settings);
    if !converged && inf_norm(&gradient) < settings.grad_tol {
        converged = true;
    }
    Ok(OptimResult {
        x,
        value: fx,
        gradient,
        iterations,
        evaluations,
        converged,
    })
}

/// Run [`maximize`] from `init` and from `settings.restarts` random points.
///
/// Starts that fail outright are skipped; an error is returned only when
/// every start fails.
pub fn maximize_multistart<O: Objective + ?Sized>(objective: &mut O, init: &[f64], settings: &OptimizerSettings) -> Result<MultiStart> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let (lo, hi) = (settings.init_low.ln(), settings.init_high.ln());
    let mut starts = vec![init.to_vec()];
    for _ in 0..settings.restarts {
        starts.push((0..init.len()).map(|_| rng.random_range(lo..hi)).collect());
    }
    let mut runs = Vec::with_capacity(starts.len());
    let mut first_error = None;
    for start in &starts {
        match maximize(objective, start, settings) {
            Ok(run) => runs.push(run),
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    let best = runs
        .iter()
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .cloned();
    match best {
        Some(best) => Ok(MultiStart { best, runs }),
        None => Err(first_error.unwrap_or_else(|| Error::NonFinite("no optimizer start succeeded".into()))),
    }
}

/// Central finite-difference gradient with step `h`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let up = f(&probe)?;
        probe[k] = x[k] - h;
        let down = f(&probe)?;
        probe[k] = x[k];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn mat_vec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|row| dot(row, v)).collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
