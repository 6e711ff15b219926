//! Monte Carlo: killed Euler–Maruyama paths, the conditioned (Q-)process,
//! exact simulation of finite chains, and exit-rate estimation.
//!
//! Path `i` always draws from its own ChaCha8 stream `i` of the master seed,
//! and per-path results are combined in path order, so output does not depend
//! on the number of worker threads.

mod ctmc;
mod field;

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use ctmc::{ctmc_ensemble, simulate_ctmc, simulate_ctmc_with, CtmcPath};
pub use field::GridInterpolant;

use crate::discretize::{discrete_gradient, Extension, Grid};
use crate::problem::{Point, PolicySpec, ProblemSpec};

/// First stream used by the conditioned-process simulator, far from the
/// killed-path streams so the two are independent when run side by side.
const QPROCESS_STREAM: u64 = 1 << 40;
const BOOTSTRAP_STREAM: u64 = u64::MAX;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const MIN_SURVIVORS: usize = 100;
pub const MAX_HALVINGS: u32 = 20;
/// Fraction of projected steps above which a conditioned run is flagged.
pub const PROJECTION_FLAG: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("start point {0:?} is outside the admissible region")]
    StartOutside(Point),
    #[error("only {survivors} paths survive to the start of the fit window (need {needed})")]
    TooFewSurvivors { survivors: usize, needed: usize },
    #[error("invalid simulation parameter: {0}")]
    InvalidParameter(&'static str),
}

/// The random stream of path `stream` under `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Feedback used by the SDE simulators.
#[derive(Debug, Clone, Copy)]
pub enum Control<'a> {
    Constant(usize),
    /// The action of the nearest grid node.
    Feedback {
        grid: &'a Grid,
        policy: &'a PolicySpec,
    },
}

impl Control<'_> {
    #[inline]
    pub fn action(&self, x: &Point) -> usize {
        match self {
            Control::Constant(u) => *u,
            Control::Feedback { grid, policy } => policy.action(grid.nearest_node(x)),
        }
    }
}

/// Coefficients with constant expressions evaluated once.
struct Dynamics<'a> {
    problem: &'a ProblemSpec,
    sigma: Option<Point>,
    drift: Vec<Option<Point>>,
}

impl<'a> Dynamics<'a> {
    fn new(problem: &'a ProblemSpec) -> Self {
        let d = problem.dim;
        let constant = |exprs: &[crate::problem::Expr]| -> Option<Point> {
            let mut p = [0.0; 2];
            for k in 0..d {
                p[k] = exprs[k].as_const()?;
            }
            Some(p)
        };
        Dynamics { problem, sigma: constant(&problem.sigma), drift: problem.drift.iter().map(|row| constant(row)).collect() }
    }

    #[inline]
    fn sigma(&self, x: &Point) -> Point {
        self.sigma.unwrap_or_else(|| self.problem.sigma(x))
    }

    #[inline]
    fn drift(&self, x: &Point, u: usize) -> Point {
        self.drift[u].unwrap_or_else(|| self.problem.drift(x, u))
    }
}

fn check_step(dt: f64, horizon: f64) -> Result<(), McError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(McError::InvalidParameter("dt must be positive"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(McError::InvalidParameter("horizon must be nonnegative"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEnsemble {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub x0: Point,
    /// `None` for paths still alive at the horizon.
    pub exit_times: Vec<Option<f64>>,
    /// Position at exit (first point outside) or at the horizon.
    pub terminal_states: Vec<Point>,
}

impl TrajectoryEnsemble {
    pub fn survivors(&self, t: f64) -> usize {
        self.exit_times.iter().filter(|e| e.is_none_or(|s| s > t)).count()
    }

    pub fn survival_fraction(&self, t: f64) -> f64 {
        self.survivors(t) as f64 / self.n_paths as f64
    }

    /// `path,exit_time,censored,x1[,x2]`; censored paths leave `exit_time` empty.
    pub fn write_csv<W: Write>(&self, dim: usize, mut w: W) -> io::Result<()> {
        writeln!(w, "path,exit_time,censored,{}", if dim == 1 { "x1" } else { "x1,x2" })?;
        for (i, (e, x)) in self.exit_times.iter().zip(&self.terminal_states).enumerate() {
            let time = e.map(|t| format!("{t:e}")).unwrap_or_default();
            let coords = if dim == 1 { format!("{:e}", x[0]) } else { format!("{:e},{:e}", x[0], x[1]) };
            writeln!(w, "{i},{time},{},{coords}", e.is_none() as u8)?;
        }
        Ok(())
    }
}

/// Euler–Maruyama paths killed at the first step that lands outside the box.
/// No bridge correction, so exits between steps are missed: survival is
/// biased upward by `O(sqrt(dt))`.
pub fn simulate_killed(
    problem: &ProblemSpec,
    control: Control<'_>,
    x0: Point,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<TrajectoryEnsemble, McError> {
    check_step(dt, horizon)?;
    if !problem.contains(&x0) {
        return Err(McError::StartOutside(x0));
    }
    let dyns = Dynamics::new(problem);
    let d = problem.dim;
    let steps = (horizon / dt).round() as usize;
    let sq = dt.sqrt();
    let paths: Vec<(Option<f64>, Point)> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let mut x = x0;
            for k in 0..steps {
                let m = dyns.drift(&x, control.action(&x));
                let s = dyns.sigma(&x);
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[j] += m[j] * dt + s[j] * sq * z;
                }
                if !problem.contains(&x) {
                    return (Some((k + 1) as f64 * dt), x);
                }
            }
            (None, x)
        })
        .collect();
    let (exit_times, terminal_states) = paths.into_iter().unzip();
    Ok(TrajectoryEnsemble { n_paths, dt, horizon, seed, x0, exit_times, terminal_states })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitRateEstimate {
    pub beta: f64,
    pub stderr: f64,
    pub window: [f64; 2],
    pub survivors_at_start: usize,
    /// `(t, log survival fraction)` used in the fit.
    pub points: Vec<(f64, f64)>,
}

const FIT_POINTS: usize = 21;

/// Slope of `log(count / n)` against `t`, weighting each point by its count
/// (the inverse of the binomial variance of a log frequency).
fn fit_slope(times: &[f64], counts: &[usize], n: usize) -> Option<f64> {
    let pts: Vec<(f64, f64, f64)> =
        times.iter().zip(counts).filter(|(_, c)| **c > 0).map(|(t, c)| (*t, (*c as f64 / n as f64).ln(), *c as f64)).collect();
    if pts.len() < 3 {
        return None;
    }
    let w: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / w;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / w;
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Weighted least-squares slope of the log survival fraction over `window`, with a
/// path-level bootstrap standard error.
pub fn estimate_exit_rate(ens: &TrajectoryEnsemble, window: [f64; 2]) -> Result<ExitRateEstimate, McError> {
    let [t0, t1] = window;
    if !(t0 < t1 && t1 <= ens.horizon + 1e-12) {
        return Err(McError::InvalidParameter("fit window must lie inside the horizon"));
    }
    let survivors_at_start = ens.survivors(t0);
    if survivors_at_start < MIN_SURVIVORS {
        return Err(McError::TooFewSurvivors { survivors: survivors_at_start, needed: MIN_SURVIVORS });
    }
    let times: Vec<f64> = (0..FIT_POINTS).map(|k| t0 + (t1 - t0) * k as f64 / (FIT_POINTS - 1) as f64).collect();
    // bucket[i]: number of fit times that path i survives past
    let bucket: Vec<usize> = ens.exit_times.iter().map(|e| e.map_or(FIT_POINTS, |s| times.iter().filter(|t| s > **t).count())).collect();
    let counts_of = |sample: &mut dyn Iterator<Item = usize>| {
        let mut hist = vec![0usize; FIT_POINTS + 1];
        for b in sample {
            hist[b] += 1;
        }
        let mut counts = vec![0usize; FIT_POINTS];
        let mut acc = 0;
        for k in (0..FIT_POINTS).rev() {
            acc += hist[k + 1];
            counts[k] = acc;
        }
        counts
    };
    let n = ens.n_paths;
    let counts = counts_of(&mut bucket.iter().copied());
    let slope = fit_slope(&times, &counts, n).ok_or(McError::TooFewSurvivors { survivors: 0, needed: MIN_SURVIVORS })?;
    let mut rng = path_rng(ens.seed, BOOTSTRAP_STREAM);
    let mut boot = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let c = counts_of(&mut (0..n).map(|_| bucket[rng.random_range(0..n)]));
        if let Some(s) = fit_slope(&times, &c, n) {
            boot.push(-s);
        }
    }
    let mean = boot.iter().sum::<f64>() / boot.len() as f64;
    let var = boot.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (boot.len() as f64 - 1.0);
    let points = times.iter().zip(&counts).filter(|(_, c)| **c > 0).map(|(t, c)| (*t, (*c as f64 / n as f64).ln())).collect();
    Ok(ExitRateEstimate { beta: -slope, stderr: var.sqrt(), window, survivors_at_start, points })
}

/// Drift and weight fields of the conditioned process built from a grid
/// eigenfunction.
pub struct ConditionedField {
    grid: Grid,
    grad: [GridInterpolant; 2],
    psi: GridInterpolant,
    eps: f64,
}

impl ConditionedField {
    /// `log_psi` on the interior nodes of `grid`; the gradient is the
    /// discrete one, extended by constants past the outermost nodes, and
    /// `Psi` itself is interpolated with zero boundary values.
    pub fn new(grid: &Grid, log_psi: &[f64]) -> Self {
        let g = discrete_gradient(grid, log_psi, Extension::LogZero);
        let comp = |k: usize| GridInterpolant::new(grid, g.iter().map(|p| p[k]).collect(), None);
        let psi = GridInterpolant::new(grid, log_psi.iter().map(|v| v.exp()).collect(), Some(0.0));
        ConditionedField { grid: grid.clone(), grad: [comp(0), comp(1)], psi, eps: 2.0 * grid.h() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Width of the boundary layer that the conditioned paths must stay out
    /// of when projected.
    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn grad_log_psi(&self, x: &Point) -> Point {
        let mut g = [0.0; 2];
        for (k, gk) in g.iter_mut().enumerate().take(self.grid.dim()) {
            *gk = self.grad[k].eval(x);
        }
        g
    }

    #[inline]
    pub fn log_psi(&self, x: &Point) -> f64 {
        self.psi.eval(x).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QProcessRun {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Time-averaged occupancy of the grid's nearest-node cells, averaged
    /// over paths.
    pub histogram: Vec<f64>,
    pub terminal_states: Vec<Point>,
    /// Time average of `|sigma^T grad log psi|^2 / 2` along the paths.
    pub energy_average: f64,
    pub steps: u64,
    pub rejections: u64,
    pub projections: u64,
    /// Paths that left the box; the rejection scheme keeps this at zero.
    pub killed: u64,
    pub flagged: bool,
}

struct QPath {
    hist: Vec<f64>,
    terminal: Point,
    energy: f64,
    steps: u64,
    rejections: u64,
    projections: u64,
}

/// Euler–Maruyama for `dX = (m(X, v) + a grad log psi) dt + sigma dW`. A step
/// that would leave the box is redrawn with half the step, up to
/// [`MAX_HALVINGS`] times, after which the point is projected into the layer
/// at distance `eps = 2h` from the boundary.
#[allow(clippy::too_many_arguments)]
pub fn simulate_qprocess(
    problem: &ProblemSpec,
    control: Control<'_>,
    field: &ConditionedField,
    x0: Point,
    dt: f64,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<QProcessRun, McError> {
    check_step(dt, horizon)?;
    let eps = field.eps();
    if !problem.contains(&x0) || problem.dist_to_boundary(&x0) < eps - 1e-12 {
        return Err(McError::StartOutside(x0));
    }
    let dyns = Dynamics::new(problem);
    let d = problem.dim;
    let grid = field.grid();
    let paths: Vec<QPath> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, QPROCESS_STREAM + i as u64);
            let mut p = QPath { hist: vec![0.0; grid.n()], terminal: x0, energy: 0.0, steps: 0, rejections: 0, projections: 0 };
            let mut x = x0;
            let mut t = 0.0;
            let mut k = 0u64;
            while t < horizon * (1.0 - 1e-12) {
                let full = dt.min(horizon - t);
                let m = dyns.drift(&x, control.action(&x));
                let s = dyns.sigma(&x);
                let g = field.grad_log_psi(&x);
                let mut b = [0.0; 2];
                let mut e = 0.0;
                for j in 0..d {
                    b[j] = m[j] + s[j] * s[j] * g[j];
                    e += 0.5 * (s[j] * g[j]).powi(2);
                }
                let mut step = full;
                let mut next = x;
                let mut accepted = false;
                for _ in 0..=MAX_HALVINGS {
                    let sq = step.sqrt();
                    for j in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        next[j] = x[j] + b[j] * step + s[j] * sq * z;
                    }
                    if problem.contains(&next) {
                        accepted = true;
                        break;
                    }
                    p.rejections += 1;
                    step *= 0.5;
                }
                if !accepted {
                    step *= 2.0;
                    for j in 0..d {
                        next[j] = next[j].clamp(problem.bounds[j][0] + eps, problem.bounds[j][1] - eps);
                    }
                    p.projections += 1;
                }
                p.hist[grid.nearest_node(&x)] += step;
                p.energy += e * step;
                x = next;
                k += 1;
                // keep the clock on the dt lattice when no halving happened
                t = if step == dt { k as f64 * dt } else { t + step };
            }
            p.steps = k;
            p.terminal = x;
            if horizon > 0.0 {
                p.hist.iter_mut().for_each(|h| *h /= horizon);
                p.energy /= horizon;
            }
            p
        })
        .collect();
    let mut histogram = vec![0.0; grid.n()];
    let (mut energy, mut steps, mut rejections, mut projections) = (0.0, 0, 0, 0);
    for p in &paths {
        for (h, v) in histogram.iter_mut().zip(&p.hist) {
            *h += v / n_paths as f64;
        }
        energy += p.energy / n_paths as f64;
        steps += p.steps;
        rejections += p.rejections;
        projections += p.projections;
    }
    let terminal_states: Vec<Point> = paths.iter().map(|p| p.terminal).collect();
    let killed = terminal_states.iter().filter(|x| !problem.contains(x)).count() as u64;
    let flagged = projections as f64 > PROJECTION_FLAG * steps.max(1) as f64;
    Ok(QProcessRun {
        n_paths,
        dt,
        horizon,
        seed,
        histogram,
        terminal_states,
        energy_average: energy,
        steps,
        rejections,
        projections,
        killed,
        flagged,
    })
}

/// `x1[,x2],mass` rows of an occupancy histogram.
pub fn write_histogram_csv<W: Write>(grid: &Grid, histogram: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "{}", if grid.dim() == 1 { "x1,mass" } else { "x1,x2,mass" })?;
    for (i, m) in histogram.iter().enumerate() {
        let x = grid.coords(i);
        if grid.dim() == 1 {
            writeln!(w, "{},{m:e}", x[0])?;
        } else {
            writeln!(w, "{},{},{m:e}", x[0], x[1])?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovMc {
    pub t: f64,
    /// Mean of `g(X_t) 1{t < tau}` over killed paths.
    pub lhs: f64,
    pub lhs_ci: [f64; 2],
    /// `exp(-lambda t + log psi(x0))` times the mean of
    /// `g(X~_t) exp(-log psi(X~_t))` over conditioned paths.
    pub rhs: f64,
    pub rhs_ci: [f64; 2],
    pub overlap: bool,
}

fn mean_ci(values: &[f64]) -> (f64, [f64; 2]) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let half = 1.96 * (var / n).sqrt();
    (mean, [mean - half, mean + half])
}

/// Step sizes and ensemble sizes for [`mc_girsanov_check`]. The killed side
/// needs a much finer step than the conditioned side: its discrete-monitoring
/// bias is `O(sqrt(dt))` and compounds over `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GirsanovConfig {
    pub t: f64,
    pub killed_dt: f64,
    pub killed_paths: usize,
    pub conditioned_dt: f64,
    pub conditioned_paths: usize,
    pub seed: u64,
}

/// Both sides of the change-of-measure identity at time `t`, each from its
/// own ensemble, with 95% confidence intervals.
pub fn mc_girsanov_check(
    problem: &ProblemSpec,
    control: Control<'_>,
    field: &ConditionedField,
    lambda: f64,
    g: &(dyn Fn(&Point) -> f64 + Sync),
    x0: Point,
    cfg: &GirsanovConfig,
) -> Result<GirsanovMc, McError> {
    let t = cfg.t;
    let killed = simulate_killed(problem, control, x0, cfg.killed_dt, t, cfg.killed_paths, cfg.seed)?;
    let lhs_vals: Vec<f64> =
        killed.exit_times.iter().zip(&killed.terminal_states).map(|(e, x)| if e.is_none() { g(x) } else { 0.0 }).collect();
    let q = simulate_qprocess(problem, control, field, x0, cfg.conditioned_dt, t, cfg.conditioned_paths, cfg.seed)?;
    let scale = (-lambda * t + field.log_psi(&x0)).exp();
    let rhs_vals: Vec<f64> = q
        .terminal_states
        .iter()
        .map(|x| {
            let v = g(x);
            if v == 0.0 {
                0.0
            } else {
                scale * v * (-field.log_psi(x)).exp()
            }
        })
        .collect();
    let (lhs, lhs_ci) = mean_ci(&lhs_vals);
    let (rhs, rhs_ci) = mean_ci(&rhs_vals);
    let overlap = lhs_ci[0] <= rhs_ci[1] && rhs_ci[0] <= lhs_ci[1];
    Ok(GirsanovMc { t, lhs, lhs_ci, rhs, rhs_ci, overlap })
}

#[cfg(test)]
mod tests;
