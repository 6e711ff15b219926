//! Policy iteration for the semilinear eigenproblems: the minimal exit rate
//! (`Max` mode, the operator `sup_u L_u`) and the maximal one (`Min` mode,
//! `inf_u L_u`), plus brute-force enumeration for tiny grids.

use std::collections::HashSet;
use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretize::{assemble_generator, rates_at, DiscretizeError, DriftScheme, Grid};
use crate::eigen::{principal_eigenpair_with, EigenError, EigenOptions, EigenPair};
use crate::problem::{PolicySpec, ProblemSpec};

/// Largest policy space [`enumerate_policies`] will walk.
pub const ENUMERATION_LIMIT: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
    #[error("policy iteration revisited an earlier policy after {0} steps without reaching a fixed point")]
    NoConvergence(usize),
    #[error("{count} policies exceed the enumeration limit of {ENUMERATION_LIMIT}")]
    TooLarge { count: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Maximize the generator: minimal exit rate.
    #[default]
    Max,
    /// Minimize the generator: maximal exit rate.
    Min,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Max => "max",
            Mode::Min => "min",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "max" => Ok(Mode::Max),
            "min" => Ok(Mode::Min),
            _ => Err(format!("unknown mode {s:?} (expected max or min)")),
        }
    }
}

/// Everything that defines the controlled chain besides the policy.
#[derive(Debug, Clone, Copy)]
pub struct ControlSetup<'a> {
    pub problem: &'a ProblemSpec,
    pub grid: &'a Grid,
    pub scheme: DriftScheme,
    /// Extra killing rate per node (`G_u - diag(potential)`).
    pub potential: Option<&'a [f64]>,
    pub eigen: EigenOptions,
}

impl<'a> ControlSetup<'a> {
    pub fn new(problem: &'a ProblemSpec, grid: &'a Grid) -> Self {
        Self { problem, grid, scheme: DriftScheme::default(), potential: None, eigen: EigenOptions::default() }
    }

    pub fn eigenpair(&self, policy: &PolicySpec) -> Result<EigenPair, ControlError> {
        let mut gen = assemble_generator(self.grid, self.problem, policy, self.scheme)?;
        if let Some(v) = self.potential {
            gen = gen.with_potential(v);
        }
        Ok(principal_eigenpair_with(&gen.matrix, self.eigen)?)
    }

    /// `(G_u psi)(x) / psi(x)` for every action at node `x`, with `psi`
    /// taken as zero outside the grid.
    pub fn action_scores(&self, psi: &[f64], node: usize) -> Vec<f64> {
        let grid = self.grid;
        let x = grid.coords(node);
        let p = psi[node];
        let extra = self.potential.map_or(0.0, |v| v[node]);
        (0..self.problem.num_actions())
            .map(|u| {
                let r = rates_at(self.problem, grid.h(), &x, u, self.scheme);
                let mut s = 0.0;
                for (axis, rates) in r.iter().enumerate().take(grid.dim()) {
                    for (side, dir) in [(0usize, -1i32), (1, 1)] {
                        let q = grid.neighbor(node, axis, dir).map_or(0.0, |j| psi[j]);
                        s += rates[side] * (q - p);
                    }
                }
                s / p - extra
            })
            .collect()
    }
}

/// Chooses at every node the action whose generator row gives the largest
/// (`Max`) or smallest (`Min`) value of `(G_u psi)(x) / psi(x)`.
///
/// Because the diffusion part does not depend on the action, this is the
/// drift term `<m(x,u), grad psi(x)> / psi(x)` in the discrete stencil; the
/// choice is unchanged under positive rescaling of `psi`. Ties within a
/// relative `1e-12` go to the lowest action index.
pub fn policy_improve(setup: &ControlSetup<'_>, psi: &[f64], mode: Mode) -> PolicySpec {
    assert!(psi.iter().all(|p| *p > 0.0), "psi must be positive");
    let assignment = (0..setup.grid.n())
        .map(|i| {
            let scores = setup.action_scores(psi, i);
            let best = match mode {
                Mode::Max => scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Mode::Min => scores.iter().cloned().fold(f64::INFINITY, f64::min),
            };
            let scale = scores.iter().fold(1.0_f64, |m, s| m.max(s.abs()));
            scores.iter().position(|s| (s - best).abs() <= 1e-12 * scale).unwrap_or(0)
        })
        .collect();
    PolicySpec { assignment }
}

/// Every action within `rel_tol` of the best score at each node, so ties
/// (e.g. at a symmetry point) are all reported.
pub fn optimal_action_sets(setup: &ControlSetup<'_>, psi: &[f64], mode: Mode, rel_tol: f64) -> Vec<Vec<usize>> {
    (0..setup.grid.n())
        .map(|i| {
            let scores = setup.action_scores(psi, i);
            let best = match mode {
                Mode::Max => scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                Mode::Min => scores.iter().cloned().fold(f64::INFINITY, f64::min),
            };
            let scale = scores.iter().fold(1.0_f64, |m, s| m.max(s.abs()));
            (0..scores.len()).filter(|&u| (scores[u] - best).abs() <= rel_tol * scale).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub policy: PolicySpec,
    pub lambda: f64,
    pub cw_interval: [f64; 2],
    /// Nodes whose action changed relative to the previous step.
    pub changes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyIterationTrace {
    pub mode: Mode,
    pub iterations: Vec<TraceStep>,
    pub converged: bool,
    /// Eigenpair under the final policy.
    pub eigenpair: EigenPair,
}

impl PolicyIterationTrace {
    pub fn policy(&self) -> &PolicySpec {
        &self.iterations.last().expect("nonempty trace").policy
    }

    pub fn lambda(&self) -> f64 {
        self.eigenpair.lambda
    }

    /// Largest violation of monotonicity along the trace (positive means
    /// the sequence moved the wrong way).
    pub fn monotonicity_violation(&self) -> f64 {
        self.iterations
            .windows(2)
            .map(|w| match self.mode {
                Mode::Max => w[1].lambda - w[0].lambda,
                Mode::Min => w[0].lambda - w[1].lambda,
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iteration,lambda,lambda_lo,lambda_hi,changes")?;
        for (k, s) in self.iterations.iter().enumerate() {
            writeln!(w, "{k},{:e},{:e},{:e},{}", s.lambda, s.cw_interval[0], s.cw_interval[1], s.changes)?;
        }
        Ok(())
    }
}

/// Alternates eigensolves and [`policy_improve`] from the all-zero policy
/// until the policy repeats.
pub fn policy_iteration(setup: &ControlSetup<'_>, mode: Mode) -> Result<PolicyIterationTrace, ControlError> {
    policy_iteration_from(setup, mode, PolicySpec::constant(setup.grid.n(), 0))
}

pub fn policy_iteration_from(setup: &ControlSetup<'_>, mode: Mode, initial: PolicySpec) -> Result<PolicyIterationTrace, ControlError> {
    let mut seen = HashSet::new();
    let mut policy = initial;
    let mut steps: Vec<TraceStep> = Vec::new();
    loop {
        let e = setup.eigenpair(&policy)?;
        let changes = steps.last().map_or(0, |s| policy.changes_from(&s.policy));
        seen.insert(policy.clone());
        steps.push(TraceStep { policy: policy.clone(), lambda: e.lambda, cw_interval: e.cw_interval, changes });
        let next = policy_improve(setup, &e.psi, mode);
        if next == policy {
            return Ok(PolicyIterationTrace { mode, iterations: steps, converged: true, eigenpair: e });
        }
        if seen.contains(&next) {
            return Err(ControlError::NoConvergence(steps.len()));
        }
        policy = next;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enumeration {
    pub lambda: f64,
    pub policy: PolicySpec,
    pub evaluated: usize,
}

/// Evaluates every stationary policy and returns the one with the
/// smallest eigenvalue (ties broken lexicographically on the policy).
pub fn enumerate_policies(setup: &ControlSetup<'_>) -> Result<Enumeration, ControlError> {
    let n = setup.grid.n();
    let k = setup.problem.num_actions() as u64;
    let count = (k as f64).powi(n as i32);
    if count > ENUMERATION_LIMIT as f64 {
        return Err(ControlError::TooLarge { count });
    }
    let total = k.pow(n as u32);
    let decode = |mut code: u64| {
        let mut a = vec![0usize; n];
        for slot in a.iter_mut() {
            *slot = (code % k) as usize;
            code /= k;
        }
        PolicySpec { assignment: a }
    };
    let results: Vec<(f64, PolicySpec)> = (0..total)
        .into_par_iter()
        .map(|code| {
            let p = decode(code);
            setup.eigenpair(&p).map(|e| (e.lambda, p))
        })
        .collect::<Result<_, _>>()?;
    let (lambda, policy) = results.into_iter().min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1))).expect("at least one policy");
    Ok(Enumeration { lambda, policy, evaluated: total as usize })
}

/// Sup-norm residual of the ergodic HJB equation
/// `opt_u [ (1/2) a psi'' + m_u . grad psi ] + (1/2) |sigma^T grad psi|^2 + lambda = 0`
/// for `psi = log Psi`, with central differences, over the nodes at distance
/// at least `margin` from the boundary (the log blows up at the boundary).
pub fn hjb_residual(problem: &ProblemSpec, grid: &Grid, log_psi: &[f64], lambda: f64, mode: Mode, margin: f64) -> f64 {
    let h = grid.h();
    let mut worst = 0.0_f64;
    for i in 0..grid.n() {
        if grid.dist_to_boundary(i) < margin - 1e-12 {
            continue;
        }
        let x = grid.coords(i);
        let a = problem.diffusion(&x);
        let mut grad = [0.0; 2];
        let mut second = 0.0;
        let mut ok = true;
        for k in 0..grid.dim() {
            match (grid.neighbor(i, k, -1), grid.neighbor(i, k, 1)) {
                (Some(l), Some(r)) => {
                    grad[k] = (log_psi[r] - log_psi[l]) / (2.0 * h);
                    second += 0.5 * a[k] * (log_psi[r] - 2.0 * log_psi[i] + log_psi[l]) / (h * h);
                }
                _ => ok = false,
            }
        }
        if !ok {
            continue;
        }
        let drift_terms = (0..problem.num_actions()).map(|u| {
            let m = problem.drift(&x, u);
            (0..grid.dim()).map(|k| m[k] * grad[k]).sum::<f64>()
        });
        let opt = match mode {
            Mode::Max => drift_terms.fold(f64::NEG_INFINITY, f64::max),
            Mode::Min => drift_terms.fold(f64::INFINITY, f64::min),
        };
        let energy: f64 = (0..grid.dim()).map(|k| 0.5 * a[k] * grad[k] * grad[k]).sum();
        worst = worst.max((second + opt + energy + lambda).abs());
    }
    worst
}
