//! Occupation-measure linear programs for the exit rate.
//!
//! A variable `pi(x, u, w)` is the long-run mass of a chain that sits at node
//! `x`, uses action `u`, and tilts its jump rates by `w`. A tilt multiplies the
//! rate toward neighbor `y` by `r(x, y) >= 0`; a tilt that sends zero rate
//! toward the boundary removes the killing. The running cost of a tilt is the
//! relative entropy rate `sum_y q(x, y) (1 - r + r log r)`, whose continuum
//! limit is `(1/2) |sigma^T w|^2` when `r = exp(h w . e)`. The constraints say
//! that the tilted chain has `pi` as a stationary law on the interior.
//!
//! Each grid point of `w` is the tilt of a candidate eigenfunction `Psi`:
//! `r(x, y) = (Psi(y) / Psi(x))^s` with `Psi = 0` on the boundary, for
//! `s in {1/2, 1, 2}`, plus the zero tilt `r = 1`. With the candidate equal to
//! the principal eigenfunction of a policy `v` and `s = 1`, the tilted chain is
//! the Doob transform, `pi` is its invariant law, and the cost is exactly
//! `lambda_v`.

mod simplex;

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

pub use simplex::{solve_lp, LinearProgram, LpError, LpSolution, MAX_VARIABLES};

use crate::discretize::{discrete_gradient, rates_at, DriftScheme, Extension, Grid};
use crate::linalg::tv_distance;
use crate::problem::{Point, PolicySpec, ProblemSpec};

/// Per-node cap on the number of `w` points.
pub const MAX_W_POINTS: usize = 16;
pub const POWERS: [f64; 3] = [1.0, 0.5, 2.0];

#[derive(Debug, Error)]
pub enum VariationalError {
    #[error("{0} candidate fields would exceed {MAX_W_POINTS} w points per node")]
    TooManyCandidates(usize),
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum WSource {
    Zero,
    Candidate { index: usize, power: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WPoint {
    pub source: WSource,
    /// The continuum tilt this point stands for (`s grad log Psi`).
    pub w: Point,
}

/// Finite `w` sets per node.
#[derive(Debug, Clone, PartialEq)]
pub struct WGrid {
    /// Candidate eigenfunctions (positive on the grid).
    pub candidates: Vec<Vec<f64>>,
    pub points: Vec<Vec<WPoint>>,
}

impl WGrid {
    /// Jump-rate multiplier toward neighbor `j` (`None` for the boundary).
    pub fn ratio(&self, p: &WPoint, node: usize, neighbor: Option<usize>) -> f64 {
        match p.source {
            WSource::Zero => 1.0,
            WSource::Candidate { index, power } => {
                let psi = &self.candidates[index];
                match neighbor {
                    Some(j) => (psi[j] / psi[node]).powf(power),
                    None => 0.0,
                }
            }
        }
    }
}

/// `{0}` plus, for each candidate log-eigenfunction, its discrete gradient
/// scaled by `1, 1/2, 2`.
pub fn build_w_grid(grid: &Grid, candidate_log_psis: &[Vec<f64>]) -> Result<WGrid, VariationalError> {
    if 1 + POWERS.len() * candidate_log_psis.len() > MAX_W_POINTS {
        return Err(VariationalError::TooManyCandidates(candidate_log_psis.len()));
    }
    let grads: Vec<Vec<Point>> = candidate_log_psis.iter().map(|f| discrete_gradient(grid, f, Extension::LogZero)).collect();
    let points = (0..grid.n())
        .map(|i| {
            let mut pts = vec![WPoint { source: WSource::Zero, w: [0.0; 2] }];
            for (index, g) in grads.iter().enumerate() {
                for power in POWERS {
                    pts.push(WPoint { source: WSource::Candidate { index, power }, w: [power * g[i][0], power * g[i][1]] });
                }
            }
            pts
        })
        .collect();
    let candidates = candidate_log_psis.iter().map(|f| f.iter().map(|v| v.exp()).collect()).collect();
    Ok(WGrid { candidates, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Column {
    pub node: usize,
    pub action: usize,
    /// Index into the node's `w` points.
    pub w: usize,
}

#[derive(Debug, Clone)]
pub struct OccupationLp {
    pub lp: LinearProgram,
    pub columns: Vec<Column>,
    pub w_grid: WGrid,
    pub n_nodes: usize,
}

/// Relative-entropy cost of multiplying rate `q` by `r`.
#[inline]
fn tilt_cost(q: f64, r: f64) -> f64 {
    let rlogr = if r > 0.0 { r * r.ln() } else { 0.0 };
    q * (1.0 - r + rlogr)
}

/// Builds the LP over `(x, u, w)`; `actions(x)` lists the admissible actions
/// at node `x` (all of them for the full problem, one for a fixed policy).
pub fn build_occupation_lp_with(
    grid: &Grid,
    problem: &ProblemSpec,
    w_grid: WGrid,
    scheme: DriftScheme,
    actions: impl Fn(usize) -> Vec<usize>,
) -> OccupationLp {
    let n = grid.n();
    let mut columns = Vec::new();
    let mut cols = Vec::new();
    let mut costs = Vec::new();
    for x in 0..n {
        let coords = grid.coords(x);
        for u in actions(x) {
            let rates = rates_at(problem, grid.h(), &coords, u, scheme);
            for (wi, p) in w_grid.points[x].iter().enumerate() {
                let mut col: Vec<(usize, f64)> = Vec::with_capacity(2 * grid.dim() + 2);
                let mut out = 0.0;
                let mut cost = 0.0;
                for (axis, r) in rates.iter().enumerate().take(grid.dim()) {
                    for (side, dir) in [(0usize, -1i32), (1, 1)] {
                        let nb = grid.neighbor(x, axis, dir);
                        let ratio = w_grid.ratio(p, x, nb);
                        let q = r[side];
                        cost += tilt_cost(q, ratio);
                        let rate = q * ratio;
                        out += rate;
                        if let (Some(j), true) = (nb, rate != 0.0) {
                            col.push((j, rate));
                        }
                    }
                }
                col.push((x, -out));
                col.push((n, 1.0));
                col.sort_by_key(|e| e.0);
                columns.push(Column { node: x, action: u, w: wi });
                cols.push(col);
                costs.push(cost);
            }
        }
    }
    let mut b = vec![0.0; n + 1];
    b[n] = 1.0;
    OccupationLp { lp: LinearProgram { n_rows: n + 1, columns: cols, b, c: costs }, columns, w_grid, n_nodes: n }
}

/// LP over every action.
pub fn build_occupation_lp(grid: &Grid, problem: &ProblemSpec, w_grid: WGrid, scheme: DriftScheme) -> OccupationLp {
    let k = problem.num_actions();
    build_occupation_lp_with(grid, problem, w_grid, scheme, |_| (0..k).collect())
}

/// LP with the actions frozen to `policy`.
pub fn fixed_policy_lp(grid: &Grid, problem: &ProblemSpec, w_grid: WGrid, scheme: DriftScheme, policy: &PolicySpec) -> OccupationLp {
    build_occupation_lp_with(grid, problem, w_grid, scheme, |x| vec![policy.action(x)])
}

/// Default pivot tolerance for the occupation LPs.
pub const LP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OccupationSolution {
    pub value: f64,
    /// `(column, mass)` for the nonzero masses.
    pub pi: Vec<(Column, f64)>,
    pub feasibility_residual: f64,
    pub complementary_slackness: f64,
    pub dual_infeasibility: f64,
    pub pivots: usize,
    pub basis_size: usize,
    pub redundant_rows: usize,
}

impl OccupationLp {
    pub fn solve(&self) -> Result<OccupationSolution, VariationalError> {
        let s = solve_lp(&self.lp, LP_TOL)?;
        let pi = self.columns.iter().zip(&s.x).filter(|(_, m)| **m > 0.0).map(|(c, m)| (*c, *m)).collect();
        Ok(OccupationSolution {
            value: s.value,
            pi,
            feasibility_residual: s.feasibility_residual,
            complementary_slackness: s.complementary_slackness,
            dual_infeasibility: s.dual_infeasibility,
            pivots: s.pivots,
            basis_size: s.basis.len(),
            redundant_rows: s.redundant_rows.len(),
        })
    }

    /// Dense mass vector for a sparse measure.
    pub fn mass_vector(&self, pi: &[(Column, f64)]) -> Vec<f64> {
        let mut x = vec![0.0; self.columns.len()];
        for (c, m) in pi {
            let j = self.columns.iter().position(|d| d == c).expect("column belongs to this LP");
            x[j] += m;
        }
        x
    }

    /// The measure that puts mass `mu(x)` on `(x, v(x), w)` with `w` the
    /// exact tilt of candidate `index`.
    pub fn transform_point(&self, mu: &[f64], policy: &PolicySpec, candidate: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.columns.len()];
        for (j, c) in self.columns.iter().enumerate() {
            let p = &self.w_grid.points[c.node][c.w];
            if c.action == policy.action(c.node) && p.source == (WSource::Candidate { index: candidate, power: 1.0 }) {
                x[j] = mu[c.node];
            }
        }
        x
    }

    /// `sum pi(x,u,w) (A_{u,w} f)(x)` for a field `f` on the interior (zero on
    /// the boundary).
    pub fn generator_pairing(&self, x: &[f64], f: &[f64]) -> f64 {
        let n = self.n_nodes;
        self.lp
            .columns
            .iter()
            .zip(x)
            .filter(|(_, m)| **m != 0.0)
            .map(|(col, m)| m * col.iter().filter(|(r, _)| *r < n).map(|(r, v)| v * f[*r]).sum::<f64>())
            .sum()
    }

    /// Fixed-width MPS text of the LP.
    pub fn write_mps<W: Write>(&self, name: &str, mut w: W) -> io::Result<()> {
        let n = self.n_nodes;
        let row_name = |r: usize| if r == n { "NORM".to_string() } else { format!("S{r:07}") };
        writeln!(w, "NAME          {name}")?;
        writeln!(w, "ROWS")?;
        writeln!(w, " N  COST")?;
        for r in 0..=n {
            writeln!(w, " E  {}", row_name(r))?;
        }
        writeln!(w, "COLUMNS")?;
        for (j, col) in self.lp.columns.iter().enumerate() {
            let var = format!("X{j:07}");
            if self.lp.c[j] != 0.0 {
                writeln!(w, "    {var:<8}  {:<8}  {:>12}", "COST", mps_number(self.lp.c[j]))?;
            }
            for &(r, v) in col {
                writeln!(w, "    {var:<8}  {:<8}  {:>12}", row_name(r), mps_number(v))?;
            }
        }
        writeln!(w, "RHS")?;
        writeln!(w, "    {:<8}  {:<8}  {:>12}", "RHS", "NORM", mps_number(1.0))?;
        writeln!(w, "ENDATA")
    }

    /// `x1[,x2],action,w_index,w1[,w2],mass` rows for the nonzero masses.
    pub fn write_solution_csv<W: Write>(&self, grid: &Grid, pi: &[(Column, f64)], mut w: W) -> io::Result<()> {
        let d = grid.dim();
        if d == 1 {
            writeln!(w, "x1,action,w_index,w1,mass")?;
        } else {
            writeln!(w, "x1,x2,action,w_index,w1,w2,mass")?;
        }
        for (c, m) in pi {
            let x = grid.coords(c.node);
            let wp = self.w_grid.points[c.node][c.w].w;
            if d == 1 {
                writeln!(w, "{},{},{},{:e},{:e}", x[0], c.action, c.w, wp[0], m)?;
            } else {
                writeln!(w, "{},{},{},{},{:e},{:e},{:e}", x[0], x[1], c.action, c.w, wp[0], wp[1], m)?;
            }
        }
        Ok(())
    }
}

/// A number rendered in at most 12 characters.
fn mps_number(v: f64) -> String {
    let s = format!("{v:.5e}");
    debug_assert!(s.len() <= 12);
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    /// TV between the x-marginal of `pi` and the reference measure.
    pub x_marginal_tv: f64,
    /// Fraction of mass on an optimal action at its node.
    pub action_mass: f64,
    /// Fraction of mass on a `w` point nearest to `grad psi*` at its node.
    pub w_mass: f64,
    pub x_marginal_pass: bool,
    pub action_pass: bool,
    pub w_pass: bool,
}

impl StructureReport {
    pub fn pass(&self) -> bool {
        self.x_marginal_pass && self.action_pass && self.w_pass
    }
}

/// Checks that the measure sits on the optimal selector and the optimal
/// tilt: x-marginal within TV 0.05 of `mu_ref`, at least 95% of the mass on
/// actions in `optimal_actions(x)`, and at least 95% on `w` points whose
/// continuum tilt is nearest to `grad psi*(x)`.
pub fn verify_minimizer_structure(
    lp: &OccupationLp,
    grid: &Grid,
    pi: &[(Column, f64)],
    optimal_actions: &[Vec<usize>],
    log_psi_star: &[f64],
    mu_ref: &[f64],
) -> StructureReport {
    let n = lp.n_nodes;
    let total: f64 = pi.iter().map(|(_, m)| m).sum();
    let mut marginal = vec![0.0; n];
    for (c, m) in pi {
        marginal[c.node] += m / total;
    }
    let x_marginal_tv = tv_distance(&marginal, mu_ref);
    let action_mass = pi.iter().filter(|(c, _)| optimal_actions[c.node].contains(&c.action)).map(|(_, m)| m).sum::<f64>() / total;
    let grad = discrete_gradient(grid, log_psi_star, Extension::LogZero);
    let dist = |p: &Point, q: &Point| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let w_mass = pi
        .iter()
        .filter(|(c, _)| {
            let pts = &lp.w_grid.points[c.node];
            let best = pts.iter().map(|p| dist(&p.w, &grad[c.node])).fold(f64::INFINITY, f64::min);
            dist(&pts[c.w].w, &grad[c.node]) <= best + 1e-9 * (1.0 + best)
        })
        .map(|(_, m)| m)
        .sum::<f64>()
        / total;
    StructureReport {
        x_marginal_tv,
        action_mass,
        w_mass,
        x_marginal_pass: x_marginal_tv <= 0.05,
        action_pass: action_mass >= 0.95,
        w_pass: w_mass >= 0.95,
    }
}
