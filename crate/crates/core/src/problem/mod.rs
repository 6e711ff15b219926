//! Continuous problem instances: a box domain, a diagonal diffusion field,
//! and a drift indexed by a finite action set.

mod catalog;
mod expr;

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{
    bang_bang, bm_interval, builtin_catalog, drift_interval, lookup, rect_2d, BANG_BANG, BM_INTERVAL, DRIFT_INTERVAL, RECT_2D,
};
pub use expr::{Expr, ExprError};

/// Largest supported action set.
pub const MAX_ACTIONS: usize = 64;

/// A point of the (at most two-dimensional) state space. Unused
/// coordinates are zero.
pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension must be 1 or 2, got {0}")]
    InvalidDimension(usize),
    #[error("axis {axis}: bounds [{lo}, {hi}] do not have positive length")]
    InvalidDomain { axis: usize, lo: f64, hi: f64 },
    #[error("expected {expected} {what}, found {found}")]
    ShapeMismatch { what: &'static str, expected: usize, found: usize },
    #[error("action set must contain between 1 and {MAX_ACTIONS} actions, got {0}")]
    ActionCount(usize),
    #[error("ellipticity floor c0 must be positive, got {0}")]
    NonPositiveFloor(f64),
    #[error("ellipticity violated at {at:?}: |sigma^T y|^2 / |y|^2 = {value} < c0 = {c0}")]
    EllipticityViolation { at: Point, value: f64, c0: f64 },
    #[error("{what} is not finite at {at:?}")]
    NonFiniteCoefficient { what: String, at: Point },
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("unknown problem {0:?}")]
    UnknownProblem(String),
    #[error("failed to read problem file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed problem file: {0}")]
    Json(#[from] serde_json::Error),
}

/// A controlled diffusion `dX = m(X, u) dt + sigma(X) dW` on an
/// axis-aligned box, in the layout of the JSON problem files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub dim: usize,
    pub bounds: Vec<[f64; 2]>,
    pub actions: Vec<String>,
    /// `drift[k][i]`: coordinate `i` of the drift under action `k`.
    pub drift: Vec<Vec<Expr>>,
    /// Diagonal entries of sigma, one per coordinate.
    pub sigma: Vec<Expr>,
    pub c0: f64,
}

impl ProblemSpec {
    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        let spec: ProblemSpec = serde_json::from_str(text)?;
        spec.check_shape()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProblemError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem specs always serialize")
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn side_length(&self, axis: usize) -> f64 {
        self.bounds[axis][1] - self.bounds[axis][0]
    }

    pub fn min_side(&self) -> f64 {
        (0..self.dim).map(|k| self.side_length(k)).fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self) -> Point {
        let mut c = [0.0; 2];
        for (k, ck) in c.iter_mut().enumerate().take(self.dim) {
            *ck = 0.5 * (self.bounds[k][0] + self.bounds[k][1]);
        }
        c
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|k| x[k] > self.bounds[k][0] && x[k] < self.bounds[k][1])
    }

    /// Euclidean distance to the boundary of the box, for interior points.
    pub fn dist_to_boundary(&self, x: &Point) -> f64 {
        (0..self.dim).map(|k| (x[k] - self.bounds[k][0]).min(self.bounds[k][1] - x[k])).fold(f64::INFINITY, f64::min)
    }

    #[inline]
    pub fn drift(&self, x: &Point, action: usize) -> Point {
        let row = &self.drift[action];
        let mut m = [0.0; 2];
        for k in 0..self.dim {
            m[k] = row[k].eval(&x[..self.dim]);
        }
        m
    }

    /// Diagonal of sigma at `x`.
    #[inline]
    pub fn sigma(&self, x: &Point) -> Point {
        let mut s = [0.0; 2];
        for k in 0..self.dim {
            s[k] = self.sigma[k].eval(&x[..self.dim]);
        }
        s
    }

    /// Diagonal of `a = sigma sigma^T` at `x`.
    #[inline]
    pub fn diffusion(&self, x: &Point) -> Point {
        let s = self.sigma(x);
        [s[0] * s[0], s[1] * s[1]]
    }

    /// A copy with every sigma entry multiplied by `factor`.
    pub fn with_sigma_scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.sigma = self.sigma.iter().map(|s| Expr::parse(&format!("({factor:?}) * ({s})")).expect("scaled sigma parses")).collect();
        out.c0 *= factor * factor;
        out
    }

    /// A copy whose box is grown by `pad` on both sides of every axis.
    pub fn enlarged(&self, pad: f64) -> Self {
        let mut out = self.clone();
        for b in out.bounds.iter_mut() {
            b[0] -= pad;
            b[1] += pad;
        }
        out
    }

    fn check_shape(&self) -> Result<(), ProblemError> {
        if !(1..=2).contains(&self.dim) {
            return Err(ProblemError::InvalidDimension(self.dim));
        }
        if self.bounds.len() != self.dim {
            return Err(ProblemError::ShapeMismatch { what: "bounds", expected: self.dim, found: self.bounds.len() });
        }
        for (axis, b) in self.bounds.iter().enumerate() {
            if !(b[0].is_finite() && b[1].is_finite() && b[1] > b[0]) {
                return Err(ProblemError::InvalidDomain { axis, lo: b[0], hi: b[1] });
            }
        }
        let k = self.actions.len();
        if k == 0 || k > MAX_ACTIONS {
            return Err(ProblemError::ActionCount(k));
        }
        if self.drift.len() != k {
            return Err(ProblemError::ShapeMismatch { what: "drift rows (one per action)", expected: k, found: self.drift.len() });
        }
        for row in &self.drift {
            if row.len() != self.dim {
                return Err(ProblemError::ShapeMismatch { what: "drift coordinates", expected: self.dim, found: row.len() });
            }
            for e in row {
                e.check_dim(self.dim)?;
            }
        }
        if self.sigma.len() != self.dim {
            return Err(ProblemError::ShapeMismatch { what: "sigma entries", expected: self.dim, found: self.sigma.len() });
        }
        for e in &self.sigma {
            e.check_dim(self.dim)?;
        }
        if !(self.c0 > 0.0 && self.c0.is_finite()) {
            return Err(ProblemError::NonPositiveFloor(self.c0));
        }
        Ok(())
    }
}

/// Points per axis of the validation lattice (closed box, endpoints
/// included). Matches the finest default spacing of each dimension.
fn lattice_points(dim: usize) -> usize {
    if dim == 1 {
        257
    } else {
        129
    }
}

/// A problem that passed validation, annotated with sampled constants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedProblem {
    pub spec: ProblemSpec,
    /// Minimum of `|sigma^T y|^2 / |y|^2` over the validation lattice.
    pub sampled_floor: f64,
    /// Largest difference quotient of any coefficient between adjacent
    /// lattice points.
    pub lipschitz_estimate: f64,
}

impl Deref for ValidatedProblem {
    type Target = ProblemSpec;
    fn deref(&self) -> &ProblemSpec {
        &self.spec
    }
}

impl AsRef<ProblemSpec> for ProblemSpec {
    fn as_ref(&self) -> &ProblemSpec {
        self
    }
}

impl AsRef<ProblemSpec> for ValidatedProblem {
    fn as_ref(&self) -> &ProblemSpec {
        &self.spec
    }
}

/// Checks the invariants of a problem on the validation lattice and
/// returns it with the sampled ellipticity floor and Lipschitz estimate.
/// Validating an already validated problem yields the same annotation.
pub fn validate_problem(spec: impl AsRef<ProblemSpec>) -> Result<ValidatedProblem, ProblemError> {
    let spec = spec.as_ref();
    spec.check_shape()?;
    let dim = spec.dim;
    let m = lattice_points(dim);
    let steps: Vec<f64> = (0..dim).map(|k| spec.side_length(k) / (m - 1) as f64).collect();
    let point = |idx: [usize; 2]| -> Point {
        let mut p = [0.0; 2];
        for k in 0..dim {
            p[k] = spec.bounds[k][0] + idx[k] as f64 * steps[k];
        }
        p
    };
    // every coefficient as (label, value at a point)
    let n_coeff = spec.num_actions() * dim + dim;
    let eval_all = |p: &Point, out: &mut Vec<f64>| {
        out.clear();
        for a in 0..spec.num_actions() {
            out.extend_from_slice(&spec.drift(p, a)[..dim]);
        }
        out.extend_from_slice(&spec.sigma(p)[..dim]);
    };
    let label = |c: usize| -> String {
        let drift_len = spec.num_actions() * dim;
        if c < drift_len {
            format!("drift[{}][{}]", c / dim, c % dim)
        } else {
            format!("sigma[{}]", c - drift_len)
        }
    };

    let counts = [m, if dim == 2 { m } else { 1 }];
    let mut floor = f64::INFINITY;
    let mut lip = 0.0_f64;
    let mut here = Vec::with_capacity(n_coeff);
    let mut there = Vec::with_capacity(n_coeff);
    for j in 0..counts[1] {
        for i in 0..counts[0] {
            let p = point([i, j]);
            eval_all(&p, &mut here);
            if let Some(c) = here.iter().position(|v| !v.is_finite()) {
                return Err(ProblemError::NonFiniteCoefficient { what: label(c), at: p });
            }
            let s = spec.sigma(&p);
            let local = (0..dim).map(|k| s[k] * s[k]).fold(f64::INFINITY, f64::min);
            if local < spec.c0 * (1.0 - 1e-12) {
                return Err(ProblemError::EllipticityViolation { at: p, value: local, c0: spec.c0 });
            }
            floor = floor.min(local);
            for k in 0..dim {
                let mut next = [i, j];
                next[k] += 1;
                if next[k] >= counts[k] {
                    continue;
                }
                eval_all(&point(next), &mut there);
                for (a, b) in here.iter().zip(&there) {
                    if b.is_finite() {
                        lip = lip.max((b - a).abs() / steps[k]);
                    }
                }
            }
        }
    }
    Ok(ValidatedProblem { spec: spec.clone(), sampled_floor: floor, lipschitz_estimate: lip })
}

/// A stationary Markov control: one action index per interior grid node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PolicySpec {
    pub assignment: Vec<usize>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("policy covers {found} nodes, grid has {expected}")]
    WrongLength { expected: usize, found: usize },
    #[error("node {node}: action index {action} out of range (K = {num_actions})")]
    ActionOutOfRange { node: usize, action: usize, num_actions: usize },
}

impl PolicySpec {
    pub fn constant(n: usize, action: usize) -> Self {
        Self { assignment: vec![action; n] }
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    #[inline]
    pub fn action(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn check(&self, n: usize, num_actions: usize) -> Result<(), PolicyError> {
        if self.assignment.len() != n {
            return Err(PolicyError::WrongLength { expected: n, found: self.assignment.len() });
        }
        for (node, &action) in self.assignment.iter().enumerate() {
            if action >= num_actions {
                return Err(PolicyError::ActionOutOfRange { node, action, num_actions });
            }
        }
        Ok(())
    }

    /// Number of nodes where the two policies differ.
    pub fn changes_from(&self, other: &PolicySpec) -> usize {
        self.assignment.iter().zip(&other.assignment).filter(|(a, b)| a != b).count()
    }
}
