//! Monotone finite-difference Markov-chain approximation of the controlled
//! generator, with absorption at the boundary.
//!
//! For an interior node `x` and axis `k` the chain jumps to `x +- h e_k`
//! with rate `a_kk(x) / (2 h^2)` plus a drift contribution. Flux toward a
//! neighbor outside the domain is dropped from the matrix, so the row sum
//! at boundary-adjacent nodes is the (negative) killing rate.

mod grid;

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::{build_grid, Grid};

use crate::linalg::CsrMatrix;
use crate::problem::{Point, PolicyError, PolicySpec, ProblemSpec};

#[derive(Debug, Error)]
pub enum DiscretizeError {
    #[error("spacing h = {h} does not divide side length {side}")]
    NonconformingSpacing { h: f64, side: f64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// How the drift term enters the stencil.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftScheme {
    /// `m_k^+ / h` toward `+e_k`, `m_k^- / h` toward `-e_k`.
    Upwind,
    /// `+- m_k / (2h)` when `|m_k| h <= a_kk` (rates stay nonnegative),
    /// upwind otherwise. Second order wherever it is central.
    #[default]
    CentralWhenMonotone,
}

/// Jump rates of one node under one action: `rates[axis][0]` toward
/// `-e_axis`, `rates[axis][1]` toward `+e_axis`.
pub type NodeRates = [[f64; 2]; 2];

#[inline]
pub fn rates_at(problem: &ProblemSpec, h: f64, x: &Point, action: usize, scheme: DriftScheme) -> NodeRates {
    let a = problem.diffusion(x);
    let m = problem.drift(x, action);
    let mut r = [[0.0; 2]; 2];
    for k in 0..problem.dim {
        let base = a[k] / (2.0 * h * h);
        let central = scheme == DriftScheme::CentralWhenMonotone && m[k].abs() * h <= a[k];
        if central {
            r[k][0] = base - m[k] / (2.0 * h);
            r[k][1] = base + m[k] / (2.0 * h);
        } else {
            r[k][0] = base + (-m[k]).max(0.0) / h;
            r[k][1] = base + m[k].max(0.0) / h;
        }
    }
    r
}

/// Jump rates of grid node `node` under `action`.
#[inline]
pub fn node_rates(grid: &Grid, problem: &ProblemSpec, node: usize, action: usize, scheme: DriftScheme) -> NodeRates {
    rates_at(problem, grid.h(), &grid.coords(node), action, scheme)
}

/// A sub-Markov generator on the interior nodes (units 1/time) together
/// with the flux dropped at each row.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix {
    pub matrix: CsrMatrix,
    /// Rate of absorption at each node (nonnegative).
    pub killing: Vec<f64>,
}

impl GeneratorMatrix {
    pub fn n(&self) -> usize {
        self.matrix.n_rows()
    }

    /// Builds from a matrix with nonnegative off-diagonals; killing is read
    /// off the row sums.
    pub fn from_matrix(matrix: CsrMatrix) -> Self {
        let killing = matrix.row_sums().into_iter().map(|s| (-s).max(0.0)).collect();
        Self { matrix, killing }
    }

    /// `G - diag(potential)`: extra killing at rate `potential`.
    pub fn with_potential(&self, potential: &[f64]) -> Self {
        let neg: Vec<f64> = potential.iter().map(|p| -p).collect();
        Self { matrix: self.matrix.add_diagonal(&neg), killing: self.killing.iter().zip(potential).map(|(k, p)| k + p).collect() }
    }

    pub fn min_off_diagonal(&self) -> f64 {
        self.matrix.triplets().filter(|(i, j, _)| i != j).map(|(_, _, v)| v).fold(f64::INFINITY, f64::min)
    }

    /// Writes `row col value` lines.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# row col value")?;
        for (i, j, v) in self.matrix.triplets() {
            writeln!(w, "{i} {j} {v:e}")?;
        }
        Ok(())
    }
}

/// Assembles the generator under a stationary policy.
pub fn assemble_generator(
    grid: &Grid,
    problem: &ProblemSpec,
    policy: &PolicySpec,
    scheme: DriftScheme,
) -> Result<GeneratorMatrix, DiscretizeError> {
    policy.check(grid.n(), problem.num_actions())?;
    Ok(assemble_with(grid, problem, scheme, |i| policy.action(i)))
}

/// Assembles the generator with the same action at every node.
pub fn assemble_action(grid: &Grid, problem: &ProblemSpec, action: usize, scheme: DriftScheme) -> GeneratorMatrix {
    assert!(action < problem.num_actions(), "action {action} out of range");
    assemble_with(grid, problem, scheme, |_| action)
}

fn assemble_with(grid: &Grid, problem: &ProblemSpec, scheme: DriftScheme, action_of: impl Fn(usize) -> usize) -> GeneratorMatrix {
    let n = grid.n();
    let mut triplets = Vec::with_capacity(n * (2 * grid.dim() + 1));
    let mut killing = vec![0.0; n];
    for i in 0..n {
        let r = node_rates(grid, problem, i, action_of(i), scheme);
        let mut out = 0.0;
        for axis in 0..grid.dim() {
            for (side, dir) in [(0usize, -1i32), (1, 1)] {
                let rate = r[axis][side];
                out += rate;
                match grid.neighbor(i, axis, dir) {
                    Some(j) => {
                        if rate != 0.0 {
                            triplets.push((i, j, rate));
                        }
                    }
                    None => killing[i] += rate,
                }
            }
        }
        triplets.push((i, i, -out));
    }
    GeneratorMatrix { matrix: CsrMatrix::from_triplets(n, n, &triplets), killing }
}

/// Boundary rule for [`discrete_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extension {
    /// The field tends to `-inf` at the boundary (a logarithm of a function
    /// vanishing there); one-sided interior differences are used instead.
    LogZero,
    /// The field takes this value on the boundary.
    Value(f64),
}

/// Central differences where both neighbors are interior, otherwise
/// according to `extension`.
pub fn discrete_gradient(grid: &Grid, field: &[f64], extension: Extension) -> Vec<Point> {
    assert_eq!(field.len(), grid.n());
    let h = grid.h();
    (0..grid.n())
        .map(|i| {
            let mut g = [0.0; 2];
            for (k, gk) in g.iter_mut().enumerate().take(grid.dim()) {
                let minus = grid.neighbor(i, k, -1).map(|j| field[j]);
                let plus = grid.neighbor(i, k, 1).map(|j| field[j]);
                *gk = match (minus, plus, extension) {
                    (Some(a), Some(b), _) => (b - a) / (2.0 * h),
                    (None, Some(b), Extension::LogZero) => (b - field[i]) / h,
                    (Some(a), None, Extension::LogZero) => (field[i] - a) / h,
                    (None, None, Extension::LogZero) => 0.0,
                    (a, b, Extension::Value(v)) => (b.unwrap_or(v) - a.unwrap_or(v)) / (2.0 * h),
                };
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{bang_bang, bm_interval, drift_interval, rect_2d};
    use proptest::prelude::*;

    #[test]
    fn brownian_quarter_grid_stencil() {
        let p = bm_interval();
        let g = build_grid(&p, 0.25).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::Upwind);
        let m = gen.matrix.to_dense();
        for i in 0..3 {
            assert_eq!(m[(i, i)], -16.0);
        }
        assert_eq!(m[(0, 1)], 8.0);
        assert_eq!(m[(1, 0)], 8.0);
        assert_eq!(m[(1, 2)], 8.0);
        let sums = gen.matrix.row_sums();
        assert_eq!(sums, vec![-8.0, 0.0, -8.0]);
        assert_eq!(gen.killing, vec![8.0, 0.0, 8.0]);
    }

    #[test]
    fn drift_interval_upwind_stencil() {
        let p = drift_interval(1.0);
        let g = build_grid(&p, 0.25).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::Upwind);
        // node 0.5 is index 1
        assert_eq!(gen.matrix.get(1, 2), 12.0);
        assert_eq!(gen.matrix.get(1, 0), 8.0);
        assert_eq!(gen.matrix.get(1, 1), -20.0);
    }

    #[test]
    fn drift_interval_central_stencil() {
        let p = drift_interval(1.0);
        let g = build_grid(&p, 0.25).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::CentralWhenMonotone);
        assert_eq!(gen.matrix.get(1, 2), 10.0);
        assert_eq!(gen.matrix.get(1, 0), 6.0);
        assert_eq!(gen.matrix.get(1, 1), -16.0);
        // large drift falls back to upwind to keep rates nonnegative
        let steep = drift_interval(10.0);
        let gen = assemble_action(&g, &steep, 0, DriftScheme::CentralWhenMonotone);
        assert_eq!(gen.matrix.get(1, 0), 8.0);
        assert_eq!(gen.matrix.get(1, 2), 48.0);
    }

    #[test]
    fn zero_drift_policy_independent() {
        let p = bm_interval();
        let g = build_grid(&p, 1.0 / 16.0).unwrap();
        let a = assemble_generator(&g, &p, &PolicySpec::constant(g.n(), 0), DriftScheme::default()).unwrap();
        let b = assemble_action(&g, &p, 0, DriftScheme::Upwind);
        assert_eq!(a, b);
    }

    #[test]
    fn policy_length_checked() {
        let p = bang_bang();
        let g = build_grid(&p, 0.25).unwrap();
        assert!(assemble_generator(&g, &p, &PolicySpec::constant(3, 0), DriftScheme::default()).is_err());
        assert!(assemble_generator(&g, &p, &PolicySpec::constant(g.n(), 2), DriftScheme::default()).is_err());
    }

    fn check_structure(g: &Grid, gen: &GeneratorMatrix) {
        assert!(gen.min_off_diagonal() >= 0.0);
        let sums = gen.matrix.row_sums();
        for i in 0..g.n() {
            assert!(gen.matrix.row_nnz(i) <= 2 * g.dim() + 1);
            let scale = -gen.matrix.get(i, i);
            assert!((sums[i] + gen.killing[i]).abs() <= 1e-14 * scale);
            if g.is_boundary_adjacent(i) {
                assert!(sums[i] < 0.0);
            } else {
                assert_eq!(gen.killing[i], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_and_conservative(drift in -40.0f64..40.0, pick in 0usize..2, upwind in any::<bool>()) {
            let scheme = if upwind { DriftScheme::Upwind } else { DriftScheme::CentralWhenMonotone };
            let p = if pick == 0 { drift_interval(drift) } else { rect_2d(drift) };
            let g = build_grid(&p, 1.0 / 8.0).unwrap();
            for a in 0..p.num_actions() {
                check_structure(&g, &assemble_action(&g, &p, a, scheme));
            }
        }
    }

    #[test]
    fn consistency_on_quadratic() {
        // (G f)(x) for f = x^2 tends to 1 (half of f'' = 2)
        let p = bm_interval();
        let mut errs = Vec::new();
        for m in [16usize, 32, 64] {
            let g = build_grid(&p, 1.0 / m as f64).unwrap();
            let gen = assemble_action(&g, &p, 0, DriftScheme::default());
            // use the boundary values of f in the consistency check
            let f: Vec<f64> = g.all_coords().iter().map(|x| x[0] * x[0]).collect();
            let mut gf = gen.matrix.mul_vec(&f);
            let h = g.h();
            gf[g.n() - 1] += 1.0 / (2.0 * h * h); // f(1) = 1 enters through the dropped flux
            let err = gf.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
            errs.push(err.max(1e-300));
        }
        // f = x^2 is reproduced exactly by the central second difference
        assert!(errs.iter().all(|e| *e < 1e-9));
    }

    #[test]
    fn consistency_order_on_quartic() {
        // f = x^4 has nonzero truncation error: (G f) - 6x^2 = h^2 (quarter of f'''' h^2/12 ... ) = O(h^2)
        let p = bm_interval();
        let mut errs = Vec::new();
        let hs = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0];
        for &h in &hs {
            let g = build_grid(&p, h).unwrap();
            let gen = assemble_action(&g, &p, 0, DriftScheme::default());
            let f: Vec<f64> = g.all_coords().iter().map(|x| x[0].powi(4)).collect();
            let mut gf = gen.matrix.mul_vec(&f);
            gf[g.n() - 1] += 1.0 / (2.0 * h * h);
            let err = gf.iter().zip(g.all_coords()).map(|(v, x)| (v - 6.0 * x[0] * x[0]).abs()).fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order}");
        }
    }

    #[test]
    fn gradient_cases() {
        let p = bm_interval();
        let g = build_grid(&p, 1.0 / 8.0).unwrap();
        let c = vec![3.0; g.n()];
        assert!(discrete_gradient(&g, &c, Extension::LogZero).iter().all(|v| v[0] == 0.0));
        let lin: Vec<f64> = g.all_coords().iter().map(|x| x[0]).collect();
        let grad = discrete_gradient(&g, &lin, Extension::LogZero);
        for (i, v) in grad.iter().enumerate() {
            assert!((v[0] - 1.0).abs() < 1e-12, "node {i}: {}", v[0]);
        }
        let grad = discrete_gradient(&g, &lin, Extension::Value(0.0));
        assert!((grad[3][0] - 1.0).abs() < 1e-12);
        assert!((grad[0][0] - 1.0).abs() < 1e-12); // f(0) = 0 matches the line

        let g = build_grid(&p, 1.0 / 64.0).unwrap();
        let psi: Vec<f64> = g.all_coords().iter().map(|x| (std::f64::consts::PI * x[0]).sin().ln()).collect();
        let grad = discrete_gradient(&g, &psi, Extension::LogZero);
        let mid = g.nearest_node(&[0.5, 0.0]);
        assert!(grad[mid][0].abs() < 1e-6);
    }

    #[test]
    fn triplet_export() {
        let p = bm_interval();
        let g = build_grid(&p, 0.25).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::default());
        let mut buf = Vec::new();
        gen.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 7);
        assert!(text.contains("0 1 8e0"));
    }
}
