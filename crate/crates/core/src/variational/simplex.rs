//! Dense two-phase primal simplex with Bland's rule, for
//! `min c^T x  s.t.  A x = b, x >= 0`.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("linear program is infeasible (phase-one optimum {0:e})")]
    Infeasible(f64),
    #[error("linear program is unbounded (column {0})")]
    Unbounded(usize),
    #[error("simplex did not finish within {0} pivots")]
    IterationLimit(usize),
    #[error("{0} variables exceed the limit of {MAX_VARIABLES}")]
    TooLarge(usize),
}

pub const MAX_VARIABLES: usize = 50_000;

/// Equality-form LP with sparse columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinearProgram {
    pub n_rows: usize,
    /// `(row, value)` entries of each column.
    pub columns: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl LinearProgram {
    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    /// `A x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_rows];
        for (col, xj) in self.columns.iter().zip(x) {
            if *xj != 0.0 {
                for &(r, v) in col {
                    out[r] += v * xj;
                }
            }
        }
        out
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// `max |A x - b|`
    pub fn feasibility_residual(&self, x: &[f64]) -> f64 {
        let ax = self.apply(x);
        let eq = ax.iter().zip(&self.b).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        let neg = x.iter().fold(0.0_f64, |m, v| m.max(-v));
        eq.max(neg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    /// Row prices `y` with `c - A^T y >= 0` at the optimum. Rows found to be
    /// redundant get price zero.
    pub duals: Vec<f64>,
    pub basis: Vec<usize>,
    pub redundant_rows: Vec<usize>,
    pub pivots: usize,
    pub feasibility_residual: f64,
    /// `max_j |x_j (c_j - A_j^T y)|` together with the most negative reduced
    /// cost (dual infeasibility).
    pub complementary_slackness: f64,
    pub dual_infeasibility: f64,
}

struct Tableau {
    m: usize,
    width: usize,
    /// `m + 1` rows: constraint rows, then the objective row. Last column is
    /// the right-hand side.
    t: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.width - 1)
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let w = self.width;
        let p = self.at(row, col);
        for c in 0..w {
            self.t[row * w + c] /= p;
        }
        let (before, rest) = self.t.split_at_mut(row * w);
        let (pivot_row, after) = rest.split_at_mut(w);
        for r in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = r[col];
            if f != 0.0 {
                for (x, y) in r.iter_mut().zip(pivot_row.iter()) {
                    *x -= f * y;
                }
                r[col] = 0.0;
            }
        }
        self.basis[row] = col;
    }

    /// Runs Bland's rule on the objective row over columns `< allowed`.
    fn optimize(&mut self, allowed: usize, tol: f64, pivots: &mut usize, cap: usize) -> Result<(), LpError> {
        let m = self.m;
        loop {
            let entering = (0..allowed).find(|&c| self.at(m, c) < -tol);
            let Some(col) = entering else { return Ok(()) };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..m {
                let a = self.at(r, col);
                if a > tol {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - tol * (1.0 + lratio.abs())
                                || (ratio <= lratio + tol * (1.0 + lratio.abs()) && self.basis[r] < self.basis[lr])
                            {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else { return Err(LpError::Unbounded(col)) };
            self.pivot(row, col);
            *pivots += 1;
            if *pivots > cap {
                return Err(LpError::IterationLimit(cap));
            }
        }
    }
}

/// Solves the LP; `tol` is the pivoting/optimality tolerance (1e-10 is a
/// good default for well-scaled problems).
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<LpSolution, LpError> {
    let (m, n) = (lp.n_rows, lp.n_cols());
    if n > MAX_VARIABLES {
        return Err(LpError::TooLarge(n));
    }
    // columns: n structural, m artificial, rhs
    let width = n + m + 1;
    let mut t = vec![0.0; (m + 1) * width];
    let sign: Vec<f64> = lp.b.iter().map(|b| if *b < 0.0 { -1.0 } else { 1.0 }).collect();
    for (j, col) in lp.columns.iter().enumerate() {
        for &(r, v) in col {
            t[r * width + j] += sign[r] * v;
        }
    }
    for r in 0..m {
        t[r * width + n + r] = 1.0;
        t[r * width + width - 1] = sign[r] * lp.b[r];
    }
    // phase one objective: sum of artificials, expressed in nonbasic terms
    for r in 0..m {
        for c in 0..width {
            if c < n || c == width - 1 {
                t[m * width + c] -= t[r * width + c];
            }
        }
    }
    let mut tab = Tableau { m, width, t, basis: (n..n + m).collect() };
    let cap = 50 * (n + m) + 1000;
    let mut pivots = 0;
    tab.optimize(n, tol, &mut pivots, cap)?;
    let phase_one = -tab.rhs(m);
    let b_scale = lp.b.iter().fold(1.0_f64, |a, b| a.max(b.abs()));
    if phase_one > 1e3 * tol * b_scale {
        return Err(LpError::Infeasible(phase_one));
    }

    // drive artificials out of the basis; rows where that is impossible are
    // redundant
    let mut redundant = Vec::new();
    for r in 0..m {
        if tab.basis[r] >= n {
            let scale = (0..n).fold(0.0_f64, |a, c| a.max(tab.at(r, c).abs()));
            match (0..n).find(|&c| tab.at(r, c).abs() > 1e-9 * scale.max(1.0) && scale > tol) {
                Some(c) => {
                    tab.pivot(r, c);
                    pivots += 1;
                }
                None => redundant.push(r),
            }
        }
    }

    // phase two objective row
    for c in 0..width {
        tab.t[m * width + c] = if c < n { lp.c[c] } else { 0.0 };
    }
    for r in 0..m {
        let bcol = tab.basis[r];
        let cb = if bcol < n { lp.c[bcol] } else { 0.0 };
        if cb != 0.0 {
            for c in 0..width {
                tab.t[m * width + c] -= cb * tab.t[r * width + c];
            }
        }
    }
    tab.optimize(n, tol, &mut pivots, cap)?;

    let mut x = vec![0.0; n];
    for r in 0..m {
        if tab.basis[r] < n {
            x[tab.basis[r]] = tab.rhs(r).max(0.0);
        }
    }
    // duals from the artificial columns of the final objective row:
    // reduced cost of artificial r is 0 - y_r * sign_r
    let mut duals: Vec<f64> = (0..m).map(|r| -tab.at(m, n + r) * sign[r]).collect();
    for &r in &redundant {
        duals[r] = 0.0;
    }
    let value = lp.objective(&x);
    let feasibility_residual = lp.feasibility_residual(&x);
    let mut cs = 0.0_f64;
    let mut dual_inf = 0.0_f64;
    for (j, col) in lp.columns.iter().enumerate() {
        let d = lp.c[j] - col.iter().map(|&(r, v)| v * duals[r]).sum::<f64>();
        cs = cs.max((x[j] * d).abs());
        dual_inf = dual_inf.max(-d);
    }
    let basis = tab.basis.clone();
    Ok(LpSolution {
        x,
        value,
        duals,
        basis,
        redundant_rows: redundant,
        pivots,
        feasibility_residual,
        complementary_slackness: cs,
        dual_infeasibility: dual_inf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(rows: usize, cols: Vec<Vec<(usize, f64)>>, b: Vec<f64>, c: Vec<f64>) -> LinearProgram {
        LinearProgram { n_rows: rows, columns: cols, b, c }
    }

    #[test]
    fn single_variable() {
        let s = solve_lp(&lp(1, vec![vec![(0, 1.0)]], vec![1.0], vec![1.0]), 1e-10).unwrap();
        assert!((s.value - 1.0).abs() < 1e-14);
        assert!((s.duals[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn small_textbook_problem() {
        // min -x - y  s.t.  x + 2y + s1 = 4,  3x + y + s2 = 6
        let p = lp(
            2,
            vec![vec![(0, 1.0), (1, 3.0)], vec![(0, 2.0), (1, 1.0)], vec![(0, 1.0)], vec![(1, 1.0)]],
            vec![4.0, 6.0],
            vec![-1.0, -1.0, 0.0, 0.0],
        );
        let s = solve_lp(&p, 1e-10).unwrap();
        assert!((s.value + 2.8).abs() < 1e-12, "{}", s.value);
        assert!((s.x[0] - 1.6).abs() < 1e-12 && (s.x[1] - 1.2).abs() < 1e-12);
        assert!(s.complementary_slackness < 1e-12 && s.dual_infeasibility < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        // x = -1, x >= 0
        assert!(matches!(solve_lp(&lp(1, vec![vec![(0, 1.0)]], vec![-1.0], vec![0.0]), 1e-10), Err(LpError::Infeasible(_))));
        // min -x  s.t.  x - y = 0
        let p = lp(1, vec![vec![(0, 1.0)], vec![(0, -1.0)]], vec![0.0], vec![-1.0, 0.0]);
        assert!(matches!(solve_lp(&p, 1e-10), Err(LpError::Unbounded(_))));
    }

    #[test]
    fn redundant_rows_are_dropped() {
        // x + y = 1 twice
        let p = lp(2, vec![vec![(0, 1.0), (1, 1.0)], vec![(0, 1.0), (1, 1.0)]], vec![1.0, 1.0], vec![2.0, 1.0]);
        let s = solve_lp(&p, 1e-10).unwrap();
        assert!((s.value - 1.0).abs() < 1e-14);
        assert_eq!(s.redundant_rows.len(), 1);
    }

    #[test]
    fn degenerate_cycling_example_terminates() {
        // Beale's example, which cycles under the largest-coefficient rule
        let cols = vec![
            vec![(0, 0.25), (1, 0.5)],
            vec![(0, -60.0), (1, -90.0)],
            vec![(0, -1.0 / 25.0), (1, -1.0 / 50.0), (2, 1.0)],
            vec![(0, 9.0), (1, 3.0)],
            vec![(0, 1.0)],
            vec![(1, 1.0)],
            vec![(2, 1.0)],
        ];
        let p = lp(3, cols, vec![0.0, 0.0, 1.0], vec![-0.75, 150.0, -0.02, 6.0, 0.0, 0.0, 0.0]);
        let s = solve_lp(&p, 1e-12).unwrap();
        assert!((s.value + 0.05).abs() < 1e-12, "{}", s.value);
    }

    proptest! {
        #[test]
        fn random_lps_satisfy_certificates(seed in any::<u64>(), m in 1usize..6, n in 1usize..12) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // feasible by construction: b = A x0 with x0 >= 0; bounded since c >= 0
            let cols: Vec<Vec<(usize, f64)>> = (0..n).map(|_| (0..m).map(|r| (r, rng.random_range(-1.0..1.0))).collect()).collect();
            let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut p = LinearProgram { n_rows: m, columns: cols, b: vec![], c };
            p.b = p.apply(&x0);
            let s = solve_lp(&p, 1e-11).unwrap();
            prop_assert!(s.feasibility_residual < 1e-9);
            prop_assert!(s.value <= p.objective(&x0) + 1e-9);
            prop_assert!(s.complementary_slackness < 1e-8);
            prop_assert!(s.dual_infeasibility < 1e-8);
        }
    }
}
