//! Principal (Perron) eigenpair of a matrix with nonnegative off-diagonal
//! entries, with Collatz–Wielandt certificates.
//!
//! Sign convention: for a killed generator `G` the principal eigenvalue is
//! `lambda > 0` with `G psi = -lambda psi`.

use std::io::{self, Write};

use serde::Serialize;
use thiserror::Error;

use crate::discretize::{GeneratorMatrix, Grid};
use crate::linalg::{normalize_max, normalize_sum, BandLu, CsrMatrix, SingularMatrix};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("matrix is reducible; the principal eigenvector need not be positive")]
    Reducible,
    #[error("no convergence after {iterations} iterations (interval width {width:e})")]
    NoConvergence { iterations: usize, width: f64 },
    #[error("{side} eigenvector has a nonpositive entry at node {node}")]
    NonPositiveEigenvector { side: &'static str, node: usize },
    #[error(transparent)]
    Singular(#[from] SingularMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Absolute tolerance on the eigenvalue bracket and residuals, scaled by
    /// `max(1, |lambda|)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigenPair {
    pub lambda: f64,
    /// Right eigenvector, maximum one.
    pub psi: Vec<f64>,
    /// Left eigenvector, sum one.
    pub phi: Vec<f64>,
    /// `||G psi + lambda psi||_inf`
    pub residual: f64,
    /// `||G^T phi + lambda phi||_inf`
    pub residual_left: f64,
    pub cw_interval: [f64; 2],
    pub iterations: usize,
}

impl EigenPair {
    pub fn n(&self) -> usize {
        self.psi.len()
    }

    /// `log psi`
    pub fn log_psi(&self) -> Vec<f64> {
        self.psi.iter().map(|p| p.ln()).collect()
    }

    /// Writes `x1[,x2],psi,phi` rows.
    pub fn write_csv<W: Write>(&self, grid: &Grid, mut w: W) -> io::Result<()> {
        let header = if grid.dim() == 1 { "x1" } else { "x1,x2" };
        writeln!(w, "{header},psi,phi")?;
        for i in 0..self.n() {
            let x = grid.coords(i);
            let coords = if grid.dim() == 1 { format!("{}", x[0]) } else { format!("{},{}", x[0], x[1]) };
            writeln!(w, "{coords},{:e},{:e}", self.psi[i], self.phi[i])?;
        }
        Ok(())
    }
}

/// Row sums by compensated summation, so that they are accurate for the
/// stored entries even when the diagonal nearly cancels the off-diagonals.
pub(crate) fn exact_row_sums(m: &CsrMatrix) -> Vec<f64> {
    (0..m.n_rows())
        .map(|i| {
            let (mut s, mut c) = (0.0_f64, 0.0_f64);
            for (_, v) in m.row(i) {
                let t = s + v;
                c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
                s = t;
            }
            s + c
        })
        .collect()
}

/// `(M psi)(i)` computed as `sum_j M_ij (psi_j - psi_i) + r_i psi_i`, which
/// avoids the cancellation of the direct product on fine grids.
#[inline]
pub(crate) fn apply_row(m: &CsrMatrix, row_sums: &[f64], psi: &[f64], i: usize) -> f64 {
    let pi = psi[i];
    let mut s = row_sums[i] * pi;
    for (j, v) in m.row(i) {
        if j != i {
            s += v * (psi[j] - pi);
        }
    }
    s
}

fn bracket_of(m: &CsrMatrix, row_sums: &[f64], psi: &[f64]) -> [f64; 2] {
    (0..m.n_rows())
        .map(|i| -apply_row(m, row_sums, psi, i) / psi[i])
        .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], r| [lo.min(r), hi.max(r)])
}

/// Collatz–Wielandt interval `[min, max]` of `-(G psi)/psi` for a positive
/// test vector; it always contains the principal eigenvalue.
pub fn cw_bounds(g: &CsrMatrix, psi: &[f64]) -> [f64; 2] {
    assert_eq!(psi.len(), g.n_rows());
    assert!(psi.iter().all(|p| *p > 0.0), "test vector must be positive");
    let sums = exact_row_sums(g);
    bracket_of(g, &sums, psi)
}

/// `||M psi + lambda psi||_inf`
pub fn eigen_residual(m: &CsrMatrix, lambda: f64, psi: &[f64]) -> f64 {
    let sums = exact_row_sums(m);
    (0..m.n_rows()).map(|i| (apply_row(m, &sums, psi, i) + lambda * psi[i]).abs()).fold(0.0, f64::max)
}

/// Principal eigenpair of a killed generator.
pub fn principal_eigenpair(g: &GeneratorMatrix, tol: f64) -> Result<EigenPair, EigenError> {
    principal_eigenpair_with(&g.matrix, EigenOptions::with_tol(tol))
}

/// Principal eigenpair of any irreducible matrix with nonnegative
/// off-diagonal entries (killed, conservative, or with a potential).
pub fn principal_eigenpair_with(m: &CsrMatrix, opts: EigenOptions) -> Result<EigenPair, EigenError> {
    if !m.is_irreducible() {
        return Err(EigenError::Reducible);
    }
    let (lambda, psi, [lo, hi], it_r) = perron_vector(m, opts, "right")?;
    let mt = m.transpose();
    let (_, mut phi, _, it_l) = perron_vector(&mt, opts, "left")?;
    normalize_sum(&mut phi);
    let residual = eigen_residual(m, lambda, &psi);
    let residual_left = eigen_residual(&mt, lambda, &phi);
    Ok(EigenPair { lambda, psi, phi, residual, residual_left, cw_interval: [lo, hi], iterations: it_r + it_l })
}

/// Right Perron vector of `m` by inverse iteration whose shift tracks the
/// lower Collatz–Wielandt bound (Noda iteration). The first step uses the
/// safe shift `1 + max |diag|`; later shifts stay just below the lower
/// bound, so every shifted matrix is a nonsingular M-matrix and each
/// iterate stays positive. Convergence is quadratic.
fn perron_vector(m: &CsrMatrix, opts: EigenOptions, side: &'static str) -> Result<(f64, Vec<f64>, [f64; 2], usize), EigenError> {
    let n = m.n_rows();
    let sums = exact_row_sums(m);
    let diag_scale = m.diagonal().iter().fold(0.0_f64, |a, d| a.max(d.abs()));
    let gap_floor = 1e-9 * (1.0 + diag_scale);
    let mut x = vec![1.0; n];
    let bracket = |x: &[f64]| bracket_of(m, &sums, x);

    let neg = m.map(|_, _, v| -v);
    // first step: (s I - M) y = x with the safe shift s = 1 + max |diag|,
    // i.e. mu = -s in the solve ((-M) - mu I) y = x
    let mut mu = -(1.0 + diag_scale);
    let mut polish = 0;
    for it in 1..=opts.max_iter {
        let lu = BandLu::factor_shifted(&neg, -mu)?;
        let mut y = x.clone();
        lu.solve_in_place(&mut y);
        if let Some(node) = y.iter().position(|v| !(*v > 0.0)) {
            // only roundoff in a nearly singular solve can do this; back
            // off to a wider gap and retry
            if it == opts.max_iter {
                return Err(EigenError::NonPositiveEigenvector { side, node });
            }
            mu = bracket(&x)[0] - 1e3 * gap_floor;
            continue;
        }
        normalize_max(&mut y);
        x = y;
        let [lo, hi] = bracket(&x);
        let lam = 0.5 * (lo + hi);
        if hi - lo <= opts.tol * lam.abs().max(1.0) {
            // a couple of extra steps tighten the vector beyond the bracket
            polish += 1;
            if polish > 2 {
                return Ok((lam, x, [lo, hi], it));
            }
        }
        mu = lo - gap_floor;
    }
    let [lo, hi] = bracket(&x);
    Err(EigenError::NoConvergence { iterations: opts.max_iter, width: hi - lo })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_action, build_grid, DriftScheme};
    use crate::problem::{bm_interval, drift_interval};
    use proptest::prelude::*;

    fn chain3() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 3, &[(0, 0, -16.0), (0, 1, 8.0), (1, 0, 8.0), (1, 1, -16.0), (1, 2, 8.0), (2, 1, 8.0), (2, 2, -16.0)])
    }

    #[test]
    fn scalar_case() {
        let m = CsrMatrix::from_triplets(1, 1, &[(0, 0, -3.0)]);
        let e = principal_eigenpair_with(&m, EigenOptions::default()).unwrap();
        assert!((e.lambda - 3.0).abs() < 1e-14);
        assert_eq!(e.psi, vec![1.0]);
        assert_eq!(e.phi, vec![1.0]);
    }

    #[test]
    fn three_node_chain() {
        let e = principal_eigenpair_with(&chain3(), EigenOptions::default()).unwrap();
        let exact = 16.0 - 8.0 * 2f64.sqrt();
        assert!((e.lambda - exact).abs() < 1e-12, "{}", e.lambda);
        let r = 0.5 * 2f64.sqrt();
        for (got, want) in e.psi.iter().zip([r, 1.0, r]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((e.phi.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(e.residual <= 1e-10 && e.residual_left <= 1e-10);
        assert!(e.cw_interval[0] <= e.lambda && e.lambda <= e.cw_interval[1]);
    }

    #[test]
    fn cw_bounds_constant_vector() {
        let b = cw_bounds(&chain3(), &[1.0, 1.0, 1.0]);
        assert_eq!(b, [0.0, 8.0]);
    }

    #[test]
    fn cw_bounds_perturbed_eigenvector() {
        let e = principal_eigenpair_with(&chain3(), EigenOptions::default()).unwrap();
        let noise = [0.3, -0.7, 0.9];
        let p: Vec<f64> = e.psi.iter().zip(noise).map(|(v, z)| v * (1.0 + 1e-6 * z)).collect();
        let [lo, hi] = cw_bounds(&chain3(), &p);
        assert!(hi - lo <= 1e-4 && lo <= e.lambda && e.lambda <= hi);
        let [lo, hi] = cw_bounds(&chain3(), &e.psi);
        assert!(hi - lo < 1e-12);
    }

    #[test]
    fn half_laplacian_fine_grid() {
        let p = bm_interval();
        let g = build_grid(&p, 1.0 / 256.0).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::default());
        let e = principal_eigenpair(&gen, DEFAULT_TOL).unwrap();
        let exact = std::f64::consts::PI.powi(2) / 2.0;
        assert!((e.lambda - exact).abs() < 1e-3);
        assert!(e.residual <= 1e-9, "residual {}", e.residual);
        assert!(e.cw_interval[1] - e.cw_interval[0] <= 10.0 * DEFAULT_TOL * e.lambda);
        assert!(e.psi.iter().chain(&e.phi).all(|v| *v > 0.0));
    }

    #[test]
    fn dense_oracle_agreement_with_drift() {
        let p = drift_interval(3.0);
        let g = build_grid(&p, 1.0 / 16.0).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::default());
        let e = principal_eigenpair(&gen, DEFAULT_TOL).unwrap();
        let eig = gen.matrix.to_dense().complex_eigenvalues();
        let top = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        assert!((e.lambda + top).abs() < 1e-9);
    }

    #[test]
    fn domain_monotonicity() {
        let h = 1.0 / 64.0;
        let p = bm_interval();
        let small = principal_eigenpair(&assemble_action(&build_grid(&p, h).unwrap(), &p, 0, DriftScheme::default()), DEFAULT_TOL).unwrap();
        let big = p.enlarged(0.125);
        let large =
            principal_eigenpair(&assemble_action(&build_grid(&big, h).unwrap(), &big, 0, DriftScheme::default()), DEFAULT_TOL).unwrap();
        assert!(small.lambda > large.lambda);
    }

    #[test]
    fn conservative_matrix_has_zero_eigenvalue() {
        let m =
            CsrMatrix::from_triplets(3, 3, &[(0, 0, -2.0), (0, 1, 2.0), (1, 0, 1.0), (1, 1, -3.0), (1, 2, 2.0), (2, 1, 5.0), (2, 2, -5.0)]);
        let e = principal_eigenpair_with(&m, EigenOptions::default()).unwrap();
        assert!(e.lambda.abs() < 1e-12);
        assert!(e.psi.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn reducible_rejected() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, -1.0), (0, 1, 1.0), (1, 1, -1.0)]);
        assert!(matches!(principal_eigenpair_with(&m, EigenOptions::default()), Err(EigenError::Reducible)));
    }

    #[test]
    fn csv_export() {
        let p = bm_interval();
        let g = build_grid(&p, 0.25).unwrap();
        let e = principal_eigenpair(&assemble_action(&g, &p, 0, DriftScheme::default()), DEFAULT_TOL).unwrap();
        let mut buf = Vec::new();
        e.write_csv(&g, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,psi,phi\n0.25,"));
        assert_eq!(text.lines().count(), 4);
    }

    proptest! {
        #[test]
        fn bracketing_random_positive_vectors(v in proptest::collection::vec(0.01f64..10.0, 15)) {
            let p = drift_interval(2.0);
            let g = build_grid(&p, 1.0 / 16.0).unwrap();
            let gen = assemble_action(&g, &p, 0, DriftScheme::default());
            let e = principal_eigenpair(&gen, DEFAULT_TOL).unwrap();
            let [lo, hi] = cw_bounds(&gen.matrix, &v);
            prop_assert!(lo <= e.lambda + 1e-9 && e.lambda <= hi + 1e-9);
        }
    }
}
