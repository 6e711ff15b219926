//! The process conditioned never to exit, obtained by an exact Doob
//! transform of the killed chain, together with its invariant measure, the
//! quasi-stationary distribution, and the semigroup identities linking them.

mod lyapunov;
mod semigroup;

use serde::Serialize;
use thiserror::Error;

pub use lyapunov::{
    extend_policy, lyapunov_certificate, scan_certificate, verify_uniform_ergodicity, y_generator, LyapunovCertificate, LyapunovOptions,
    PolicyCheck, UniformErgodicityOptions, UniformErgodicityReport,
};
pub use semigroup::{girsanov_check, survival_asymptotics, tv_decay, GirsanovCheck, SurvivalReport, SurvivalRow, TvDecay};

use crate::control::ControlError;
use crate::discretize::{discrete_gradient, DiscretizeError, Extension, Grid};
use crate::eigen::{exact_row_sums, principal_eigenpair_with, EigenError, EigenOptions, EigenPair};
use crate::linalg::{dot, CsrMatrix, DENSE_LIMIT};
use crate::problem::{Point, PolicySpec, ProblemSpec};

/// Largest `max psi / min psi` accepted by [`doob_transform`].
pub const MAX_PSI_RATIO: f64 = 1e12;

#[derive(Debug, Error)]
pub enum QProcessError {
    #[error("eigenvector ratio max/min = {ratio:e} is too large for the transform")]
    IllConditioned { ratio: f64 },
    #[error("invariant measure is not unique (transformed chain is reducible)")]
    NullVectorNotUnique,
    #[error("{n} nodes exceed the dense limit of {DENSE_LIMIT}")]
    TooLargeForDense { n: usize },
    #[error("no Lyapunov certificate: {0}")]
    NoCertificate(String),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Discretize(#[from] DiscretizeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QProcessModel {
    /// Conservative generator `diag(psi)^-1 (G + lambda I) diag(psi)`.
    #[serde(skip)]
    pub g_tilde: CsrMatrix,
    /// `log psi`
    pub psi: Vec<f64>,
    pub mu_tilde: Vec<f64>,
    pub alpha: Vec<f64>,
    pub lambda: f64,
    /// Largest `|row sum|` of `g_tilde`.
    pub row_sum_residual: f64,
}

/// Exact Doob transform of a killed generator by its principal eigenpair.
/// Measures are left empty; see [`stationary_measures`].
pub fn doob_transform(g: &CsrMatrix, pair: &EigenPair) -> Result<QProcessModel, QProcessError> {
    let psi = &pair.psi;
    let (lo, hi) = psi.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi / lo > MAX_PSI_RATIO {
        return Err(QProcessError::IllConditioned { ratio: hi / lo });
    }
    let lambda = pair.lambda;
    let g_tilde = g.map(|i, j, v| if i == j { v + lambda } else { v * psi[j] / psi[i] });
    let row_sum_residual = exact_row_sums(&g_tilde).iter().fold(0.0_f64, |m, s| m.max(s.abs()));
    Ok(QProcessModel { g_tilde, psi: pair.log_psi(), mu_tilde: Vec::new(), alpha: Vec::new(), lambda, row_sum_residual })
}

/// Fills in `alpha` (the left eigenvector of `G`) and `mu_tilde` (the left
/// null vector of the transformed generator, computed on its own), and
/// returns `||mu_tilde - psi alpha / <psi, alpha>||_1`.
pub fn stationary_measures(model: &mut QProcessModel, pair: &EigenPair) -> Result<f64, QProcessError> {
    if !model.g_tilde.is_irreducible() {
        return Err(QProcessError::NullVectorNotUnique);
    }
    let tilde = principal_eigenpair_with(&model.g_tilde, EigenOptions::default())?;
    model.mu_tilde = tilde.phi;
    model.alpha = pair.phi.clone();
    Ok(product_relation_error(&model.mu_tilde, &pair.psi, &model.alpha))
}

/// `||mu - psi alpha / <psi, alpha>||_1`
pub fn product_relation_error(mu: &[f64], psi: &[f64], alpha: &[f64]) -> f64 {
    let z = dot(psi, alpha);
    mu.iter().zip(psi).zip(alpha).map(|((m, p), a)| (m - p * a / z).abs()).sum()
}

/// Transform, then measures; convenience for callers that want both.
pub fn build_qprocess(g: &CsrMatrix, pair: &EigenPair) -> Result<(QProcessModel, f64), QProcessError> {
    let mut model = doob_transform(g, pair)?;
    let err = stationary_measures(&mut model, pair)?;
    Ok((model, err))
}

/// Drift of the conditioned diffusion, `m_v + a grad psi`, on the grid.
pub fn qprocess_drift(problem: &ProblemSpec, grid: &Grid, policy: &PolicySpec, log_psi: &[f64]) -> Vec<Point> {
    let grad = discrete_gradient(grid, log_psi, Extension::LogZero);
    (0..grid.n())
        .map(|i| {
            let x = grid.coords(i);
            let m = problem.drift(&x, policy.action(i));
            let a = problem.diffusion(&x);
            let mut out = [0.0; 2];
            for k in 0..grid.dim() {
                out[k] = m[k] + a[k] * grad[i][k];
            }
            out
        })
        .collect()
}

/// `(1/2) sum_x |sigma^T grad psi|^2 mu(x)`, the energy form that equals the
/// exit rate in the continuum.
pub fn energy(problem: &ProblemSpec, grid: &Grid, log_psi: &[f64], mu: &[f64]) -> f64 {
    let grad = discrete_gradient(grid, log_psi, Extension::LogZero);
    (0..grid.n())
        .map(|i| {
            let a = problem.diffusion(&grid.coords(i));
            let q: f64 = (0..grid.dim()).map(|k| a[k] * grad[i][k] * grad[i][k]).sum();
            0.5 * q * mu[i]
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RayleighIdentity {
    pub estimate: f64,
    pub lambda: f64,
    pub relative_error: f64,
}

pub fn rayleigh_identity(problem: &ProblemSpec, grid: &Grid, log_psi: &[f64], mu_tilde: &[f64], lambda: f64) -> RayleighIdentity {
    let estimate = energy(problem, grid, log_psi, mu_tilde);
    RayleighIdentity { estimate, lambda, relative_error: (estimate - lambda).abs() / lambda.abs() }
}

/// Writes `x1[,x2],mu_tilde,alpha,psi,phi[,v]` rows.
pub fn write_measures_csv<W: std::io::Write>(
    grid: &Grid,
    model: &QProcessModel,
    pair: &EigenPair,
    lyapunov: Option<&[f64]>,
    mut w: W,
) -> std::io::Result<()> {
    let coords = if grid.dim() == 1 { "x1" } else { "x1,x2" };
    let tail = if lyapunov.is_some() { ",v" } else { "" };
    writeln!(w, "{coords},mu_tilde,alpha,psi,phi{tail}")?;
    for i in 0..grid.n() {
        let x = grid.coords(i);
        if grid.dim() == 1 {
            write!(w, "{}", x[0])?;
        } else {
            write!(w, "{},{}", x[0], x[1])?;
        }
        write!(w, ",{:e},{:e},{:e},{:e}", model.mu_tilde[i], model.alpha[i], pair.psi[i], pair.phi[i])?;
        if let Some(v) = lyapunov {
            write!(w, ",{:e}", v[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_action, build_grid, DriftScheme};
    use crate::eigen::{principal_eigenpair, DEFAULT_TOL};
    use crate::problem::{bm_interval, drift_interval};
    use std::f64::consts::PI;

    fn chain3() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 3, &[(0, 0, -16.0), (0, 1, 8.0), (1, 0, 8.0), (1, 1, -16.0), (1, 2, 8.0), (2, 1, 8.0), (2, 2, -16.0)])
    }

    #[test]
    fn scalar_transform_freezes() {
        let g = CsrMatrix::from_triplets(1, 1, &[(0, 0, -3.0)]);
        let e = principal_eigenpair_with(&g, EigenOptions::default()).unwrap();
        let (m, err) = build_qprocess(&g, &e).unwrap();
        assert_eq!(m.g_tilde.get(0, 0), 0.0);
        assert_eq!(m.mu_tilde, vec![1.0]);
        assert_eq!(m.alpha, vec![1.0]);
        assert!(err < 1e-15);
    }

    #[test]
    fn three_node_rates() {
        let g = chain3();
        let e = principal_eigenpair_with(&g, EigenOptions::default()).unwrap();
        let m = doob_transform(&g, &e).unwrap();
        let s2 = 2f64.sqrt();
        assert!((m.g_tilde.get(0, 1) - 8.0 * s2).abs() < 1e-10);
        assert!((m.g_tilde.get(1, 0) - 4.0 * s2).abs() < 1e-10);
        assert!(m.row_sum_residual < 1e-10);
    }

    #[test]
    fn measures_match_closed_forms() {
        let p = bm_interval();
        let h = 1.0 / 64.0;
        let g = build_grid(&p, h).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::default());
        let e = principal_eigenpair(&gen, DEFAULT_TOL).unwrap();
        let (m, err) = build_qprocess(&gen.matrix, &e).unwrap();
        assert!(err <= 1e-12, "product relation {err:e}");
        // cell masses against cell integrals of the limiting densities
        for (i, x) in g.all_coords().iter().enumerate() {
            let (a, b) = (x[0] - h / 2.0, x[0] + h / 2.0);
            let mu_cell = (b - a) - ((2.0 * PI * b).sin() - (2.0 * PI * a).sin()) / (2.0 * PI);
            let alpha_cell = 0.5 * ((PI * a).cos() - (PI * b).cos());
            assert!((m.mu_tilde[i] - mu_cell).abs() <= 0.02 * 2.0 * h, "mu at {}", x[0]);
            assert!((m.alpha[i] - alpha_cell).abs() <= 0.02 * PI / 2.0 * h, "alpha at {}", x[0]);
        }
    }

    #[test]
    fn drift_closed_form() {
        let p = bm_interval();
        let g = build_grid(&p, 1.0 / 64.0).unwrap();
        let e = principal_eigenpair(&assemble_action(&g, &p, 0, DriftScheme::default()), DEFAULT_TOL).unwrap();
        let d = qprocess_drift(&p, &g, &PolicySpec::constant(g.n(), 0), &e.log_psi());
        assert!(d[g.nearest_node(&[0.5, 0.0])][0].abs() < 1e-6);
        assert!((d[g.nearest_node(&[0.25, 0.0])][0] - PI).abs() < 2e-2);
        let flat = qprocess_drift(&drift_interval(1.5), &g, &PolicySpec::constant(g.n(), 0), &vec![0.0; g.n()]);
        assert!(flat.iter().all(|v| v[0] == 1.5));
    }

    #[test]
    fn rayleigh_converges() {
        for c in [0.0, 1.0] {
            let p = drift_interval(c);
            let mut errs = Vec::new();
            for m in [64usize, 128] {
                let g = build_grid(&p, 1.0 / m as f64).unwrap();
                let gen = assemble_action(&g, &p, 0, DriftScheme::default());
                let e = principal_eigenpair(&gen, DEFAULT_TOL).unwrap();
                let (q, _) = build_qprocess(&gen.matrix, &e).unwrap();
                let r = rayleigh_identity(&p, &g, &q.psi, &q.mu_tilde, e.lambda);
                assert!((e.lambda - (PI * PI / 2.0 + c * c / 2.0)).abs() < 2e-3);
                errs.push(r.relative_error);
            }
            assert!(errs[0] <= 0.05 && errs[1] < errs[0], "{errs:?}");
        }
    }

    #[test]
    fn csv_layout() {
        let g = chain3();
        let e = principal_eigenpair_with(&g, EigenOptions::default()).unwrap();
        let (m, _) = build_qprocess(&g, &e).unwrap();
        let grid = build_grid(&bm_interval(), 0.25).unwrap();
        let mut buf = Vec::new();
        write_measures_csv(&grid, &m, &e, Some(&[1.0, 2.0, 3.0]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,mu_tilde,alpha,psi,phi,v\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
