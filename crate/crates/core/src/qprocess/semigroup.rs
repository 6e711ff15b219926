use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{QProcessError, QProcessModel};
use crate::eigen::EigenPair;
use crate::linalg::{dot, expm, linear_fit, sup_diff, tv_distance, CsrMatrix, DENSE_LIMIT};

fn dense_checked(g: &CsrMatrix) -> Result<DMatrix<f64>, QProcessError> {
    if g.n_rows() > DENSE_LIMIT {
        return Err(QProcessError::TooLargeForDense { n: g.n_rows() });
    }
    Ok(g.to_dense())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GirsanovCheck {
    pub t: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub sup_difference: f64,
}

/// Compares `e^{tG} g` with `e^{-lambda t} psi * e^{t G~} (g / psi)`.
pub fn girsanov_check(
    g: &CsrMatrix,
    pair: &EigenPair,
    model: &QProcessModel,
    t: f64,
    field: &[f64],
) -> Result<GirsanovCheck, QProcessError> {
    assert!(t >= 0.0, "time must be nonnegative");
    let gd = dense_checked(g)?;
    let gt = dense_checked(&model.g_tilde)?;
    let lhs = expm(&gd, t) * DVector::from_column_slice(field);
    let scaled: Vec<f64> = field.iter().zip(&pair.psi).map(|(f, p)| f / p).collect();
    let inner = expm(&gt, t) * DVector::from_vec(scaled);
    let decay = (-pair.lambda * t).exp();
    let rhs: Vec<f64> = inner.iter().zip(&pair.psi).map(|(v, p)| decay * p * v).collect();
    let lhs: Vec<f64> = lhs.iter().copied().collect();
    let sup_difference = sup_diff(&lhs, &rhs);
    Ok(GirsanovCheck { t, lhs, rhs, sup_difference })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalRow {
    pub t: f64,
    /// `P_x0(tau > t)`
    pub survival: f64,
    /// `e^{lambda t} P_x0(tau > t)`
    pub scaled: f64,
    /// Total variation between the law at `t` conditioned on survival and
    /// the quasi-stationary distribution.
    pub tv_to_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalReport {
    pub x0: usize,
    /// `psi(x0) sum(phi) / <phi, psi>`
    pub limit: f64,
    /// The same limit written through the conditioned process:
    /// `e^{psi(x0)} sum_y e^{-psi(y)} mu~(y)`.
    pub limit_from_mu: f64,
    pub rows: Vec<SurvivalRow>,
}

/// Survival probabilities and conditioned laws from `x0` at the given times.
/// Everything is computed with `e^{t(G + lambda I)}` so that nothing
/// underflows at large `t`.
pub fn survival_asymptotics(
    g: &CsrMatrix,
    pair: &EigenPair,
    model: &QProcessModel,
    t_list: &[f64],
    x0: usize,
) -> Result<SurvivalReport, QProcessError> {
    let n = g.n_rows();
    assert!(x0 < n, "start node out of range");
    let mut shifted = dense_checked(g)?;
    for i in 0..n {
        shifted[(i, i)] += pair.lambda;
    }
    let limit = pair.psi[x0] * pair.phi.iter().sum::<f64>() / dot(&pair.phi, &pair.psi);
    let limit_from_mu = model.psi[x0].exp() * model.psi.iter().zip(&model.mu_tilde).map(|(p, m)| (-p).exp() * m).sum::<f64>();
    let rows = t_list
        .iter()
        .map(|&t| {
            let e = expm(&shifted, t);
            let row: Vec<f64> = e.row(x0).iter().copied().collect();
            let scaled: f64 = row.iter().sum();
            let law: Vec<f64> = row.iter().map(|v| v / scaled).collect();
            SurvivalRow { t, survival: scaled * (-pair.lambda * t).exp(), scaled, tv_to_alpha: tv_distance(&law, &pair.phi) }
        })
        .collect();
    Ok(SurvivalReport { x0, limit, limit_from_mu, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TvDecay {
    pub dt: f64,
    /// `(t, TV)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
    pub fitted_rate: f64,
    pub r_squared: f64,
    /// Second-smallest minus smallest decay rate of `G` from a dense
    /// eigendecomposition.
    pub spectral_gap: f64,
    pub relative_error: f64,
}

/// Fits the exponential decay rate of `TV(law_t | survival, alpha)` from
/// `x0`, using the points with TV between `1e-9` and `1e-2`, and compares it
/// with the spectral gap.
pub fn tv_decay(g: &CsrMatrix, pair: &EigenPair, x0: usize, dt: f64) -> Result<TvDecay, QProcessError> {
    let n = g.n_rows();
    let mut shifted = dense_checked(g)?;
    for i in 0..n {
        shifted[(i, i)] += pair.lambda;
    }
    let step = expm(&shifted, dt);
    let mut law = DVector::zeros(n);
    law[x0] = 1.0;
    let mut points = Vec::new();
    let mut t = 0.0;
    for _ in 0..20_000 {
        law = step.tr_mul(&law);
        let s = law.sum();
        law /= s;
        t += dt;
        let tv = tv_distance(law.as_slice(), &pair.phi);
        if tv < 1e-2 && tv > 1e-9 {
            points.push((t, tv));
        }
        if tv <= 1e-9 {
            break;
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (fitted_rate, r_squared) = if points.len() >= 3 {
        let (_, slope, r2) = linear_fit(&xs, &ys);
        (-slope, r2)
    } else {
        (f64::NAN, 0.0)
    };
    let spectral_gap = spectral_gap(&g.to_dense());
    Ok(TvDecay { dt, points, fitted_rate, r_squared, spectral_gap, relative_error: (fitted_rate - spectral_gap).abs() / spectral_gap })
}

/// `lambda_2 - lambda_1` for the decay rates `-Re(eig)` sorted ascending.
pub(crate) fn spectral_gap(g: &DMatrix<f64>) -> f64 {
    let mut rates: Vec<f64> = g.complex_eigenvalues().iter().map(|z| -z.re).collect();
    rates.sort_by(f64::total_cmp);
    // complex pairs share a real part; skip duplicates of the principal one
    let first = rates[0];
    rates.iter().copied().find(|r| *r > first + 1e-9 * first.abs().max(1.0)).unwrap_or(f64::NAN) - first
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{assemble_action, build_grid, DriftScheme};
    use crate::eigen::{principal_eigenpair, principal_eigenpair_with, EigenOptions, DEFAULT_TOL};
    use crate::problem::bm_interval;
    use crate::qprocess::build_qprocess;

    fn chain3() -> CsrMatrix {
        CsrMatrix::from_triplets(3, 3, &[(0, 0, -16.0), (0, 1, 8.0), (1, 0, 8.0), (1, 1, -16.0), (1, 2, 8.0), (2, 1, 8.0), (2, 2, -16.0)])
    }

    #[test]
    fn conjugation_identities() {
        let g = chain3();
        let e = principal_eigenpair_with(&g, EigenOptions::default()).unwrap();
        let (m, _) = build_qprocess(&g, &e).unwrap();
        let f = [0.3, -1.0, 2.0];
        let c = girsanov_check(&g, &e, &m, 0.0, &f).unwrap();
        assert_eq!(c.lhs, f.to_vec());
        assert!(c.sup_difference < 1e-15);
        let c = girsanov_check(&g, &e, &m, 1.0, &[1.0; 3]).unwrap();
        assert!(c.sup_difference <= 1e-10);
        let c = girsanov_check(&g, &e, &m, 0.7, &e.psi).unwrap();
        for (l, p) in c.lhs.iter().zip(&e.psi) {
            assert!((l - (-e.lambda * 0.7).exp() * p).abs() < 1e-12);
        }
    }

    #[test]
    fn three_node_survival_limit() {
        let g = chain3();
        let e = principal_eigenpair_with(&g, EigenOptions::default()).unwrap();
        let (m, _) = build_qprocess(&g, &e).unwrap();
        let r = survival_asymptotics(&g, &e, &m, &[0.0, 10.0], 1).unwrap();
        let exact = (1.0 + 2f64.sqrt()) / 2.0;
        assert!((r.limit - exact).abs() < 1e-10);
        assert!((r.limit_from_mu - exact).abs() < 1e-10);
        assert!((r.rows[1].scaled - exact).abs() < 1e-10);
        assert_eq!(r.rows[0].survival, 1.0);
        assert!(r.rows[0].tv_to_alpha < 1.0);
    }

    #[test]
    fn tv_rate_matches_gap() {
        let p = bm_interval();
        let g = build_grid(&p, 1.0 / 32.0).unwrap();
        let gen = assemble_action(&g, &p, 0, DriftScheme::default());
        let e = principal_eigenpair(&gen, DEFAULT_TOL).unwrap();
        let d = tv_decay(&gen.matrix, &e, g.nearest_node(&[0.25, 0.0]), 0.01).unwrap();
        assert!(d.r_squared >= 0.99);
        assert!(d.relative_error <= 0.1, "{} vs {}", d.fitted_rate, d.spectral_gap);
        // P1: rates are (1 - cos(k pi h)) / h^2
        let h: f64 = 1.0 / 32.0;
        let rate = |k: f64| (1.0 - (k * std::f64::consts::PI * h).cos()) / (h * h);
        assert!((d.spectral_gap - (rate(2.0) - rate(1.0))).abs() < 1e-8);
    }
}
