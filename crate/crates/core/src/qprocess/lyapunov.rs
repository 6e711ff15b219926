//! Foster–Lyapunov certificates for the conditioned chain, built the way
//! the ergodicity proofs build them: a principal eigenfunction `Phi` on a
//! slightly larger box, divided by the eigenfunction on the original box.

use serde::Serialize;

use super::{energy, QProcessError};
use crate::control::{policy_iteration, ControlSetup, Mode};
use crate::discretize::{assemble_action, assemble_generator, build_grid, DriftScheme, Grid};
use crate::eigen::{apply_row, exact_row_sums, principal_eigenpair_with, EigenOptions};
use crate::linalg::{dot, CsrMatrix};
use crate::problem::{PolicySpec, ProblemSpec};

/// A certificate `(G~ V)(x) <= C 1_K(x) - rho V(x)` at every node, with
/// `K = D_eps` the nodes farther than `eps` from the boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovCertificate {
    pub v: Vec<f64>,
    pub c: f64,
    pub rho: f64,
    pub eps: f64,
    pub k_mask: Vec<bool>,
    /// Enlargement per side of the box on which `Phi` was computed.
    pub enlargement: f64,
    pub requested_enlargement: f64,
    /// Principal eigenvalue of the modified operator on the enlarged box.
    pub lambda_outer: f64,
    /// Whether the strict inequality the construction relies on held for
    /// the enlargement used.
    pub proof_condition_met: bool,
    /// `min_D Phi = min_D V psi`
    pub phi_min: f64,
    /// `min Phi` over the closed box (grid nodes of D plus its boundary).
    pub phi_closure_min: f64,
    /// `max_x [(G~ V)(x) - C 1_K(x) + rho V(x)]`; nonpositive when valid.
    pub max_violation: f64,
}

impl LyapunovCertificate {
    /// Re-checks the pointwise inequality against `gv = G~ V` (or, for a
    /// uniform certificate, the maximum over actions).
    pub fn violation(&self, gv: &[f64]) -> f64 {
        gv.iter()
            .zip(&self.v)
            .zip(&self.k_mask)
            .map(|((g, v), k)| g - if *k { self.c } else { 0.0 } + self.rho * v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_valid(&self, gv: &[f64]) -> bool {
        let scale = gv.iter().zip(&self.v).fold(self.c.abs(), |m, (g, v)| m.max(g.abs()).max(self.rho * v));
        self.rho > 0.0 && self.violation(gv) <= 1e-12 * scale
    }

    pub fn k_size(&self) -> usize {
        self.k_mask.iter().filter(|k| **k).count()
    }
}

/// Tightest `(C, rho, K = D_eps)` for a given `V` and drift values
/// `gv >= G~ V`: the smallest `K` (largest `eps` on the lattice) for which
/// `rho = min_{x not in K} -gv(x)/V(x)` is positive. `K` is never the whole
/// grid. Returns `(C, rho, eps, mask)`.
pub fn scan_certificate(grid: &Grid, v: &[f64], gv: &[f64]) -> Option<(f64, f64, f64, Vec<bool>)> {
    let max_layer = (0..grid.n()).map(|i| grid.layer(i)).max().unwrap_or(1);
    for layer in (1..=max_layer).rev() {
        let mask: Vec<bool> = (0..grid.n()).map(|i| grid.layer(i) > layer).collect();
        if mask.iter().all(|k| *k) {
            continue;
        }
        let rho = (0..grid.n()).filter(|&i| !mask[i]).map(|i| -gv[i] / v[i]).fold(f64::INFINITY, f64::min);
        if rho > 0.0 && rho.is_finite() {
            // a hair of slack so the emitted certificate survives re-checking
            let rho = rho * (1.0 - 1e-9);
            let c = (0..grid.n()).filter(|&i| mask[i]).map(|i| gv[i] + rho * v[i]).fold(0.0_f64, f64::max);
            let scale = (0..grid.n()).filter(|&i| mask[i]).fold(c, |m, i| m.max(gv[i].abs()).max(rho * v[i]));
            return Some((c + 1e-12 * scale, rho, layer as f64 * grid.h(), mask));
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovOptions {
    /// Radius of the ball `B` around the box center; defaults to a quarter
    /// of the shortest side.
    pub b_radius: Option<f64>,
    /// Requested enlargement per side as a fraction of the shortest side.
    pub enlargement: f64,
    pub scheme: DriftScheme,
    pub eigen: EigenOptions,
}

impl Default for LyapunovOptions {
    fn default() -> Self {
        Self { b_radius: None, enlargement: 0.25, scheme: DriftScheme::default(), eigen: EigenOptions::default() }
    }
}

/// Candidate paddings: the requested one rounded down to the lattice, then
/// successive halvings, never below one cell.
fn paddings(requested: f64, h: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    let mut p = requested;
    loop {
        let cells = ((p / h) + 1e-9).floor().max(1.0);
        let pad = cells * h;
        if out.last().is_none_or(|last| (last - pad).abs() > 1e-12) {
            out.push(pad);
        }
        if cells <= 1.0 {
            break;
        }
        p /= 2.0;
    }
    out
}

/// Extends a policy on `inner` to `outer` by the action of the nearest inner
/// node.
pub fn extend_policy(inner: &Grid, outer: &Grid, policy: &PolicySpec) -> PolicySpec {
    PolicySpec { assignment: (0..outer.n()).map(|j| policy.action(inner.nearest_node(&outer.coords(j)))).collect() }
}

/// Maps each inner node to its index in `outer`.
fn embed(inner: &Grid, outer: &Grid) -> Vec<usize> {
    let off = outer.embedding_of(inner).expect("inner grid sits on the outer lattice");
    (0..inner.n())
        .map(|i| {
            let l = inner.lattice(i);
            outer.index([l[0] + off[0], l[1] + off[1]])
        })
        .collect()
}

/// `min Phi` over outer nodes inside the closed original box.
fn closure_min(problem: &ProblemSpec, outer: &Grid, phi: &[f64]) -> f64 {
    (0..outer.n())
        .filter(|&j| {
            let x = outer.coords(j);
            (0..problem.dim).all(|k| x[k] >= problem.bounds[k][0] - 1e-12 && x[k] <= problem.bounds[k][1] + 1e-12)
        })
        .map(|j| phi[j])
        .fold(f64::INFINITY, f64::min)
}

fn euclid(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Certificate for the conditioned chain under `policy`: `Phi` is the
/// principal eigenfunction of `G' - 1_B` on the enlarged box and
/// `V = Phi / psi`. If the enlargement is too large for the eigenvalue
/// condition `lambda' > lambda`, it is halved (down to one cell).
pub fn lyapunov_certificate(
    problem: &ProblemSpec,
    grid: &Grid,
    policy: &PolicySpec,
    opts: LyapunovOptions,
) -> Result<LyapunovCertificate, QProcessError> {
    let gen = assemble_generator(grid, problem, policy, opts.scheme)?;
    let pair = principal_eigenpair_with(&gen.matrix, opts.eigen)?;
    let model = super::doob_transform(&gen.matrix, &pair)?;
    let radius = opts.b_radius.unwrap_or(0.25 * problem.min_side());
    let requested = opts.enlargement * problem.min_side();
    let center = problem.center();

    let mut fallback = None;
    for pad in paddings(requested, grid.h()) {
        let big = problem.enlarged(pad);
        let outer = build_grid(&big, grid.h())?;
        let ext = extend_policy(grid, &outer, policy);
        let ball: Vec<f64> = (0..outer.n()).map(|j| if euclid(&outer.coords(j), &center) <= radius { 1.0 } else { 0.0 }).collect();
        if ball.iter().all(|b| *b == 0.0) {
            return Err(QProcessError::NoCertificate(format!("ball of radius {radius} contains no grid node")));
        }
        let outer_gen = assemble_generator(&outer, &big, &ext, opts.scheme)?.with_potential(&ball);
        let outer_pair = principal_eigenpair_with(&outer_gen.matrix, opts.eigen)?;
        let idx = embed(grid, &outer);
        let phi: Vec<f64> = idx.iter().map(|&j| outer_pair.psi[j]).collect();
        let v: Vec<f64> = phi.iter().zip(&pair.psi).map(|(f, p)| f / p).collect();
        let gv = model.g_tilde.mul_vec(&v);
        let met = outer_pair.lambda > pair.lambda;
        if let Some((c, rho, eps, k_mask)) = scan_certificate(grid, &v, &gv) {
            let mut cert = LyapunovCertificate {
                v,
                c,
                rho,
                eps,
                k_mask,
                enlargement: pad,
                requested_enlargement: requested,
                lambda_outer: outer_pair.lambda,
                proof_condition_met: met,
                phi_min: phi.iter().cloned().fold(f64::INFINITY, f64::min),
                phi_closure_min: closure_min(problem, &outer, &outer_pair.psi),
                max_violation: 0.0,
            };
            cert.max_violation = cert.violation(&gv);
            if met {
                return Ok(cert);
            }
            fallback.get_or_insert(cert);
        }
    }
    fallback.ok_or_else(|| QProcessError::NoCertificate("no enlargement gives a positive rate; try a larger B".into()))
}

/// Generator of the chain with drift `m_v + a grad psi_low`, as the exact
/// conjugation `diag(Psi)^-1 (G_v + diag(c)) diag(Psi)` with
/// `c = -(G_v Psi) / Psi`. It has no killing. Returns the generator and `c`.
pub fn y_generator(g: &CsrMatrix, psi: &[f64]) -> (CsrMatrix, Vec<f64>) {
    let sums = exact_row_sums(g);
    let c: Vec<f64> = (0..g.n_rows()).map(|i| -apply_row(g, &sums, psi, i) / psi[i]).collect();
    let off = g.map(|i, j, v| if i == j { 0.0 } else { v * psi[j] / psi[i] });
    let out_rates: Vec<f64> = exact_row_sums(&off).iter().map(|s| -s).collect();
    let mut y = off.add_diagonal(&out_rates);
    // keep the stored diagonal exactly minus the off-diagonal mass
    y = y.map(|i, j, v| if i == j { out_rates[i] } else { v });
    (y, c)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCheck {
    pub index: usize,
    /// `(1/2) sum |sigma^T grad psi_low|^2 mu_v`
    pub quadratic_form: f64,
    /// `sum c_v mu_v`, the discrete counterpart of the quadratic form.
    pub exact_form: f64,
    /// `quadratic_form - lambda_low`
    pub excess: f64,
    pub holds: bool,
    pub exact_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformErgodicityReport {
    pub h: f64,
    /// Minimal exit rate (maximizing the generator).
    pub lambda_star: f64,
    /// Maximal exit rate (minimizing the generator).
    pub lambda_low: f64,
    pub slack_constant: f64,
    pub slack: f64,
    pub certificate: LyapunovCertificate,
    /// Uniform-certificate violation over every action at every node.
    pub uniform_violation: f64,
    pub policies: Vec<PolicyCheck>,
}

impl UniformErgodicityReport {
    pub fn all_hold(&self) -> bool {
        self.policies.iter().all(|p| p.holds && p.exact_holds) && self.certificate.rho > 0.0 && self.uniform_violation <= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformErgodicityOptions {
    pub enlargement: f64,
    /// `eps` of the cutoff set `D_eps`, in grid cells.
    pub eps_cells: usize,
    pub slack_constant: f64,
    pub scheme: DriftScheme,
    pub eigen: EigenOptions,
}

impl Default for UniformErgodicityOptions {
    fn default() -> Self {
        Self { enlargement: 0.25, eps_cells: 2, slack_constant: 2.0, scheme: DriftScheme::default(), eigen: EigenOptions::default() }
    }
}

/// Uniform ergodicity of the chain driven by `m_v + a grad psi_low` over all
/// policies, and the bound `(1/2) int |sigma^T grad psi_low|^2 d mu_v <=
/// lambda_low` for each of the given policies.
pub fn verify_uniform_ergodicity(
    problem: &ProblemSpec,
    grid: &Grid,
    policies: &[PolicySpec],
    opts: UniformErgodicityOptions,
) -> Result<UniformErgodicityReport, QProcessError> {
    let mut setup = ControlSetup::new(problem, grid);
    setup.scheme = opts.scheme;
    setup.eigen = opts.eigen;
    let star = policy_iteration(&setup, Mode::Max)?;
    let low = policy_iteration(&setup, Mode::Min)?;
    let psi_low = &low.eigenpair.psi;
    let log_low = low.eigenpair.log_psi();
    let (lambda_star, lambda_low) = (star.lambda(), low.lambda());
    let slack = opts.slack_constant * grid.h();

    let mut checks = Vec::with_capacity(policies.len());
    for (index, policy) in policies.iter().enumerate() {
        let g = assemble_generator(grid, problem, policy, opts.scheme)?;
        let (y, c) = y_generator(&g.matrix, psi_low);
        let mu = principal_eigenpair_with(&y, opts.eigen)?.phi;
        let quadratic_form = energy(problem, grid, &log_low, &mu);
        let exact_form = dot(&c, &mu);
        let excess = quadratic_form - lambda_low;
        checks.push(PolicyCheck {
            index,
            quadratic_form,
            exact_form,
            excess,
            holds: excess <= slack,
            exact_holds: exact_form <= lambda_low * (1.0 + 1e-9),
        });
    }

    // uniform certificate: drift values maximized over actions
    let per_action: Vec<(CsrMatrix, Vec<f64>)> =
        (0..problem.num_actions()).map(|u| y_generator(&assemble_action(grid, problem, u, opts.scheme).matrix, psi_low)).collect();
    let eps = opts.eps_cells as f64 * grid.h();
    let requested = opts.enlargement * problem.min_side();
    let mut fallback = None;
    let mut best_violation = f64::INFINITY;
    for pad in paddings(requested, grid.h()) {
        let big = problem.enlarged(pad);
        let outer = build_grid(&big, grid.h())?;
        let idx = embed(grid, &outer);
        let mut cut = vec![0.0; outer.n()];
        for (i, &j) in idx.iter().enumerate() {
            if grid.dist_to_boundary(i) > eps * (1.0 + 1e-12) {
                cut[j] = 2.0 * lambda_low;
            }
        }
        let mut outer_setup = ControlSetup::new(&big, &outer);
        outer_setup.scheme = opts.scheme;
        outer_setup.eigen = opts.eigen;
        outer_setup.potential = Some(&cut);
        let outer_pi = policy_iteration(&outer_setup, Mode::Max)?;
        let phi: Vec<f64> = idx.iter().map(|&j| outer_pi.eigenpair.psi[j]).collect();
        let v: Vec<f64> = phi.iter().zip(psi_low).map(|(f, p)| f / p).collect();
        let w = uniform_drift(&per_action, &v);
        let met = outer_pi.lambda() > lambda_star + lambda_low;
        if let Some((c, rho, eps_k, k_mask)) = scan_certificate(grid, &v, &w) {
            let mut cert = LyapunovCertificate {
                v,
                c,
                rho,
                eps: eps_k,
                k_mask,
                enlargement: pad,
                requested_enlargement: requested,
                lambda_outer: outer_pi.lambda(),
                proof_condition_met: met,
                phi_min: phi.iter().cloned().fold(f64::INFINITY, f64::min),
                phi_closure_min: closure_min(problem, &outer, &outer_pi.eigenpair.psi),
                max_violation: 0.0,
            };
            cert.max_violation = cert.violation(&w);
            let violation = cert.max_violation;
            if met {
                fallback = Some(cert);
                best_violation = violation;
                break;
            }
            if fallback.is_none() {
                best_violation = violation;
                fallback = Some(cert);
            }
        }
    }
    let certificate = fallback.ok_or_else(|| QProcessError::NoCertificate("no uniform certificate on any enlargement".into()))?;
    Ok(UniformErgodicityReport {
        h: grid.h(),
        lambda_star,
        lambda_low,
        slack_constant: opts.slack_constant,
        slack,
        certificate,
        uniform_violation: best_violation,
        policies: checks,
    })
}

/// `max_u (Y_u V)(x)` at every node.
fn uniform_drift(per_action: &[(CsrMatrix, Vec<f64>)], v: &[f64]) -> Vec<f64> {
    let mut w = vec![f64::NEG_INFINITY; v.len()];
    for (y, _) in per_action {
        for (wi, yi) in w.iter_mut().zip(y.mul_vec(v)) {
            *wi = wi.max(yi);
        }
    }
    w
}
