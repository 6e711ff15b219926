use exitrate::control::{policy_iteration, ControlSetup, Mode};
use exitrate::discretize::{assemble_generator, build_grid, DriftScheme, Grid};
use exitrate::eigen::{principal_eigenpair_with, EigenOptions};
use exitrate::linalg::{tv_distance, DENSE_LIMIT};
use exitrate::mc::{
    estimate_exit_rate, mc_girsanov_check, simulate_killed, simulate_qprocess, write_histogram_csv, ConditionedField, Control,
    GirsanovConfig,
};
use exitrate::problem::{Point, PolicySpec};
use exitrate::qprocess::{
    build_qprocess, lyapunov_certificate, rayleigh_identity, survival_asymptotics, write_measures_csv, LyapunovOptions,
};
use exitrate::variational::{build_occupation_lp, build_w_grid, verify_minimizer_structure};
use exitrate::verify::{representations, run_all, VerifyConfig};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

/// A finished command: its report, whether its checks passed, and the data
/// files to write next to the report.
pub struct Outcome {
    pub report: Value,
    pub pass: bool,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn new(report: Value, pass: bool) -> Self {
        Outcome { report, pass, files: Vec::new() }
    }

    fn file(mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Self, CliError> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.to_string(), buf));
        Ok(self)
    }
}

fn eigen(cfg: &RunConfig) -> EigenOptions {
    EigenOptions::with_tol(cfg.tol)
}

fn setup<'a>(cfg: &'a RunConfig, grid: &'a Grid) -> ControlSetup<'a> {
    let mut s = ControlSetup::new(&cfg.problem_spec, grid);
    s.eigen = eigen(cfg);
    s
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.problem_spec;
    let grid = build_grid(p, cfg.h)?;
    let policy = PolicySpec::constant(grid.n(), 0);
    let gen = assemble_generator(&grid, p, &policy, DriftScheme::default())?;
    let pair = principal_eigenpair_with(&gen.matrix, eigen(cfg))?;
    let report = json!({
        "n": grid.n(),
        "action": p.actions[0],
        "lambda": pair.lambda,
        "cw_interval": pair.cw_interval,
        "residual": pair.residual,
        "residual_left": pair.residual_left,
        "iterations": pair.iterations,
    });
    Outcome::new(report, true).file("eigenpair.csv", |w| pair.write_csv(&grid, w))?.file("generator.txt", |w| gen.write_triplets(w))
}

pub fn optimize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let grid = build_grid(&cfg.problem_spec, cfg.h)?;
    let trace = policy_iteration(&setup(cfg, &grid), cfg.mode)?;
    let actions: Vec<&str> = trace.policy().assignment.iter().map(|&u| cfg.problem_spec.actions[u].as_str()).collect();
    let report = json!({
        "n": grid.n(),
        "mode": cfg.mode,
        "lambda": trace.lambda(),
        "cw_interval": trace.eigenpair.cw_interval,
        "iterations": trace.iterations.len(),
        "converged": trace.converged,
        "monotonicity_violation": trace.monotonicity_violation(),
        "policy": actions,
    });
    Outcome::new(report, trace.converged)
        .file("trace.csv", |w| trace.write_csv(w))?
        .file("eigenpair.csv", |w| trace.eigenpair.write_csv(&grid, w))
}

/// Node nearest to the box center, shifted a quarter side along the first
/// axis so that odd modes are excited.
fn off_center(cfg: &RunConfig, grid: &Grid) -> usize {
    let p = &cfg.problem_spec;
    let mut x = p.center();
    x[0] -= 0.25 * p.side_length(0);
    grid.nearest_node(&x)
}

pub fn qprocess(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.problem_spec;
    let grid = build_grid(p, cfg.h)?;
    let trace = policy_iteration(&setup(cfg, &grid), cfg.mode)?;
    let pair = &trace.eigenpair;
    let gen = assemble_generator(&grid, p, trace.policy(), DriftScheme::default())?;
    let (model, product_error) = build_qprocess(&gen.matrix, pair)?;
    let rayleigh = rayleigh_identity(p, &grid, &pair.log_psi(), &model.mu_tilde, pair.lambda);
    let survival = if grid.n() <= DENSE_LIMIT {
        let x0 = off_center(cfg, &grid);
        Some(survival_asymptotics(&gen.matrix, pair, &model, &[0.5, 1.0, 2.0, 5.0, 10.0], x0)?)
    } else {
        None
    };
    let opts = LyapunovOptions { eigen: eigen(cfg), ..LyapunovOptions::default() };
    let cert = lyapunov_certificate(p, &grid, trace.policy(), opts)?;
    let cert_ok = cert.rho > 0.0 && cert.max_violation <= 0.0;
    let pass = product_error <= 1e-12 && cert_ok;
    let report = json!({
        "n": grid.n(),
        "lambda": pair.lambda,
        "row_sum_residual": model.row_sum_residual,
        "product_relation_error": product_error,
        "energy_identity": rayleigh,
        "survival": survival.as_ref().map(|s| json!(s)).unwrap_or(Value::String(format!("skipped: more than {DENSE_LIMIT} nodes"))),
        "lyapunov": {
            "rho": cert.rho, "c": cert.c, "eps": cert.eps, "k_size": cert.k_size(), "max_violation": cert.max_violation,
            "enlargement": cert.enlargement, "proof_condition_met": cert.proof_condition_met, "valid": cert_ok,
        },
    });
    let mut out = Outcome::new(report, pass).file("measures.csv", |w| write_measures_csv(&grid, &model, pair, Some(&cert.v), w))?;
    if let Some(s) = survival {
        out = out.file("survival.csv", |w| {
            use std::io::Write;
            writeln!(w, "t,survival,scaled,tv_to_alpha")?;
            for r in &s.rows {
                writeln!(w, "{},{:e},{:e},{:e}", r.t, r.survival, r.scaled, r.tv_to_alpha)?;
            }
            Ok(())
        })?;
    }
    Ok(out)
}

pub fn variational(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.problem_spec;
    let grid = build_grid(p, cfg.h)?;
    let s = setup(cfg, &grid);
    let star = policy_iteration(&s, Mode::Max)?;
    let mut candidates = vec![star.eigenpair.log_psi()];
    if p.num_actions() > 1 {
        candidates.push(policy_iteration(&s, Mode::Min)?.eigenpair.log_psi());
    }
    let lp = build_occupation_lp(&grid, p, build_w_grid(&grid, &candidates)?, DriftScheme::default());
    let sol = lp.solve()?;
    let gen = assemble_generator(&grid, p, star.policy(), DriftScheme::default())?;
    let (model, _) = build_qprocess(&gen.matrix, &star.eigenpair)?;
    let optimal = exitrate::control::optimal_action_sets(&s, &star.eigenpair.psi, Mode::Max, 1e-9);
    let structure = verify_minimizer_structure(&lp, &grid, &sol.pi, &optimal, &star.eigenpair.log_psi(), &model.mu_tilde);
    let rel = (sol.value - star.lambda()).abs() / star.lambda();
    let point = lp.transform_point(&model.mu_tilde, star.policy(), 0);
    let report = json!({
        "n": grid.n(),
        "variables": lp.columns.len(),
        "lp_value": sol.value,
        "lambda_star": star.lambda(),
        "relative_error": rel,
        "transform_point_objective": lp.lp.objective(&point),
        "transform_point_residual": lp.lp.feasibility_residual(&point),
        "feasibility_residual": sol.feasibility_residual,
        "complementary_slackness": sol.complementary_slackness,
        "dual_infeasibility": sol.dual_infeasibility,
        "pivots": sol.pivots,
        "structure": structure,
        "summability_sets": "vacuous on a finite grid",
    });
    Outcome::new(report, rel <= 0.05 && structure.pass())
        .file("lp.mps", |w| lp.write_mps(&cfg.problem_spec.name, w))?
        .file("lp_solution.csv", |w| lp.write_solution_csv(&grid, &sol.pi, w))
}

pub fn simulate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = &cfg.problem_spec;
    let grid = build_grid(p, cfg.h)?;
    let trace = policy_iteration(&setup(cfg, &grid), cfg.mode)?;
    let control = if p.num_actions() == 1 { Control::Constant(0) } else { Control::Feedback { grid: &grid, policy: trace.policy() } };
    let x0 = p.center();
    let lambda = trace.lambda();

    let ens = simulate_killed(p, control, x0, cfg.dt, cfg.horizon, cfg.paths, cfg.seed)?;
    let window = [0.25 * cfg.horizon, 0.75 * cfg.horizon];
    let rate = estimate_exit_rate(&ens, window)?;
    let rate_ok = (rate.beta - lambda).abs() <= (3.0 * rate.stderr).max(0.05 * lambda);

    let gen = assemble_generator(&grid, p, trace.policy(), DriftScheme::default())?;
    let (model, _) = build_qprocess(&gen.matrix, &trace.eigenpair)?;
    let field = ConditionedField::new(&grid, &trace.eigenpair.log_psi());
    let run = simulate_qprocess(p, control, &field, x0, cfg.dt, 50.0, 16, cfg.seed)?;
    let tv = tv_distance(&run.histogram, &model.mu_tilde);

    // indicator of the middle fifth of the box along every axis
    let (lo, hi): (Point, Point) = {
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for k in 0..p.dim {
            lo[k] = p.bounds[k][0] + 0.4 * p.side_length(k);
            hi[k] = p.bounds[k][0] + 0.6 * p.side_length(k);
        }
        (lo, hi)
    };
    let dim = p.dim;
    let middle = move |x: &Point| if (0..dim).all(|k| x[k] > lo[k] && x[k] < hi[k]) { 1.0 } else { 0.0 };
    let gcfg = GirsanovConfig {
        t: 1.0,
        killed_dt: cfg.dt / 10.0,
        killed_paths: 40_000,
        conditioned_dt: cfg.dt,
        conditioned_paths: 4_000,
        seed: cfg.seed,
    };
    let gir = mc_girsanov_check(p, control, &field, lambda, &middle, x0, &gcfg)?;

    let pass = rate_ok && tv <= 0.05 && run.killed == 0 && gir.overlap;
    let report = json!({
        "lambda": lambda,
        "exit_rate": rate,
        "exit_rate_within_tolerance": rate_ok,
        "qprocess": {
            "horizon": run.horizon, "paths": run.n_paths, "tv_to_mu": tv, "killed": run.killed,
            "rejections": run.rejections, "projections": run.projections, "flagged": run.flagged, "energy_average": run.energy_average,
        },
        "girsanov": { "config": gcfg, "result": gir },
    });
    Outcome::new(report, pass)
        .file("ensemble.csv", |w| ens.write_csv(p.dim, w))?
        .file("occupancy.csv", |w| write_histogram_csv(&grid, &run.histogram, w))
}

pub fn representations_cmd(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let r = representations(&cfg.problem_spec, cfg.h, 8, cfg.seed, eigen(cfg)).map_err(|e| CliError::Run(e.to_string()))?;
    let pass = r.max_pairwise_relative_difference <= 0.05;
    Ok(Outcome::new(json!(r), pass))
}

pub fn verify(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let vcfg = VerifyConfig { seed: cfg.seed, paths: cfg.paths, dt: cfg.dt, horizon: cfg.horizon, tol: cfg.tol };
    let report = run_all(&vcfg);
    for c in &report.criteria {
        eprintln!("{} {:>2} {}", if c.pass { "PASS" } else { "FAIL" }, c.id, c.title);
    }
    Ok(Outcome::new(json!(report), report.all_pass()))
}
