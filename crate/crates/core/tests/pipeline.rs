//! End-to-end: problem file -> grid -> policy iteration -> conditioned
//! process -> occupation LP, checked against values computed here.

use std::f64::consts::PI;

use exitrate::control::{optimal_action_sets, policy_iteration, ControlSetup, Mode};
use exitrate::discretize::{assemble_generator, build_grid, DriftScheme};
use exitrate::problem::{bang_bang, bm_interval, validate_problem, ProblemError, ProblemSpec};
use exitrate::qprocess::build_qprocess;
use exitrate::variational::{build_occupation_lp, build_w_grid, verify_minimizer_structure};

#[test]
fn problem_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for p in exitrate::problem::builtin_catalog() {
        let path = dir.path().join(format!("{}.json", p.name));
        std::fs::write(&path, p.to_json()).unwrap();
        let back = ProblemSpec::load(&path).unwrap();
        assert_eq!(back, p);
        validate_problem(&back).unwrap();
    }
}

#[test]
fn malformed_files_are_rejected() {
    assert!(matches!(ProblemSpec::from_json("{\"name\": 3}"), Err(ProblemError::Json(_))));
    let mut p = bm_interval();
    p.sigma = vec![exitrate::problem::Expr::parse("0.01").unwrap()];
    assert!(validate_problem(&p).is_err());
    assert!(matches!(ProblemSpec::load("/nonexistent/problem.json"), Err(ProblemError::Io(_))));
}

#[test]
fn brownian_interval_closed_form() {
    let p = bm_interval();
    for h in [1.0 / 8.0, 1.0 / 32.0] {
        let grid = build_grid(&p, h).unwrap();
        let trace = policy_iteration(&ControlSetup::new(&p, &grid), Mode::Max).unwrap();
        // Discrete Dirichlet Laplacian on (0, 1): lambda_h = (1 - cos(pi h)) / h^2.
        let exact = (1.0 - (PI * h).cos()) / (h * h);
        assert!((trace.lambda() - exact).abs() < 1e-10 * exact);
        let [lo, hi] = trace.eigenpair.cw_interval;
        assert!(lo <= exact + 1e-12 && exact <= hi + 1e-12);
        // Eigenvector is sin(pi x) sampled at the nodes, scaled to peak one.
        let peak = psi_max(h);
        for (i, v) in trace.eigenpair.psi.iter().enumerate() {
            let x = (i + 1) as f64 * h;
            assert!((v - (PI * x).sin() / peak).abs() < 1e-8, "node {i}");
        }
    }
}

/// Peak of `sin(pi x)` over the interior nodes `x = h, 2h, ...`.
fn psi_max(h: f64) -> f64 {
    let n = (1.0 / h).round() as usize;
    (1..n).map(|i| (PI * i as f64 * h).sin()).fold(0.0, f64::max)
}

#[test]
fn bang_bang_pipeline() {
    let p = bang_bang();
    let grid = build_grid(&p, 1.0 / 8.0).unwrap();
    let s = ControlSetup::new(&p, &grid);
    let star = policy_iteration(&s, Mode::Max).unwrap();
    let low = policy_iteration(&s, Mode::Min).unwrap();
    assert!(star.converged && low.converged);
    assert!(star.lambda() < low.lambda());
    assert!(star.lambda() < PI * PI / 2.0);

    let gen = assemble_generator(&grid, &p, star.policy(), DriftScheme::default()).unwrap();
    let (model, err) = build_qprocess(&gen.matrix, &star.eigenpair).unwrap();
    assert!(err < 1e-12);
    assert!(model.row_sum_residual < 1e-10);
    assert!((model.mu_tilde.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let candidates = vec![star.eigenpair.log_psi(), low.eigenpair.log_psi()];
    let lp = build_occupation_lp(&grid, &p, build_w_grid(&grid, &candidates).unwrap(), DriftScheme::default());
    let sol = lp.solve().unwrap();
    assert!((sol.value - star.lambda()).abs() <= 1e-6 * star.lambda());
    let optimal = optimal_action_sets(&s, &star.eigenpair.psi, Mode::Max, 1e-9);
    let report = verify_minimizer_structure(&lp, &grid, &sol.pi, &optimal, &star.eigenpair.log_psi(), &model.mu_tilde);
    assert!(report.pass(), "{report:?}");
}
