use std::f64::consts::PI;

use nalgebra::DVector;
use rand_distr::{Distribution, Exp};

use super::*;
use crate::control::{policy_iteration, ControlSetup, Mode};
use crate::discretize::{assemble_action, build_grid, DriftScheme};
use crate::eigen::{principal_eigenpair, principal_eigenpair_with, EigenOptions, DEFAULT_TOL};
use crate::linalg::{expm, tv_distance, CsrMatrix};
use crate::problem::{bang_bang, bm_interval, Expr};
use crate::qprocess::build_qprocess;

fn frozen() -> ProblemSpec {
    let mut p = bm_interval();
    p.sigma = vec![Expr::constant(0.0)];
    p
}

#[test]
fn frozen_dynamics_never_exit() {
    let e = simulate_killed(&frozen(), Control::Constant(0), [0.3, 0.0], 1e-2, 1.0, 50, 1).unwrap();
    assert!(e.exit_times.iter().all(Option::is_none));
    assert!(e.terminal_states.iter().all(|x| x[0] == 0.3));
}

#[test]
fn start_must_be_inside() {
    let r = simulate_killed(&bm_interval(), Control::Constant(0), [1.5, 0.0], 1e-3, 1.0, 1, 1);
    assert_eq!(r.unwrap_err(), McError::StartOutside([1.5, 0.0]));
}

#[test]
fn deterministic_across_pool_sizes() {
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_killed(&bm_interval(), Control::Constant(0), [0.5, 0.0], 1e-3, 0.5, 500, 7).unwrap())
    };
    assert_eq!(run(1), run(4));
    let other = simulate_killed(&bm_interval(), Control::Constant(0), [0.5, 0.0], 1e-3, 0.5, 500, 8).unwrap();
    assert_ne!(run(1).exit_times, other.exit_times);
}

fn synthetic(rate: f64, n: usize, horizon: f64) -> TrajectoryEnsemble {
    let mut rng = path_rng(3, 0);
    let d = Exp::new(rate).unwrap();
    let exit_times = (0..n).map(|_| Some(d.sample(&mut rng)).filter(|t| *t <= horizon)).collect();
    TrajectoryEnsemble { n_paths: n, dt: 0.0, horizon, seed: 3, x0: [0.0; 2], exit_times, terminal_states: vec![[0.0; 2]; n] }
}

#[test]
fn exponential_self_test() {
    let e = synthetic(3.0, 100_000, 2.0);
    let r = estimate_exit_rate(&e, [0.2, 1.2]).unwrap();
    assert!((r.beta - 3.0).abs() <= 3.0 * r.stderr, "{r:?}");
    assert!(r.stderr > 0.0 && r.stderr < 0.1);
    let err = estimate_exit_rate(&synthetic(3.0, 200, 2.0), [1.0, 1.5]).unwrap_err();
    assert!(matches!(err, McError::TooFewSurvivors { .. }));
}

#[test]
fn bm_exit_rate_and_survival() {
    let p = bm_interval();
    let e = simulate_killed(&p, Control::Constant(0), [0.5, 0.0], 1e-4, 2.0, 100_000, 11).unwrap();
    let r = estimate_exit_rate(&e, [0.5, 1.5]).unwrap();
    let lambda = PI * PI / 2.0;
    assert!((r.beta - lambda).abs() <= (3.0 * r.stderr).max(0.05 * lambda), "{r:?}");

    // dense semigroup at h = 1/256
    let g = build_grid(&p, 1.0 / 256.0).unwrap();
    let gen = assemble_action(&g, &p, 0, DriftScheme::default());
    let ones = DVector::from_element(g.n(), 1.0);
    let s = (expm(&gen.matrix.to_dense(), 2.0) * ones)[g.nearest_node(&[0.5, 0.0])];
    let emp = e.survival_fraction(2.0);
    let se = (s * (1.0 - s) / e.n_paths as f64).sqrt();
    assert!((emp - s).abs() <= 3.0 * se, "{emp} vs {s}");
}

#[test]
fn dt_refinement_reduces_bias() {
    let p = bm_interval();
    let lambda = PI * PI / 2.0;
    let errs: Vec<(f64, f64)> = [1e-3, 3e-4, 1e-4]
        .iter()
        .map(|&dt| {
            let e = simulate_killed(&p, Control::Constant(0), [0.5, 0.0], dt, 1.2, 40_000, 5).unwrap();
            let r = estimate_exit_rate(&e, [0.3, 1.0]).unwrap();
            ((r.beta - lambda).abs(), r.stderr)
        })
        .collect();
    for w in errs.windows(2) {
        assert!(w[1].0 <= w[0].0 + 2.0 * w[1].1, "{errs:?}");
    }
}

#[test]
fn bang_bang_optimal_policy_rate() {
    let p = bang_bang();
    let g = build_grid(&p, 1.0 / 64.0).unwrap();
    let t = policy_iteration(&ControlSetup::new(&p, &g), Mode::Max).unwrap();
    let control = Control::Feedback { grid: &g, policy: t.policy() };
    let e = simulate_killed(&p, control, [0.0, 0.0], 1e-4, 6.0, 20_000, 2).unwrap();
    let r = estimate_exit_rate(&e, [1.0, 5.0]).unwrap();
    assert!((r.beta - t.lambda()).abs() <= (3.0 * r.stderr).max(0.05 * t.lambda()), "{r:?} vs {}", t.lambda());
}

fn bm_field(h: f64) -> (Grid, ConditionedField, f64) {
    let p = bm_interval();
    let g = build_grid(&p, h).unwrap();
    let gen = assemble_action(&g, &p, 0, DriftScheme::default());
    let e = principal_eigenpair(&gen, DEFAULT_TOL).unwrap();
    let f = ConditionedField::new(&g, &e.log_psi());
    (g, f, e.lambda)
}

#[test]
fn short_qprocess_run_is_a_point_mass() {
    let (g, f, _) = bm_field(1.0 / 32.0);
    let r = simulate_qprocess(&bm_interval(), Control::Constant(0), &f, [0.3, 0.0], 1e-3, 1e-3, 3, 4).unwrap();
    let cell = g.nearest_node(&[0.3, 0.0]);
    assert!((r.histogram[cell] - 1.0).abs() < 1e-12);
    assert!(r.histogram.iter().enumerate().all(|(i, m)| i == cell || *m == 0.0));
}

#[test]
fn qprocess_occupancy_and_energy() {
    let p = bm_interval();
    // the energy average is heavy-tailed (|grad log psi|^2 ~ 1/d^2 near the
    // boundary) and carries an O(h) grid bias, hence the finer grid
    let (g, f, lambda) = bm_field(1.0 / 128.0);
    let r = simulate_qprocess(&p, Control::Constant(0), &f, [0.5, 0.0], 1e-4, 50.0, 32, 9).unwrap();
    assert_eq!(r.killed, 0);
    assert!(!r.flagged);
    // cell averages of 2 sin^2(pi x)
    let h = g.h();
    let cell = |x: f64| {
        let (a, b) = ((x - h / 2.0).max(0.0), (x + h / 2.0).min(1.0));
        let prim = |y: f64| y - (2.0 * PI * y).sin() / (2.0 * PI);
        prim(b) - prim(a)
    };
    let exact: Vec<f64> = g.all_coords().iter().map(|x| cell(x[0])).collect();
    let tv = tv_distance(&r.histogram, &exact);
    assert!(tv <= 0.05, "tv {tv}");
    assert!((r.energy_average - lambda).abs() <= 0.05 * lambda, "{} vs {lambda}", r.energy_average);
}

#[test]
fn ctmc_exponential_law() {
    let g = CsrMatrix::from_triplets(1, 1, &[(0, 0, -3.0)]);
    let paths = ctmc_ensemble(&g, 0, f64::INFINITY, 100_000, 1);
    let times: Vec<f64> = paths.iter().map(|p| p.exit_time.unwrap()).collect();
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let sd = (times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - 1.0 / 3.0).abs() <= 3.0 * sd / n.sqrt());
    let single = simulate_ctmc(&g, 0, f64::INFINITY, 1);
    assert_eq!(single, paths[0]);
}

fn chain3() -> CsrMatrix {
    CsrMatrix::from_triplets(3, 3, &[(0, 0, -16.0), (0, 1, 8.0), (1, 0, 8.0), (1, 1, -16.0), (1, 2, 8.0), (2, 1, 8.0), (2, 2, -16.0)])
}

#[test]
fn ctmc_conditioned_chain_occupancy() {
    let g = chain3();
    let e = principal_eigenpair_with(&g, EigenOptions::default()).unwrap();
    let (m, _) = build_qprocess(&g, &e).unwrap();
    let path = simulate_ctmc(&m.g_tilde, 1, 1e3, 6);
    assert!(path.exit_time.is_none());
    let total: f64 = path.occupancy.iter().sum();
    let occ: Vec<f64> = path.occupancy.iter().map(|o| o / total).collect();
    assert!(tv_distance(&occ, &m.mu_tilde) <= 0.02);
}

#[test]
fn ctmc_killed_survival() {
    let g = chain3();
    let exact = (expm(&g.to_dense(), 1.0) * DVector::from_element(3, 1.0))[0];
    let paths = ctmc_ensemble(&g, 0, 1.0, 100_000, 2);
    let emp = paths.iter().filter(|p| p.exit_time.is_none()).count() as f64 / 1e5;
    let se = (exact * (1.0 - exact) / 1e5).sqrt();
    assert!((emp - exact).abs() <= 3.0 * se, "{emp} vs {exact}");
}

fn girsanov_config(t: f64, killed_dt: f64, killed_paths: usize, conditioned_paths: usize) -> GirsanovConfig {
    GirsanovConfig { t, killed_dt, killed_paths, conditioned_dt: 1e-4, conditioned_paths, seed: 3 }
}

#[test]
fn girsanov_identity_trivial_cases() {
    let p = bm_interval();
    let (_, f, lambda) = bm_field(1.0 / 128.0);
    let x0 = [0.5, 0.0];
    let g0 = |x: &Point| if x[0] > 0.3 { 0.7 } else { 0.2 };
    let r = mc_girsanov_check(&p, Control::Constant(0), &f, lambda, &g0, x0, &girsanov_config(0.0, 1e-4, 100, 100)).unwrap();
    assert!((r.lhs - 0.7).abs() < 1e-12 && (r.rhs - 0.7).abs() < 1e-12);
    let zero = |_: &Point| 0.0;
    let r = mc_girsanov_check(&p, Control::Constant(0), &f, lambda, &zero, x0, &girsanov_config(0.2, 1e-3, 200, 200)).unwrap();
    assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
}

#[test]
fn girsanov_identity_against_semigroup() {
    let p = bm_interval();
    let (_, f, lambda) = bm_field(1.0 / 128.0);
    let x0 = [0.5, 0.0];
    let window = |x: &Point| if x[0] > 0.4 && x[0] < 0.6 { 1.0 } else { 0.0 };
    let r = mc_girsanov_check(&p, Control::Constant(0), &f, lambda, &window, x0, &girsanov_config(1.0, 1e-5, 40_000, 4_000)).unwrap();
    assert!(r.overlap, "{r:?}");
    // dense semigroup at h = 1/256
    let g = build_grid(&p, 1.0 / 256.0).unwrap();
    let gen = assemble_action(&g, &p, 0, DriftScheme::default());
    let ind = DVector::from_iterator(g.n(), g.all_coords().iter().map(window));
    let exact = (expm(&gen.matrix.to_dense(), 1.0) * ind)[g.nearest_node(&x0)];
    assert!(exact >= r.rhs_ci[0] && exact <= r.rhs_ci[1], "{exact} vs {r:?}");
    assert!(exact >= r.lhs_ci[0] && exact <= r.lhs_ci[1], "{exact} vs {r:?}");
}

#[test]
fn csv_exports() {
    let e = simulate_killed(&bm_interval(), Control::Constant(0), [0.5, 0.0], 1e-3, 0.05, 4, 1).unwrap();
    let mut buf = Vec::new();
    e.write_csv(1, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next(), Some("path,exit_time,censored,x1"));
    assert_eq!(text.lines().count(), 5);
    let (g, _, _) = bm_field(0.25);
    let mut buf = Vec::new();
    write_histogram_csv(&g, &[0.2, 0.5, 0.3], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "x1,mass\n0.25,2e-1\n0.5,5e-1\n0.75,3e-1\n");
}
