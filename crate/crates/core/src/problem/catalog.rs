//! Benchmark problems with known answers.

use super::{Expr, ProblemError, ProblemSpec};

pub const BM_INTERVAL: &str = "bm-interval";
pub const DRIFT_INTERVAL: &str = "drift-interval";
pub const BANG_BANG: &str = "bang-bang";
pub const RECT_2D: &str = "rect-2d";

fn e(s: &str) -> Expr {
    Expr::parse(s).expect("catalog expressions are well formed")
}

fn c(v: f64) -> Expr {
    Expr::constant(v)
}

/// Brownian motion on (0, 1): `lambda = pi^2 / 2`.
pub fn bm_interval() -> ProblemSpec {
    ProblemSpec {
        name: BM_INTERVAL.into(),
        dim: 1,
        bounds: vec![[0.0, 1.0]],
        actions: vec!["none".into()],
        drift: vec![vec![c(0.0)]],
        sigma: vec![e("1")],
        c0: 1.0,
    }
}

/// Constant drift `c` on (0, 1): `lambda = pi^2 / 2 + c^2 / 2`.
pub fn drift_interval(drift: f64) -> ProblemSpec {
    ProblemSpec {
        name: DRIFT_INTERVAL.into(),
        dim: 1,
        bounds: vec![[0.0, 1.0]],
        actions: vec!["none".into()],
        drift: vec![vec![c(drift)]],
        sigma: vec![e("1")],
        c0: 1.0,
    }
}

/// Unit drift in either direction on (-1, 1), `m(x, u) = u`.
pub fn bang_bang() -> ProblemSpec {
    ProblemSpec {
        name: BANG_BANG.into(),
        dim: 1,
        bounds: vec![[-1.0, 1.0]],
        actions: vec!["-1".into(), "+1".into()],
        drift: vec![vec![c(-1.0)], vec![c(1.0)]],
        sigma: vec![e("1")],
        c0: 1.0,
    }
}

/// Unit square with drift `{-b, 0, +b}` along the first axis.
pub fn rect_2d(b: f64) -> ProblemSpec {
    ProblemSpec {
        name: RECT_2D.into(),
        dim: 2,
        bounds: vec![[0.0, 1.0], [0.0, 1.0]],
        actions: vec!["-b".into(), "0".into(), "+b".into()],
        drift: vec![vec![c(-b), c(0.0)], vec![c(0.0), c(0.0)], vec![c(b), c(0.0)]],
        sigma: vec![e("1"), e("1")],
        c0: 1.0,
    }
}

/// The built-in benchmarks at their default parameters (`c = 1`, `b = 1`).
pub fn builtin_catalog() -> Vec<ProblemSpec> {
    vec![bm_interval(), drift_interval(1.0), bang_bang(), rect_2d(1.0)]
}

/// Resolves `name` or `name:param` (e.g. `drift-interval:2`) to a catalog
/// problem.
pub fn lookup(spec: &str) -> Result<ProblemSpec, ProblemError> {
    let (name, param) = match spec.split_once(':') {
        Some((n, p)) => {
            let v: f64 = p.trim().parse().map_err(|_| ProblemError::UnknownProblem(spec.to_string()))?;
            (n.trim(), Some(v))
        }
        None => (spec.trim(), None),
    };
    let mut p = match (name, param) {
        (BM_INTERVAL, None) => bm_interval(),
        (DRIFT_INTERVAL, p) => drift_interval(p.unwrap_or(1.0)),
        (BANG_BANG, None) => bang_bang(),
        (RECT_2D, p) => rect_2d(p.unwrap_or(1.0)),
        _ => return Err(ProblemError::UnknownProblem(spec.to_string())),
    };
    if param.is_some() {
        p.name = spec.trim().to_string();
    }
    Ok(p)
}
