use std::path::{Path, PathBuf};

use clap::Args;
use exitrate::control::Mode;
use exitrate::problem::{lookup, validate_problem, ProblemSpec};
use serde::Serialize;

use crate::CliError;

pub const DEFAULT_PROBLEM: &str = "bm-interval";
pub const DEFAULT_H: f64 = 1.0 / 64.0;
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Catalog name (`bm-interval`, `drift-interval[:c]`, `bang-bang`,
    /// `rect-2d[:b]`) or path to a JSON problem file.
    #[arg(long, default_value = DEFAULT_PROBLEM)]
    pub problem: String,
    /// Grid spacing; must divide every side of the box.
    #[arg(long)]
    pub h: Option<f64>,
    /// `max` for the minimal exit rate, `min` for the maximal one.
    #[arg(long, default_value = "max")]
    pub mode: Mode,
    /// Monte Carlo time step.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Monte Carlo horizon.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Monte Carlo path count.
    #[arg(long)]
    pub paths: Option<usize>,
    /// Master seed.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Directory for the JSON report and CSV data (stdout if absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Eigenvalue bracket tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Everything a run depends on, echoed into its report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub problem: String,
    pub problem_spec: ProblemSpec,
    pub h: f64,
    pub mode: Mode,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub out: Option<PathBuf>,
}

/// Per-command defaults for the optional flags.
pub struct Defaults {
    pub h: f64,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults { h: DEFAULT_H, dt: 1e-4, horizon: 2.0, paths: 100_000 }
    }
}

fn positive(name: &'static str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("--{name} must be positive, got {v}")))
    }
}

fn load_problem(arg: &str) -> Result<ProblemSpec, CliError> {
    let path = Path::new(arg);
    let looks_like_file = path.extension().is_some_and(|e| e == "json") || arg.contains(std::path::MAIN_SEPARATOR);
    let spec = if path.is_file() || looks_like_file { ProblemSpec::load(path)? } else { lookup(arg)? };
    validate_problem(&spec)?;
    Ok(spec)
}

impl RunConfig {
    pub fn resolve(args: &CommonArgs, defaults: Defaults) -> Result<Self, CliError> {
        let problem_spec = load_problem(&args.problem)?;
        if let Some(out) = &args.out {
            std::fs::create_dir_all(out)?;
        }
        if args.paths == Some(0) {
            return Err(CliError::Config("--paths must be positive".into()));
        }
        Ok(RunConfig {
            problem: args.problem.clone(),
            problem_spec,
            h: positive("h", args.h.unwrap_or(defaults.h))?,
            mode: args.mode,
            dt: positive("dt", args.dt.unwrap_or(defaults.dt))?,
            horizon: positive("T", args.horizon.unwrap_or(defaults.horizon))?,
            paths: args.paths.unwrap_or(defaults.paths),
            seed: args.seed,
            tol: positive("tol", args.tol.unwrap_or(exitrate::eigen::DEFAULT_TOL))?,
            out: args.out.clone(),
        })
    }
}
