//! `exitrate`: solve, optimize, condition, simulate and verify exit-rate
//! problems from the command line.

mod commands;
mod config;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;
use thiserror::Error;

use config::{CommonArgs, Defaults, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Run(String),
    #[error(transparent)]
    Problem(#[from] exitrate::problem::ProblemError),
    #[error(transparent)]
    Discretize(#[from] exitrate::discretize::DiscretizeError),
    #[error(transparent)]
    Eigen(#[from] exitrate::eigen::EigenError),
    #[error(transparent)]
    Control(#[from] exitrate::control::ControlError),
    #[error(transparent)]
    QProcess(#[from] exitrate::qprocess::QProcessError),
    #[error(transparent)]
    Variational(#[from] exitrate::variational::VariationalError),
    #[error(transparent)]
    Mc(#[from] exitrate::mc::McError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Threads(String),
}

#[derive(Debug, Parser)]
#[command(name = "exitrate", version, about = "Optimal exit rates of controlled diffusions on boxes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal eigenpair under the first action everywhere.
    Solve(CommonArgs),
    /// Policy iteration for the optimal exit rate.
    Optimize(CommonArgs),
    /// Conditioned process: stationary laws, survival asymptotics, Lyapunov certificate.
    Qprocess(CommonArgs),
    /// Occupation-measure linear program.
    Variational(CommonArgs),
    /// Monte Carlo exit rate, conditioned occupancy and change of measure.
    Simulate(CommonArgs),
    /// The acceptance suite.
    Verify(CommonArgs),
    /// Four expressions for the optimal exit rate.
    Representations(CommonArgs),
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("EXITRATE_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| CliError::Threads(format!("EXITRATE_THREADS={v:?} is not a count")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Threads(e.to_string()))?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<bool, CliError> {
    init_threads()?;
    let (name, args, defaults, run): (&str, CommonArgs, Defaults, fn(&RunConfig) -> Result<commands::Outcome, CliError>) = match command {
        Command::Solve(a) => ("solve", a, Defaults::default(), commands::solve),
        Command::Optimize(a) => ("optimize", a, Defaults::default(), commands::optimize),
        Command::Qprocess(a) => ("qprocess", a, Defaults::default(), commands::qprocess),
        Command::Variational(a) => ("variational", a, Defaults { h: 1.0 / 8.0, ..Defaults::default() }, commands::variational),
        Command::Simulate(a) => ("simulate", a, Defaults::default(), commands::simulate),
        Command::Verify(a) => ("verify", a, Defaults { horizon: 1.5, ..Defaults::default() }, commands::verify),
        Command::Representations(a) => ("representations", a, Defaults::default(), commands::representations_cmd),
    };
    let cfg = RunConfig::resolve(&args, defaults)?;
    let outcome = run(&cfg)?;
    let report = json!({ "command": name, "config": cfg, "seed": cfg.seed, "pass": outcome.pass, "result": outcome.report });
    let text = serde_json::to_string_pretty(&report).expect("reports serialize") + "\n";
    match &cfg.out {
        Some(dir) => {
            std::fs::write(dir.join(format!("{name}.json")), &text)?;
            for (file, bytes) in &outcome.files {
                std::fs::write(dir.join(file), bytes)?;
            }
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    // Exit code 2 is reserved for failed checks, so usage errors map to 1.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
