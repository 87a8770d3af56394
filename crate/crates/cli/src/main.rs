//! `kronsolve` command-line driver.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use kronsolve::verify::DEFAULT_SIZE_CAP;
use kronsolve::Error;

use crate::commands::Outcome;
use crate::config::{ConfigError, RunConfig, DEFAULT_SEED};

#[derive(Parser)]
#[command(name = "kronsolve", version, about = "Preconditioned global Krylov solvers for multiterm Sylvester equations")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Output directory (overrides `output.dir` of the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the operator factors, manifest and right-hand side of a problem.
    Generate(ConfigArg),
    /// Build a preconditioner and report on it.
    Precond(ConfigArg),
    /// Solve the configured equation.
    Solve(ConfigArg),
    /// Run the oracle verification suite.
    Verify {
        /// Optional config; only its seed is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Largest materialized dimension `n·m`.
        #[arg(long, default_value_t = DEFAULT_SIZE_CAP)]
        size_cap: usize,
    },
}

fn load(path: &Path, out: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = out {
        cfg.output.dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Outcome> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(ConfigError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match &cli.command {
        Command::Generate(c) => commands::cmd_generate(&load(&c.config, &cli.out)?),
        Command::Precond(c) => commands::cmd_precond(&load(&c.config, &cli.out)?, cli.threads),
        Command::Solve(c) => commands::cmd_solve(&load(&c.config, &cli.out)?, cli.threads),
        Command::Verify { config, size_cap } => {
            let seed = match config {
                Some(p) => RunConfig::load(p)?.seed,
                None => DEFAULT_SEED,
            };
            commands::cmd_verify(*size_cap, seed, cli.threads, cli.out.as_deref())
        }
    }
}

/// Exit code for an error: 3 for numerical failures of the library, 1 for
/// everything else (configuration, usage, I/O).
fn error_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().filter_map(|e| e.downcast_ref::<Error>()).any(|e| {
        matches!(
            e,
            Error::Factorization(_)
                | Error::DependentFactors { .. }
                | Error::SingularCoefficient { .. }
                | Error::NoUniqueSolution(_)
                | Error::ReductionConditioning { .. }
        )
    });
    if numerical {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(error_code(&err))
        }
    }
}
