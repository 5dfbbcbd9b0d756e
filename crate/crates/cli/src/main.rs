//! Command-line front end for the mutual-insurance weight mechanism.
//!
//! Subcommands: `simulate` (Monte Carlo panel + statistics), `check-ic`
//! (truth-telling slack over a weight grid), `baseline` (promised-utility
//! contrast model), `neumann` (linear fixed-point solver), and `report`
//! (summary table over stats CSVs). Identical configuration and seed yield
//! byte-identical output files.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lambda_mutual_core::error::Error as CoreError;

/// Error carrying its process exit code and a machine-parsable kind.
#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            exit_code: 1,
            kind: "config",
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            exit_code: 5,
            kind: "io",
            message: message.into(),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(err: CoreError) -> Self {
        let (exit_code, kind) = match &err {
            CoreError::Domain { .. }
            | CoreError::Range { .. }
            | CoreError::InvalidInput(_)
            | CoreError::InvalidConfig(_)
            | CoreError::ContractionViolation { .. }
            | CoreError::EmptyCrossSection { .. } => (2, "domain"),
            CoreError::Infeasible { .. } => (3, "infeasible"),
            CoreError::NonConvergence { .. } => (4, "no-convergence"),
        };
        Self {
            exit_code,
            kind,
            message: err.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "lambda-mutual",
    version,
    about = "Mutual insurance with martingale allocation weights: simulate the mechanism, \
             verify its incentives, and contrast it with a promised-utility baseline"
)]
struct Cli {
    /// Cap on internal parallelism (0 = automatic).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the weight-mechanism panel and write per-record and
    /// per-period CSVs.
    Simulate {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Number of independent agents.
        #[arg(long, default_value_t = 100_000)]
        agents: u64,
        /// Number of weight transitions; records cover t = 0..=periods.
        #[arg(long, default_value_t = 50)]
        periods: u32,
        /// Override the configured rng seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Panel CSV destination (t,agent,lambda,income,transfer,consumption,value).
        #[arg(long)]
        panel_out: Option<PathBuf>,
        /// Statistics CSV destination
        /// (t,mean_value,var_value,mean_lambda,rank_mobility,infeasible_count).
        #[arg(long)]
        stats_out: Option<PathBuf>,
    },
    /// Score truth telling over a grid of weights and write the slack matrix.
    CheckIc {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated weights to check (default 0.25,0.5,1,2,4).
        #[arg(long, value_delimiter = ',')]
        lambda_grid: Option<Vec<f64>>,
        /// Deviation convention override: definition | prop1.
        #[arg(long)]
        convention: Option<String>,
        /// Slack CSV destination (lambda,e,e_report,slack); stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the promised-utility baseline and optionally simulate it.
    Baseline {
        /// TOML run configuration.
        #[arg(long)]
        config: PathBuf,
        /// Promised-utility grid size.
        #[arg(long, default_value_t = 200)]
        grid_size: usize,
        /// Value-iteration stopping tolerance (sup norm).
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Drop the truth-telling constraints (full-information contract).
        #[arg(long)]
        full_info: bool,
        /// Simulate promise paths after solving.
        #[arg(long)]
        simulate: bool,
        /// Agents for the simulation.
        #[arg(long, default_value_t = 200_000)]
        agents: u64,
        /// Periods for the simulation.
        #[arg(long, default_value_t = 50)]
        periods: u32,
        /// Override the configured rng seed.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination: with --simulate (t,mean_w,var_w,censored_count),
        /// otherwise the solved table (w,value,transfer_e1,next_w_e1,...).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve x = Lx + b from a whitespace-delimited problem file.
    Neumann {
        /// Problem file: first line n, next n lines the rows of L, last line b.
        problem: PathBuf,
        /// Residual tolerance in the 1-norm.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Aggregate stats CSVs into a summary text table.
    Report {
        /// Statistics CSVs produced by `simulate` or `baseline --simulate`.
        files: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.threads > 0 {
        // Ignore the error if a pool already exists (repeated init in-process).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::Simulate {
            config,
            agents,
            periods,
            seed,
            panel_out,
            stats_out,
        } => commands::simulate(&config, agents, periods, seed, panel_out, stats_out),
        Command::CheckIc {
            config,
            lambda_grid,
            convention,
            out,
        } => commands::check_ic(&config, lambda_grid, convention.as_deref(), out),
        Command::Baseline {
            config,
            grid_size,
            tol,
            full_info,
            simulate,
            agents,
            periods,
            seed,
            out,
        } => commands::baseline(
            &config, grid_size, tol, full_info, simulate, agents, periods, seed, out,
        ),
        Command::Neumann { problem, tol } => commands::neumann(&problem, tol),
        Command::Report { files } => commands::report(&files),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("LAMBDA_MUTUAL_LOG", "error"),
    )
    .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!(
                "error kind={} exit={} msg={:?}",
                err.kind, err.exit_code, err.message
            );
            ExitCode::from(err.exit_code)
        }
    }
}
