//! `basisfit` command-line front end.

mod commands;
mod config;
mod output;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "basisfit", version, about = "Meshless spectral-basis PDE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one configured problem and write coefficients, metrics and history.
    Solve {
        config: PathBuf,
        /// Overrides the config's output_dir and BASISFIT_OUTPUT_DIR.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Solve at several mode counts and tabulate errors against a reference.
    Sweep {
        config: PathBuf,
        /// Comma-separated highest mode indices, e.g. 10,20,30,40.
        #[arg(long)]
        modes: String,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a coefficient file on a tensor grid such as x:-1:1:200,y:-1:1:200.
    EvalGrid {
        coefficients: PathBuf,
        #[arg(long)]
        grid: String,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Singular values of a field's coefficients reshaped to RxC.
    Svd {
        coefficients: PathBuf,
        #[arg(long)]
        reshape: String,
        #[arg(long)]
        field: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in problems with their default optimizers.
    ListProblems,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { config, output_dir } => commands::solve(&config, output_dir.as_deref()),
        Command::Sweep { config, modes, output_dir } => {
            let modes = commands::parse_modes(&modes)?;
            commands::sweep(&config, &modes, output_dir.as_deref())
        }
        Command::EvalGrid { coefficients, grid, out } => commands::eval_grid(&coefficients, &grid, out.as_deref()),
        Command::Svd { coefficients, reshape, field, out } => {
            commands::svd(&coefficients, &reshape, field.as_deref(), out.as_deref())
        }
        Command::ListProblems => {
            print!("{}", commands::list_problems());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
