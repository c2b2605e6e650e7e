#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_diagnose, cmd_rank, combine_codes, run_many, EXIT_CONFIG, EXIT_OK};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Output(String),
}

impl CliError {
    pub fn config(field: &str, message: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{field}: {message}"))
    }

    pub fn exit_code(&self) -> i32 {
        EXIT_CONFIG
    }
}

/// Survey weight calibration over a path of increasing target penalties.
#[derive(Debug, Parser)]
#[command(name = "calpath", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the path for one or more configurations.
    ///
    /// Exit status: 0 full path, 2 partial path, 1 configuration error.
    Run {
        /// JSON run configuration; repeat to run several.
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        /// Output directory (one subdirectory per config when several are given).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for independent configurations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write weights for the last penalty value only.
        #[arg(long)]
        final_only: bool,
    },
    /// Report zero-support rows and rank deficiency into findings.csv.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Numerical rank of a Matrix Market file or of a config's stacked rows.
    Rank {
        #[arg(long, conflicts_with = "config")]
        matrix: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Singular values below tol times the largest count as zero.
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

fn finish(r: Result<String, CliError>) -> i32 {
    match r {
        Ok(line) => {
            println!("{line}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, jobs, final_only } => {
            let reports = run_many(&config, out.as_deref(), final_only, jobs);
            for r in &reports {
                if r.code == EXIT_OK {
                    println!("{}", r.line);
                } else {
                    eprintln!("{}", r.line);
                }
            }
            combine_codes(reports.iter().map(|r| r.code))
        }
        Command::Diagnose { config, out } => finish(cmd_diagnose(&config, out.as_deref())),
        Command::Rank { matrix, config, tol } => finish(cmd_rank(matrix.as_deref(), config.as_deref(), tol)),
    };
    ExitCode::from(code as u8)
}
