//! Command-line front end: ETF generation, layer-peeled certification,
//! ablation runs, metric reports, and the full reproduction pipeline.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod artifacts;
pub mod checks;
pub mod commands;
pub mod config;
pub mod repro;

pub use config::{ExperimentConfig, LpConfig, SCHEMA_VERSION};

#[derive(Debug, Parser)]
#[command(name = "nc-fscil", version, about = "Fixed-ETF few-shot class-incremental learning toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or verify simplex ETF prototypes
    #[command(subcommand)]
    Etf(EtfCommand),
    /// Layer-peeled optimality certification
    #[command(subcommand)]
    Lp(LpCommand),
    /// Few-shot class-incremental training runs
    #[command(subcommand)]
    Fscil(FscilCommand),
    /// Neural-collapse reports over feature dumps
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// End-to-end reproduction with a PASS/FAIL manifest
    #[command(subcommand)]
    Repro(ReproCommand),
}

#[derive(Debug, Subcommand)]
pub enum EtfCommand {
    Gen {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    Verify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum LpCommand {
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FscilCommand {
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub protos: PathBuf,
    #[arg(long, default_value = "accumulate")]
    pub scope: String,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Report only this session instead of every session in the dump
    #[arg(long)]
    pub session: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ReproCommand {
    Full {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_FAILED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILED
        }
    }
}
