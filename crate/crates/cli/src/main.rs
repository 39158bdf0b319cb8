mod bench;
mod data;
mod diag;
mod manifest;
mod report;
mod search;
mod theorem;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Micro-scale differentiable architecture search laboratory.
#[derive(Debug, Parser)]
#[command(name = "darts-lab", version)]
struct Cli {
    /// Root under which default output directories are created.
    #[arg(long, env = "DARTS_LAB_OUT", default_value = "runs", global = true)]
    out_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a teacher-labelled dataset.
    GenData(data::GenDataArgs),
    /// Build or query the tabular benchmark.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
    /// Run a search, or a grid of searches.
    Search(search::SearchArgs),
    /// Extract diagnostics from a run, or run the linear probe.
    #[command(subcommand)]
    Diag(diag::DiagCommand),
    /// Check the softmax domination bound on random instances.
    #[command(subcommand)]
    Theorem(theorem::TheoremCommand),
    /// Aggregate runs into CSV series and a summary table.
    Report(report::ReportArgs),
}

/// Invalid invocation, detected by the CLI itself.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// A verification step found a violation.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct VerificationFailure(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use darts_lab::Error as E;
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<VerificationFailure>() {
            return 3;
        }
        if cause.is::<serde_json::Error>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Config { .. } | E::Parse(_) | E::UnknownEdge(_) | E::UnknownGenotype(_) | E::Json(_) => 1,
                E::TheoremViolation(_) | E::FingerprintMismatch { .. } | E::SnapshotMismatch => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let out_root = cli.out_root;
    let res = match cli.command {
        Command::GenData(a) => data::run(a, &out_root),
        Command::Bench(c) => bench::run(c, &out_root),
        Command::Search(a) => search::run(a, &out_root),
        Command::Diag(c) => diag::run(c, &out_root),
        Command::Theorem(c) => theorem::run(c, &out_root),
        Command::Report(a) => report::run(a, &out_root),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
