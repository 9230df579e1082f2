//! `pagetrace` subcommands as library functions, so tests can drive them
//! without a subprocess.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod cmd;
mod logging;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pagetrace", version, about = "Page-evidence reasoning data, checkpoint merging and eval bookkeeping")]
pub struct Cli {
    /// Log filter, e.g. `info` or `pagetrace_core=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    /// Write JSON logs here instead of stderr.
    #[arg(long, global = true)]
    pub log_file: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the generation pipeline described by a TOML config.
    Generate(cmd::generate::GenerateArgs),
    /// Mix JSONL sources into one training file.
    BuildDataset(cmd::dataset::BuildDatasetArgs),
    /// Task-arithmetic merge of safetensors checkpoints.
    Merge(cmd::merge::MergeArgs),
    /// Normalize benchmark scores and report VA/LCA, deltas and run variance.
    EvalAgg(cmd::evalagg::EvalAggArgs),
    /// Output length and think-block statistics over a response JSONL.
    Stats(cmd::stats::StatsArgs),
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = logging::init(&cli.log_level, cli.log_file.as_deref()) {
        eprintln!("pagetrace: {e}");
        return EXIT_USAGE;
    }
    let result = match &cli.command {
        Command::Generate(a) => cmd::generate::run(a),
        Command::BuildDataset(a) => cmd::dataset::run(a),
        Command::Merge(a) => cmd::merge::run(a),
        Command::EvalAgg(a) => cmd::evalagg::run(a),
        Command::Stats(a) => cmd::stats::run(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            tracing::error!(error = %e, "command failed");
            eprintln!("pagetrace: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(["pagetrace", "merge", "--base", "b", "--tuned", "t1", "--alpha", "0.5", "--tuned", "t2", "--alpha", "-0.1", "--out", "o"]).unwrap();
        let Command::Merge(m) = cli.command else { panic!("not merge") };
        assert_eq!(m.tuned.len(), 2);
        assert_eq!(m.alpha, vec![0.5, -0.1]);
        assert!(Cli::try_parse_from(["pagetrace", "stats"]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Config("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), EXIT_RUNTIME);
    }
}
