//! `trimlab`: norming tables, Monte Carlo checks of trimmed-sum mean
//! convergence, the doubling-map counterexample, ψ estimates and the
//! interval-map checklist.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands::*;

#[derive(Debug)]
pub enum CliError {
    /// Invalid flags or config: exit 2.
    Usage(String),
    /// Failure while running: exit 1.
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

#[derive(Parser)]
#[command(name = "trimlab", version, about = "Trimmed Birkhoff-sum laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate b_n, ζ_n, g_n, d_n and the ratio diagnostic.
    NormingTable(NormingArgs),
    /// Monte Carlo check of mean convergence of S_n^{b_n}/d_n.
    VerifyMean(VerifyMeanArgs),
    /// Tail diagnostics of S_n^{b_n} for the doubling map with χ = x^{-γ}.
    Counterexample(CounterexampleArgs),
    /// Restricted ψ-mixing lower bounds across lags.
    Mixing(MixingArgs),
    /// Empirical truncated sums against their exact expectation.
    TruncationCheck(TruncationArgs),
    /// Checklist for a step observable on a piecewise affine map.
    ValidateMap(ValidateMapArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config or a manifest.json from a previous run; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads for replica parallelism.
    #[arg(long, env = "TRIMLAB_WORKERS")]
    pub workers: Option<usize>,
    /// Output directory for report.csv, manifest.json and summary.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also emit tidy long-format plot data (plot.csv, or stdout without --out).
    #[arg(long)]
    pub plot_data: bool,
    /// Record wall time in summary.json (makes it run-dependent).
    #[arg(long)]
    pub record_wall_time: bool,
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    let sub = matches.subcommand_name().map(str::to_owned);
    let cli = Cli::from_arg_matches(&matches).unwrap_or_else(|e| e.exit());
    let cancel = Arc::new(AtomicBool::new(false));
    {
        let cancel = cancel.clone();
        // a second handler install only fails in embedding contexts
        let _ = ctrlc::set_handler(move || cancel.store(true, Ordering::Relaxed));
    }
    let result = match cli.command {
        Command::NormingTable(a) => cmd_norming_table(a),
        Command::VerifyMean(a) => cmd_verify_mean(a, cancel),
        Command::Counterexample(a) => cmd_counterexample(a, cancel),
        Command::Mixing(a) => cmd_mixing(a, cancel),
        Command::TruncationCheck(a) => cmd_truncation_check(a, cancel),
        Command::ValidateMap(a) => cmd_validate_map(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trimlab: {e}");
            if let (CliError::Usage(_), Some(sub)) = (&e, sub) {
                let mut cmd = Cli::command();
                cmd.build();
                if let Some(c) = cmd.find_subcommand_mut(&sub) {
                    eprintln!("\n{}\nFor more information, try 'trimlab {sub} --help'.", c.render_usage());
                }
            }
            ExitCode::from(e.code())
        }
    }
}
