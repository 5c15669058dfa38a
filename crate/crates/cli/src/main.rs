mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Soft-error propagation analysis on mini-IR programs.
#[derive(Parser, Debug)]
#[command(name = "fliptrace", version)]
pub struct Cli {
    /// Seed for campaign sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for campaigns and model evaluation (0: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Exit with status 4 when an analysis had to fall back to degraded mode.
    #[arg(long, global = true)]
    pub strict: bool,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// TOML file overriding defaults (budget, seed, jobs, [campaign], [model]).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Instruction budget for the fault-free run.
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct ProgramArgs {
    /// Mini-IR source file.
    #[arg(long)]
    pub program: PathBuf,
    /// Input bindings, one `LOCATION = VALUE` per line.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run fault-free and write the trace (`.jsonl` for JSON lines, anything else binary).
    Trace {
        #[command(flatten)]
        prog: ProgramArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run once with a single bit flip and report the outcome.
    Inject {
        #[command(flatten)]
        prog: ProgramArgs,
        /// INDEX:TARGET:BIT, TARGET is `result` or `operandK`.
        #[arg(long)]
        fault: String,
        /// Also write the faulty trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Faulty run, alignment, ACL table, region verdicts and patterns.
    Analyze {
        #[command(flatten)]
        prog: ProgramArgs,
        #[arg(long)]
        fault: String,
        /// Previously recorded fault-free trace; must come from the same program.
        #[arg(long)]
        golden_trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Alive-corrupted-location counts as CSV.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Statistical or exhaustive fault-injection campaign.
    Campaign {
        #[command(flatten)]
        prog: ProgramArgs,
        /// `program[:class]` or `region:ID[:class]`, class is inputs|internals|both.
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        /// Assumed success proportion for sizing.
        #[arg(long)]
        proportion: Option<f64>,
        /// Fixed sample size instead of a statistical one.
        #[arg(long, conflicts_with = "exhaustive")]
        samples: Option<u64>,
        #[arg(long)]
        exhaustive: bool,
        /// Keep per-fault records in the JSON output.
        #[arg(long)]
        records: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pattern-rate features: structural counts of the fault-free run, or
    /// detected instances when a fault is given.
    Features {
        #[command(flatten)]
        prog: ProgramArgs,
        #[arg(long)]
        fault: Option<String>,
        /// Row label (defaults to the program file stem).
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Success-rate regression over per-benchmark pattern rates.
    Model {
        #[arg(value_enum)]
        action: ModelAction,
        /// Benchmark CSV (defaults to the bundled table).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ridge penalty; 0 is ordinary least squares.
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize campaign or model reports as a table, or CSV with --format csv.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelAction {
    Fit,
    Loo,
    Importance,
}

/// An error with the exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 2, error: error.into() }
    }

    pub fn golden(error: impl Into<anyhow::Error>) -> Self {
        Self { code: 3, error: error.into() }
    }

    pub fn degraded(msg: impl Into<String>) -> Self {
        Self {
            code: 4,
            error: anyhow::anyhow!(msg.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("fliptrace: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
