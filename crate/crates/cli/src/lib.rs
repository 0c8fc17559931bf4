//! Command-line surface tying the engine together: `run` a split through
//! the pipeline, `eval` predictions, `audit` a benchmark for gold-error
//! candidates, `kappa` for inter-annotator agreement, `clean` for the
//! filtered split, and `report` for the error-type/EX cross-tabulation.
//!
//! Exit codes: 0 on success (per-item failures are reported, not fatal),
//! 1 on module errors, 2 on usage errors (bad flags or paths).

pub mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gbv", version, about = "Text2SQL pipeline, evaluation, and benchmark audit toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the four-agent pipeline over a benchmark split.
    Run(RunArgs),
    /// Evaluate predictions against gold SQL (EX and VES).
    Eval(EvalArgs),
    /// Scan a split for gold-error candidates (detectors only flag).
    Audit(AuditArgs),
    /// Cohen's Kappa between two annotation files.
    Kappa(KappaArgs),
    /// Remove adjudicated gold-error items from a split.
    Clean(CleanArgs),
    /// Cross-tabulate adjudicated error types against EX outcomes.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Live,
    Cache,
    Scripted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SemanticsChoice {
    Multiset,
    Set,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Task JSON file (Spider/BIRD style array).
    #[arg(long)]
    pub tasks: PathBuf,
    /// Schema description JSON (tables.json style).
    #[arg(long)]
    pub tables: PathBuf,
    /// Directory containing one SQLite database per db_id.
    #[arg(long)]
    pub db_root: PathBuf,
    /// LLM backend.
    #[arg(long, value_enum, default_value = "live")]
    pub backend: BackendChoice,
    /// Transcript cache file (JSONL). Required for the cache backend.
    #[arg(long)]
    pub cache_file: Option<PathBuf>,
    /// Strict replay: cache misses fail instead of reaching the network.
    #[arg(long)]
    pub strict_replay: bool,
    /// Scripted responses file (JSONL of {"agent_tag", "text"}).
    #[arg(long)]
    pub script_file: Option<PathBuf>,
    /// Disable the planner (full schema, single composite sub-question).
    #[arg(long)]
    pub no_planner: bool,
    /// Replace the staged reasoning instructions with a zero-shot prompt.
    #[arg(long)]
    pub no_cot: bool,
    /// Disable the validator (initial SQL promoted directly).
    #[arg(long)]
    pub no_validator: bool,
    /// Disable the checker (validator's selection becomes final unchanged).
    #[arg(long)]
    pub no_checker: bool,
    /// Worker parallelism.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    /// Maximum checker repair iterations.
    #[arg(long, default_value_t = 3)]
    pub max_try_time: usize,
    /// Sample values per column in rendered schemas.
    #[arg(long, default_value_t = 3)]
    pub sample_k: usize,
    /// Run directory (default: runs/<timestamp>).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML config file mirroring the optional flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory containing predictions.txt (from `gbv run`).
    #[arg(long, conflicts_with = "predictions")]
    pub run_dir: Option<PathBuf>,
    /// Predictions file (one "item_id<TAB>sql" line per item).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Task JSON file with gold SQL.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Directory containing the benchmark databases.
    #[arg(long)]
    pub db_root: PathBuf,
    /// Timed repetitions per query for the efficiency ratio.
    #[arg(long, default_value_t = 3)]
    pub timing_runs: usize,
    /// Result comparison semantics.
    #[arg(long, value_enum, default_value = "multiset")]
    pub semantics: SemanticsChoice,
    /// Where to write report.json (default: <run-dir>/report.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Task JSON file.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Directory containing the benchmark databases.
    #[arg(long)]
    pub db_root: PathBuf,
    /// Where to write detector candidates (JSONL).
    #[arg(long, default_value = "audit-candidates.jsonl")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KappaArgs {
    /// Exactly two annotation files (repeat the flag).
    #[arg(long = "annotations", required = true, num_args = 1)]
    pub annotations: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    /// Task JSON file of the source split.
    #[arg(long)]
    pub tasks: PathBuf,
    /// Schema description JSON.
    #[arg(long)]
    pub tables: PathBuf,
    /// Directory containing the benchmark databases.
    #[arg(long)]
    pub db_root: PathBuf,
    /// Adjudicated annotation file (JSONL).
    #[arg(long)]
    pub adjudicated: PathBuf,
    /// Where to write the cleaned split (canonical split JSON).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// report.json produced by `gbv eval`.
    #[arg(long)]
    pub report: PathBuf,
    /// Adjudicated annotation file (JSONL).
    #[arg(long)]
    pub adjudicated: PathBuf,
    /// Where to write the audit report JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional bar-chart-ready CSV of per-subtype counts.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Errors split by exit code: usage problems exit 2, everything else 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Other(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Other(e.into())
    }
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => commands::cmd_run(args).map(|_| ()),
        Command::Eval(args) => commands::cmd_eval(args).map(|_| ()),
        Command::Audit(args) => commands::cmd_audit(args),
        Command::Kappa(args) => commands::cmd_kappa(args).map(|_| ()),
        Command::Clean(args) => commands::cmd_clean(args),
        Command::Report(args) => commands::cmd_report(args),
    }
}
