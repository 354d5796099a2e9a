//! `aeval` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid input or
//! config, 3 degenerate statistics (e.g. a constant prediction series).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aeval::dataset::Bucket;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Validation(String),
    Io(String),
    Runtime(String),
    Degenerate(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) | CliError::Runtime(_) => 1,
            CliError::Config(_) | CliError::Validation(_) => 2,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
            CliError::Degenerate(m) => write!(f, "degenerate statistics: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "aeval",
    version,
    about = "Train and evaluate distributional quality probes for generated audio",
    after_help = "Any config field can be overridden with a dotted flag, e.g. \
                  --train.epochs 5 or --train.loss.mode +R."
)]
struct Cli {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for synthesis, splitting, and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Reject unknown manifest fields and incomplete rater groups.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic manifest, feature file, and ground truth.
    Synth {
        /// Directory for ratings.jsonl, features.aevf, and truth.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the manifest, feature file, and split for consistency.
    Validate,
    /// Split clips into train/val/test and write the split file.
    Split,
    /// Build soft target distributions from the manifest.
    Targets,
    /// Train the probe heads and keep the best-validation epoch.
    Train,
    /// Evaluate the model on one split and write reports.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        on: SplitName,
    },
    /// Write dataset statistics: score and prompt-length histograms and
    /// expert/non-expert correlations.
    Report,
}

fn run() -> Result<(), CliError> {
    let (args, overrides) = config::extract_overrides(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let cfg = config::load(cli.config.as_deref(), cli.seed, cli.strict, &overrides)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, out.as_deref()),
        Command::Validate => commands::validate(&cfg),
        Command::Split => commands::make_split(&cfg),
        Command::Targets => commands::targets(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Eval { on } => {
            let bucket = match on {
                SplitName::Train => Bucket::Train,
                SplitName::Val => Bucket::Val,
                SplitName::Test => Bucket::Test,
            };
            commands::eval(&cfg, bucket)
        }
        Command::Report => commands::report(&cfg),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("aeval: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
