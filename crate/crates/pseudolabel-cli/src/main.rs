//! Command-line entry point; all behavior lives in the library modules.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pseudolabel_cli::compare::{cmd_compare, CompareOptions};
use pseudolabel_cli::run::{cmd_run, RunOptions};
use pseudolabel_cli::{CliError, OUTPUT_ROOT_ENV};

fn help_footer() -> String {
    format!(
        "Exit codes: 0 success, 1 runtime failure, 2 invalid config or input, 3 refusal \
         to overwrite without --force.\nSetting {OUTPUT_ROOT_ENV} re-roots every output \
         directory under it."
    )
}

/// Self-training experiment harness: run seeded criterion comparisons and
/// summarize their results.
#[derive(Parser)]
#[command(name = "pseudolabel", version, after_help = help_footer())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (criterion, seed) cell of a TOML experiment file, writing
    /// trajectory CSVs and a summary CSV under its output directory.
    Run {
        /// Path to the experiment TOML file.
        config: PathBuf,
        /// Overwrite outputs from a previous run.
        #[arg(long)]
        force: bool,
        /// Maximum cells to run in parallel (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Merge summary CSVs and print per-criterion statistics with paired
    /// per-seed differences against a baseline criterion.
    Compare {
        /// Summary files produced by `run`.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Criterion to pair against (default: first criterion found).
        #[arg(long)]
        baseline: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Run { config, force, jobs } => cmd_run(&RunOptions { config, force, jobs }),
        Command::Compare { files, baseline } => {
            cmd_compare(&CompareOptions { files, baseline }, &mut std::io::stdout())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("{error}");
            ExitCode::from(error.exit_code())
        }
    }
}
