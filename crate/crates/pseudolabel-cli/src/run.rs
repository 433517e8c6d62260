//! The `run` command: execute every (criterion, seed) cell of an experiment
//! and write its outputs.
//!
//! Layout under the output directory:
//!
//! * `summary.csv` — one row per successful cell with columns `criterion`,
//!   `seed`, `final_accuracy`, `eval_accuracies`, `wall_time_s`. Accuracy
//!   cells are empty when no test set exists; `eval_accuracies` packs the
//!   evaluation cadence as `;`-separated `iteration:accuracy` pairs.
//! * `trajectories/<criterion>_seed<seed>_steps.csv` — one row per engine
//!   step; `…_scores.csv` with the full per-candidate score table is added
//!   when the config sets `write_scores = true`.
//! * `trajectories/<criterion>_seed<seed>_steps_partial.csv` — steps
//!   completed before a mid-run failure; only written for failed cells.
//!
//! Cells run independently, in parallel up to `--jobs`, and every file is
//! written to a temporary sibling and renamed into place, so readers never
//! observe a half-written CSV. Failed cells do not abort the others: the
//! summary keeps all successful rows and the command exits 1 afterwards.

use std::fs;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pseudolabel::engine::{write_scores_csv, write_step_records_csv, write_steps_csv};
use pseudolabel::{
    generate, load_csv, run as engine_run, CriterionSpec, Dataset, ModelSpec, PoolPoint,
    Trajectory,
};
use rayon::prelude::*;
use tempfile::NamedTempFile;

use crate::config::{DataSource, Experiment};
use crate::{CliError, OUTPUT_ROOT_ENV};

pub struct RunOptions {
    pub config: PathBuf,
    pub force: bool,
    /// Cell parallelism; `None` lets the thread pool pick.
    pub jobs: Option<usize>,
}

/// One summary row. Kept public so tests can assert against the parsed file.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub criterion: String,
    pub seed: u64,
    pub final_accuracy: Option<f64>,
    /// (iteration, test accuracy) at every fired evaluation cadence point.
    pub evals: Vec<(usize, f64)>,
    pub wall_secs: f64,
}

/// Applies the output-root override: a set, non-empty [`OUTPUT_ROOT_ENV`]
/// becomes the parent of the configured directory.
pub fn resolve_output_dir(configured: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(configured),
        _ => configured.to_path_buf(),
    }
}

pub fn cmd_run(opts: &RunOptions) -> Result<(), CliError> {
    if opts.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let experiment = Experiment::load(&opts.config)?;
    let out_dir = resolve_output_dir(&experiment.output_dir);
    let summary_path = out_dir.join("summary.csv");
    if summary_path.exists() && !opts.force {
        return Err(CliError::Refusal(format!(
            "{} already exists; rerun with --force to overwrite",
            summary_path.display()
        )));
    }
    let trajectory_dir = out_dir.join("trajectories");
    fs::create_dir_all(&trajectory_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", trajectory_dir.display())))?;

    let cells: Vec<(&CriterionSpec, u64)> = experiment
        .criteria
        .iter()
        .flat_map(|c| experiment.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let results: Vec<Result<SummaryRow, String>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(criterion, seed)| run_cell(&experiment, &out_dir, criterion, seed))
            .collect()
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(row) => rows.push(row),
            Err(message) => failures.push(message),
        }
    }
    write_atomic(&summary_path, |w| write_summary(&rows, w)).map_err(CliError::Runtime)?;
    println!(
        "{} of {} cells succeeded; summary at {}",
        rows.len(),
        cells.len(),
        summary_path.display()
    );
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "{} of {} cells failed:\n{}",
            failures.len(),
            cells.len(),
            failures.join("\n")
        )))
    }
}

fn run_cell(
    experiment: &Experiment,
    out_dir: &Path,
    criterion: &CriterionSpec,
    seed: u64,
) -> Result<SummaryRow, String> {
    let start = Instant::now();
    let name = criterion.kind.name();
    let tag = |e: &dyn std::fmt::Display| format!("{name} seed {seed}: {e}");
    let (labeled, pool, test) = load_cell_data(experiment, seed).map_err(|e| tag(&e))?;
    let spec = ModelSpec::standard(labeled.dim());
    let config = experiment.engine_config(criterion, seed);
    let file = |suffix: &str| {
        out_dir
            .join("trajectories")
            .join(format!("{name}_seed{seed}_{suffix}.csv"))
    };
    match engine_run(&labeled, pool, &spec, &config, test.as_ref()) {
        Ok(trajectory) => {
            write_atomic(&file("steps"), |w| write_steps_csv(&trajectory, w))
                .map_err(|e| tag(&e))?;
            if experiment.write_scores {
                write_atomic(&file("scores"), |w| write_scores_csv(&trajectory, w))
                    .map_err(|e| tag(&e))?;
            }
            Ok(summary_row(name, seed, &trajectory, start.elapsed().as_secs_f64()))
        }
        Err(error) => {
            let partial = file("steps_partial");
            match write_atomic(&partial, |w| write_step_records_csv(&error.partial_steps, w)) {
                Ok(()) => Err(tag(&format!(
                    "{error} ({} partial steps flushed to {})",
                    error.partial_steps.len(),
                    partial.display()
                ))),
                Err(flush_error) => Err(tag(&format!(
                    "{error}; flushing the partial trajectory also failed: {flush_error}"
                ))),
            }
        }
    }
}

fn load_cell_data(
    experiment: &Experiment,
    seed: u64,
) -> Result<(Dataset, Vec<PoolPoint>, Option<Dataset>), String> {
    match &experiment.data {
        DataSource::Synthetic(source) => {
            let data = generate(&source.config_for_seed(seed)).map_err(|e| e.to_string())?;
            Ok((data.labeled, data.pool, Some(data.test)))
        }
        DataSource::Csv { train, schema, test } => {
            let (labeled, pool) =
                load_csv(train, schema).map_err(|e| format!("{}: {e}", train.display()))?;
            let test = match test {
                Some(path) => {
                    let (test_set, unlabeled) =
                        load_csv(path, schema).map_err(|e| format!("{}: {e}", path.display()))?;
                    if !unlabeled.is_empty() {
                        return Err(format!(
                            "{}: test file contains {} unlabeled rows",
                            path.display(),
                            unlabeled.len()
                        ));
                    }
                    Some(test_set)
                }
                None => None,
            };
            Ok((labeled, pool, test))
        }
    }
}

fn summary_row(criterion: &str, seed: u64, trajectory: &Trajectory, wall_secs: f64) -> SummaryRow {
    SummaryRow {
        criterion: criterion.to_string(),
        seed,
        final_accuracy: trajectory.final_accuracy(),
        evals: trajectory
            .steps
            .iter()
            .filter_map(|s| s.test_metrics.map(|m| (s.iteration, m.accuracy)))
            .collect(),
        wall_secs,
    }
}

fn write_summary(rows: &[SummaryRow], writer: impl IoWrite) -> Result<(), pseudolabel::Error> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "criterion",
        "seed",
        "final_accuracy",
        "eval_accuracies",
        "wall_time_s",
    ])?;
    for row in rows {
        let evals = row
            .evals
            .iter()
            .map(|(iteration, accuracy)| format!("{iteration}:{accuracy}"))
            .collect::<Vec<_>>()
            .join(";");
        out.write_record([
            row.criterion.clone(),
            row.seed.to_string(),
            row.final_accuracy.map(|a| a.to_string()).unwrap_or_default(),
            evals,
            row.wall_secs.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes through a temporary file in the target's directory and renames it
/// into place, so concurrent readers and crashed runs never see partial
/// content.
fn write_atomic<F>(path: &Path, write_fn: F) -> Result<(), String>
where
    F: FnOnce(&mut NamedTempFile) -> Result<(), pseudolabel::Error>,
{
    let dir = path
        .parent()
        .ok_or_else(|| format!("{}: path has no parent directory", path.display()))?;
    let mut tmp = NamedTempFile::new_in(dir)
        .map_err(|e| format!("temp file in {}: {e}", dir.display()))?;
    write_fn(&mut tmp).map_err(|e| format!("writing {}: {e}", path.display()))?;
    tmp.persist(path)
        .map_err(|e| format!("renaming into {}: {e}", path.display()))?;
    Ok(())
}
