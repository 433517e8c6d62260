//! The `compare` command: merge summary files and print a per-criterion
//! table.
//!
//! Every criterion gets the mean and sample standard deviation of its final
//! test accuracy over seeds. With two or more criteria the table adds
//! paired per-seed differences against a baseline criterion — by default
//! the first criterion encountered, or the one named with `--baseline` —
//! plus win/loss/tie counts of those differences. Pairing requires every
//! criterion to cover exactly the same seed set; any hole is reported as an
//! explicit (criterion, seed) list and fails the comparison.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

use crate::CliError;

pub struct CompareOptions {
    pub files: Vec<PathBuf>,
    pub baseline: Option<String>,
}

/// Final accuracies keyed by criterion and seed, with criteria kept in
/// first-appearance order for stable output.
#[derive(Debug, Default)]
struct Accuracies {
    order: Vec<String>,
    by_criterion: BTreeMap<String, BTreeMap<u64, f64>>,
}

pub fn cmd_compare(options: &CompareOptions, out: &mut dyn IoWrite) -> Result<(), CliError> {
    let accuracies = read_summaries(&options.files)?;
    let baseline = pick_baseline(&accuracies, options.baseline.as_deref())?;
    check_seed_coverage(&accuracies)?;
    render_table(&accuracies, &baseline, out)
        .map_err(|e| CliError::Runtime(format!("writing table: {e}")))
}

fn read_summaries(files: &[PathBuf]) -> Result<Accuracies, CliError> {
    let mut acc = Accuracies::default();
    for path in files {
        read_summary(path, &mut acc)?;
    }
    if acc.order.is_empty() {
        return Err(CliError::Config("summary files contain no rows".into()));
    }
    Ok(acc)
}

fn read_summary(path: &Path, acc: &mut Accuracies) -> Result<(), CliError> {
    let fail = |message: String| CliError::Config(format!("{}: {message}", path.display()));
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| fail(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| fail(format!("missing column {name:?}")))
    };
    let criterion_col = column("criterion")?;
    let seed_col = column("seed")?;
    let accuracy_col = column("final_accuracy")?;

    for (index, record) in reader.records().enumerate() {
        let row = index + 2; // header is line 1
        let record = record.map_err(|e| fail(format!("row {row}: {e}")))?;
        let field = |col: usize, name: &str| {
            record
                .get(col)
                .ok_or_else(|| fail(format!("row {row}: missing {name} field")))
        };
        let criterion = field(criterion_col, "criterion")?.to_string();
        let seed: u64 = field(seed_col, "seed")?
            .parse()
            .map_err(|e| fail(format!("row {row}: seed: {e}")))?;
        let accuracy_text = field(accuracy_col, "final_accuracy")?;
        if accuracy_text.is_empty() {
            return Err(fail(format!(
                "row {row}: criterion {criterion:?} seed {seed} has no final accuracy \
                 (was the run missing a test set?)"
            )));
        }
        let accuracy: f64 = accuracy_text
            .parse()
            .map_err(|e| fail(format!("row {row}: final_accuracy: {e}")))?;
        if !acc.by_criterion.contains_key(&criterion) {
            acc.order.push(criterion.clone());
        }
        let seeds = acc.by_criterion.entry(criterion.clone()).or_default();
        if seeds.insert(seed, accuracy).is_some() {
            return Err(fail(format!(
                "row {row}: duplicate cell for criterion {criterion:?} seed {seed}"
            )));
        }
    }
    Ok(())
}

fn pick_baseline(acc: &Accuracies, requested: Option<&str>) -> Result<String, CliError> {
    match requested {
        Some(name) => {
            if acc.by_criterion.contains_key(name) {
                Ok(name.to_string())
            } else {
                Err(CliError::Config(format!(
                    "--baseline {name:?} does not appear in the summaries; criteria present: {}",
                    acc.order.join(", ")
                )))
            }
        }
        None => Ok(acc.order[0].clone()),
    }
}

/// Pairing needs a rectangular (criterion, seed) grid; report every hole.
fn check_seed_coverage(acc: &Accuracies) -> Result<(), CliError> {
    let mut union: Vec<u64> = Vec::new();
    for seeds in acc.by_criterion.values() {
        for &seed in seeds.keys() {
            if !union.contains(&seed) {
                union.push(seed);
            }
        }
    }
    union.sort_unstable();
    let mut missing = Vec::new();
    for name in &acc.order {
        let seeds = &acc.by_criterion[name];
        for &seed in &union {
            if !seeds.contains_key(&seed) {
                missing.push(format!("criterion {name:?} is missing seed {seed}"));
            }
        }
    }
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "seed sets differ across criteria; cannot pair:\n{}",
            missing.join("\n")
        )))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn render_table(
    acc: &Accuracies,
    baseline: &str,
    out: &mut dyn IoWrite,
) -> std::io::Result<()> {
    let with_baseline = acc.order.len() > 1;
    let name_width = acc
        .order
        .iter()
        .map(|n| n.len() + if n == baseline { " (baseline)".len() } else { 0 })
        .chain(["criterion".len()])
        .max()
        .unwrap();

    if with_baseline {
        writeln!(out, "paired against baseline {baseline:?}")?;
        writeln!(
            out,
            "{:<name_width$}  {:>5}  {:>9}  {:>9}  {:>10}  {:>9}  {:>4}  {:>4}  {:>4}",
            "criterion", "seeds", "mean", "sd", "mean_diff", "sd_diff", "win", "loss", "tie"
        )?;
    } else {
        writeln!(
            out,
            "{:<name_width$}  {:>5}  {:>9}  {:>9}",
            "criterion", "seeds", "mean", "sd"
        )?;
    }

    let base_seeds = &acc.by_criterion[baseline];
    for name in &acc.order {
        let seeds = &acc.by_criterion[name];
        let values: Vec<f64> = seeds.values().copied().collect();
        let label = if with_baseline && name == baseline {
            format!("{name} (baseline)")
        } else {
            name.clone()
        };
        if !with_baseline {
            writeln!(
                out,
                "{label:<name_width$}  {:>5}  {:>9.6}  {:>9.6}",
                values.len(),
                mean(&values),
                sample_sd(&values)
            )?;
        } else if name == baseline {
            writeln!(
                out,
                "{label:<name_width$}  {:>5}  {:>9.6}  {:>9.6}  {:>10}  {:>9}  {:>4}  {:>4}  {:>4}",
                values.len(),
                mean(&values),
                sample_sd(&values),
                "-",
                "-",
                "-",
                "-",
                "-"
            )?;
        } else {
            // Seed coverage was checked, so every seed pairs up.
            let diffs: Vec<f64> = seeds
                .iter()
                .map(|(seed, accuracy)| accuracy - base_seeds[seed])
                .collect();
            let wins = diffs.iter().filter(|d| **d > 0.0).count();
            let losses = diffs.iter().filter(|d| **d < 0.0).count();
            let ties = diffs.len() - wins - losses;
            writeln!(
                out,
                "{label:<name_width$}  {:>5}  {:>9.6}  {:>9.6}  {:>10.6}  {:>9.6}  {wins:>4}  {losses:>4}  {ties:>4}",
                values.len(),
                mean(&values),
                sample_sd(&values),
                mean(&diffs),
                sample_sd(&diffs)
            )?;
        }
    }
    Ok(())
}
