//! Experiment files: TOML schema, validation, and conversion into the
//! library's configuration types.
//!
//! One file fully determines a run. Every default is listed here rather than
//! hidden in code paths: `write_scores = false`, `engine.eval_every = 1`,
//! stopping rule `"pool_exhausted"`, fit settings `tol = 1e-8`,
//! `max_iter = 100`, `max_halvings = 30`, CSV `missing_marker = "?"` and
//! `add_intercept = true`, `covariance_scale = 1.0`, and the oracle budgets
//! of [`pseudolabel::OracleSettings::default`].
//!
//! ```toml
//! output_dir = "runs/example"
//! seeds = [0, 1, 2]
//!
//! [data.synthetic]
//! kind = "logistic_linear"      # or "two_gaussians" with mean0/mean1
//! theta_true = [1.5]
//! n_labeled = 30
//! n_pool = 60
//! n_test = 500
//!
//! [engine]
//! eval_every = 10
//! max_iterations = 20           # or score_floor, or stop = "pool_exhausted"
//!
//! [[criteria]]
//! kind = "bayes_laplace"
//!
//! [[criteria]]
//! kind = "max_predicted_prob"
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pseudolabel::nalgebra::DVector;
use pseudolabel::{
    CriterionKind, CriterionSpec, CsvSchema, DgpConfig, DgpKind, EngineConfig, FitSettings,
    StoppingRule,
};
use serde::Deserialize;

use crate::CliError;

/// Raw deserialization target for the experiment file. Field presence is
/// checked here; cross-field rules live in [`Experiment::from_file`].
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// Output directory; created if missing, re-rooted by the output-root
    /// environment variable when that is set.
    pub output_dir: PathBuf,
    /// One engine run per (criterion, seed) pair. Seeds must be distinct.
    pub seeds: Vec<u64>,
    /// Also write the per-candidate score file of every cell. Off by
    /// default: scores grow quadratically in the pool size.
    #[serde(default)]
    pub write_scores: bool,
    pub data: DataSection,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub criteria: Vec<CriterionSection>,
}

/// Exactly one of the two sources must be present.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub synthetic: Option<SyntheticSection>,
    pub csv: Option<CsvSection>,
}

/// Synthetic data: one dataset is generated per seed, so criteria are
/// compared on matched draws.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    /// `"logistic_linear"` or `"two_gaussians"`.
    pub kind: String,
    /// Required for `logistic_linear`, forbidden otherwise.
    pub theta_true: Option<Vec<f64>>,
    /// Required for `two_gaussians`, forbidden otherwise.
    pub mean0: Option<Vec<f64>>,
    pub mean1: Option<Vec<f64>>,
    /// Only valid for `two_gaussians`; defaults to 1.0.
    pub covariance_scale: Option<f64>,
    pub n_labeled: usize,
    pub n_pool: usize,
    pub n_test: usize,
}

/// CSV data: the same files are loaded for every cell, so only the engine
/// seed varies across seeds.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSection {
    /// Training file; rows with the missing marker become the pool.
    pub path: PathBuf,
    pub label_column: String,
    pub feature_columns: Vec<String>,
    /// Label value marking unlabeled rows; defaults to `"?"`.
    pub missing_marker: Option<String>,
    /// Prepend an all-ones intercept column; defaults to true.
    pub add_intercept: Option<bool>,
    /// Optional fully labeled test file with the same schema.
    pub test_path: Option<PathBuf>,
}

/// Engine settings shared by all cells. At most one of `stop`,
/// `max_iterations`, and `score_floor` may be given.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineSection {
    /// Only the value `"pool_exhausted"` (the default) is accepted; bounded
    /// rules are spelled with the two numeric fields below.
    pub stop: Option<String>,
    pub max_iterations: Option<usize>,
    pub score_floor: Option<f64>,
    pub eval_every: Option<usize>,
    pub fit: Option<FitSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub max_halvings: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSection {
    /// A [`CriterionKind`] name, e.g. `"bayes_laplace"`.
    pub kind: String,
    pub refit_per_candidate: Option<bool>,
    /// Oracle kinds only: importance-sampling budget.
    pub mc_samples: Option<usize>,
    /// Oracle kinds only: quadrature nodes per dimension.
    pub grid_steps_per_dim: Option<usize>,
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub write_scores: bool,
    pub data: DataSource,
    pub criteria: Vec<CriterionSpec>,
    pub stop: StoppingRule,
    pub eval_every: usize,
    pub fit: FitSettings,
}

/// Where each cell's data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Csv {
        train: PathBuf,
        schema: CsvSchema,
        test: Option<PathBuf>,
    },
}

/// A [`DgpConfig`] template; the seed is filled in per cell.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    pub kind: DgpKind,
    pub n_labeled: usize,
    pub n_pool: usize,
    pub n_test: usize,
}

impl SyntheticSource {
    pub fn config_for_seed(&self, seed: u64) -> DgpConfig {
        DgpConfig {
            kind: self.kind.clone(),
            n_labeled: self.n_labeled,
            n_pool: self.n_pool,
            n_test: self.n_test,
            seed,
        }
    }
}

impl Experiment {
    /// Engine configuration of one cell. The seed reaches only the
    /// Monte-Carlo oracle criterion; all other criteria are deterministic in
    /// the data.
    pub fn engine_config(&self, criterion: &CriterionSpec, seed: u64) -> EngineConfig {
        EngineConfig {
            criterion: criterion.clone(),
            stop: self.stop,
            fit: self.fit,
            eval_every: self.eval_every,
            seed,
        }
    }

    /// Parses and validates a config file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and validates config text. TOML errors keep their line/field
    /// diagnostics.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ExperimentFile =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_file(file)
    }

    /// Applies the cross-field rules the serde schema cannot express.
    pub fn from_file(file: ExperimentFile) -> Result<Self, CliError> {
        if file.seeds.is_empty() {
            return Err(config("seeds: at least one seed is required"));
        }
        let mut seen = BTreeSet::new();
        for &seed in &file.seeds {
            if !seen.insert(seed) {
                return Err(config(&format!(
                    "seeds: seed {seed} appears more than once"
                )));
            }
        }
        if file.criteria.is_empty() {
            return Err(config("criteria: at least one [[criteria]] entry is required"));
        }

        let mut criteria = Vec::with_capacity(file.criteria.len());
        let mut names = BTreeSet::new();
        for entry in &file.criteria {
            let spec = convert_criterion(entry)?;
            if !names.insert(spec.kind.name()) {
                return Err(config(&format!(
                    "criteria: kind {:?} appears more than once; cells are keyed by criterion name",
                    spec.kind.name()
                )));
            }
            criteria.push(spec);
        }

        let data = convert_data(&file.data)?;
        let (stop, eval_every, fit) = convert_engine(&file.engine)?;

        Ok(Experiment {
            output_dir: file.output_dir,
            seeds: file.seeds,
            write_scores: file.write_scores,
            data,
            criteria,
            stop,
            eval_every,
            fit,
        })
    }
}

fn config(msg: &str) -> CliError {
    CliError::Config(msg.to_string())
}

fn convert_criterion(entry: &CriterionSection) -> Result<CriterionSpec, CliError> {
    let kind: CriterionKind = entry
        .kind
        .parse()
        .map_err(|e| config(&format!("criteria.kind: {e}")))?;
    let mut spec = CriterionSpec::new(kind);
    if let Some(refit) = entry.refit_per_candidate {
        spec.refit_per_candidate = refit;
    }
    match spec.oracle.as_mut() {
        Some(oracle) => {
            if let Some(samples) = entry.mc_samples {
                if samples == 0 {
                    return Err(config("criteria.mc_samples: must be at least 1"));
                }
                oracle.mc_samples = samples;
            }
            if let Some(steps) = entry.grid_steps_per_dim {
                if steps < 2 {
                    return Err(config("criteria.grid_steps_per_dim: must be at least 2"));
                }
                oracle.grid_steps_per_dim = steps;
            }
        }
        None => {
            if entry.mc_samples.is_some() || entry.grid_steps_per_dim.is_some() {
                return Err(config(&format!(
                    "criteria: mc_samples/grid_steps_per_dim are only valid for oracle \
                     criteria, not {:?}",
                    kind.name()
                )));
            }
        }
    }
    Ok(spec)
}

fn convert_data(section: &DataSection) -> Result<DataSource, CliError> {
    match (&section.synthetic, &section.csv) {
        (Some(_), Some(_)) => Err(config(
            "data: give exactly one of [data.synthetic] and [data.csv], not both",
        )),
        (None, None) => Err(config(
            "data: one of [data.synthetic] or [data.csv] is required",
        )),
        (Some(synth), None) => convert_synthetic(synth).map(DataSource::Synthetic),
        (None, Some(csv)) => convert_csv(csv),
    }
}

fn convert_synthetic(section: &SyntheticSection) -> Result<SyntheticSource, CliError> {
    let kind = match section.kind.as_str() {
        "logistic_linear" => {
            if section.mean0.is_some()
                || section.mean1.is_some()
                || section.covariance_scale.is_some()
            {
                return Err(config(
                    "data.synthetic: mean0/mean1/covariance_scale are only valid for \
                     kind = \"two_gaussians\"",
                ));
            }
            let theta = section
                .theta_true
                .as_ref()
                .ok_or_else(|| config("data.synthetic.theta_true: required for logistic_linear"))?;
            if theta.is_empty() {
                return Err(config("data.synthetic.theta_true: must not be empty"));
            }
            DgpKind::LogisticLinear {
                theta_true: DVector::from_column_slice(theta),
            }
        }
        "two_gaussians" => {
            if section.theta_true.is_some() {
                return Err(config(
                    "data.synthetic: theta_true is only valid for kind = \"logistic_linear\"",
                ));
            }
            let mean0 = section
                .mean0
                .as_ref()
                .ok_or_else(|| config("data.synthetic.mean0: required for two_gaussians"))?;
            let mean1 = section
                .mean1
                .as_ref()
                .ok_or_else(|| config("data.synthetic.mean1: required for two_gaussians"))?;
            if mean0.is_empty() || mean0.len() != mean1.len() {
                return Err(config(
                    "data.synthetic: mean0 and mean1 must be non-empty and of equal length",
                ));
            }
            let scale = section.covariance_scale.unwrap_or(1.0);
            if !scale.is_finite() || scale <= 0.0 {
                return Err(config(
                    "data.synthetic.covariance_scale: must be finite and positive",
                ));
            }
            DgpKind::TwoGaussians {
                mean0: DVector::from_column_slice(mean0),
                mean1: DVector::from_column_slice(mean1),
                covariance_scale: scale,
            }
        }
        other => {
            return Err(config(&format!(
                "data.synthetic.kind: unknown kind {other:?}; expected \
                 \"logistic_linear\" or \"two_gaussians\""
            )))
        }
    };
    if section.n_labeled == 0 || section.n_pool == 0 || section.n_test == 0 {
        return Err(config(
            "data.synthetic: n_labeled, n_pool, and n_test must all be at least 1",
        ));
    }
    Ok(SyntheticSource {
        kind,
        n_labeled: section.n_labeled,
        n_pool: section.n_pool,
        n_test: section.n_test,
    })
}

fn convert_csv(section: &CsvSection) -> Result<DataSource, CliError> {
    if section.feature_columns.is_empty() {
        return Err(config(
            "data.csv.feature_columns: at least one feature column is required",
        ));
    }
    let mut schema = CsvSchema::new(
        &section.label_column,
        &section
            .feature_columns
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>(),
    );
    if let Some(marker) = &section.missing_marker {
        schema.missing_marker = marker.clone();
    }
    if let Some(intercept) = section.add_intercept {
        schema.add_intercept = intercept;
    }
    Ok(DataSource::Csv {
        train: section.path.clone(),
        schema,
        test: section.test_path.clone(),
    })
}

fn convert_engine(section: &EngineSection) -> Result<(StoppingRule, usize, FitSettings), CliError> {
    if let Some(stop) = &section.stop {
        if stop != "pool_exhausted" {
            return Err(config(&format!(
                "engine.stop: unknown rule {stop:?}; expected \"pool_exhausted\" or one of \
                 the fields max_iterations / score_floor"
            )));
        }
    }
    let named = section.stop.is_some() as usize;
    let bounded = section.max_iterations.is_some() as usize;
    let floored = section.score_floor.is_some() as usize;
    if named + bounded + floored > 1 {
        return Err(config(
            "engine: stop, max_iterations, and score_floor are mutually exclusive",
        ));
    }
    let stop = if let Some(iters) = section.max_iterations {
        if iters == 0 {
            return Err(config("engine.max_iterations: must be at least 1"));
        }
        StoppingRule::MaxIterations(iters)
    } else if let Some(floor) = section.score_floor {
        if !floor.is_finite() {
            return Err(config("engine.score_floor: must be finite"));
        }
        StoppingRule::ScoreFloor(floor)
    } else {
        StoppingRule::PoolExhausted
    };

    let eval_every = section.eval_every.unwrap_or(1);
    if eval_every == 0 {
        return Err(config("engine.eval_every: must be at least 1"));
    }

    let mut fit = FitSettings::default();
    if let Some(fit_section) = &section.fit {
        if let Some(tol) = fit_section.tol {
            if !tol.is_finite() || tol <= 0.0 {
                return Err(config("engine.fit.tol: must be finite and positive"));
            }
            fit.tol = tol;
        }
        if let Some(max_iter) = fit_section.max_iter {
            if max_iter == 0 {
                return Err(config("engine.fit.max_iter: must be at least 1"));
            }
            fit.max_iter = max_iter;
        }
        if let Some(max_halvings) = fit_section.max_halvings {
            fit.max_halvings = max_halvings;
        }
    }

    Ok((stop, eval_every, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use pseudolabel::OracleSettings;

    const MINIMAL: &str = r#"
        output_dir = "runs/t"
        seeds = [7]

        [data.synthetic]
        kind = "logistic_linear"
        theta_true = [1.0, -0.5]
        n_labeled = 10
        n_pool = 5
        n_test = 50

        [[criteria]]
        kind = "bayes_laplace"
    "#;

    fn parse(text: &str) -> Result<Experiment, CliError> {
        Experiment::parse(text)
    }

    fn err_of(text: &str) -> String {
        match parse(text) {
            Err(CliError::Config(msg)) => msg,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_fills_documented_defaults() {
        let exp = parse(MINIMAL).unwrap();
        assert_eq!(exp.seeds, vec![7]);
        assert!(!exp.write_scores);
        assert_eq!(exp.stop, StoppingRule::PoolExhausted);
        assert_eq!(exp.eval_every, 1);
        assert_eq!(exp.fit, FitSettings::default());
        assert_eq!(exp.criteria.len(), 1);
        assert_eq!(exp.criteria[0].kind, CriterionKind::BayesLaplace);
        assert!(!exp.criteria[0].refit_per_candidate);
        match &exp.data {
            DataSource::Synthetic(s) => {
                assert_eq!(s.n_labeled, 10);
                assert_eq!(s.kind.dimension(), 2);
                let cfg = s.config_for_seed(3);
                assert_eq!(cfg.seed, 3);
                assert_eq!(cfg.n_test, 50);
            }
            other => panic!("expected synthetic source, got {other:?}"),
        }
    }

    #[test]
    fn toml_syntax_error_reports_line() {
        let msg = err_of("output_dir = \"x\"\nseeds = [1\n");
        assert!(msg.contains("line"), "diagnostic lacks line info: {msg}");
    }

    #[test]
    fn unknown_field_is_rejected_by_name() {
        let text = MINIMAL.replace("seeds = [7]", "seeds = [7]\nsurprise = 1");
        let msg = err_of(&text);
        assert!(msg.contains("surprise"), "diagnostic lacks field name: {msg}");
    }

    #[test]
    fn duplicate_seeds_and_criteria_are_rejected() {
        let msg = err_of(&MINIMAL.replace("seeds = [7]", "seeds = [7, 7]"));
        assert!(msg.contains("seed 7"));
        let text = format!("{MINIMAL}\n[[criteria]]\nkind = \"bayes_laplace\"\n");
        let msg = err_of(&text);
        assert!(msg.contains("bayes_laplace"));
    }

    #[test]
    fn stop_rules_are_mutually_exclusive() {
        let text = format!("{MINIMAL}\n[engine]\nmax_iterations = 3\nscore_floor = -1.0\n");
        assert!(err_of(&text).contains("mutually exclusive"));
        let text = format!("{MINIMAL}\n[engine]\nscore_floor = -2.5\n");
        assert_eq!(parse(&text).unwrap().stop, StoppingRule::ScoreFloor(-2.5));
        let text = format!("{MINIMAL}\n[engine]\nstop = \"pool_exhausted\"\n");
        assert_eq!(parse(&text).unwrap().stop, StoppingRule::PoolExhausted);
        let text = format!("{MINIMAL}\n[engine]\nstop = \"until_bored\"\n");
        assert!(err_of(&text).contains("until_bored"));
    }

    #[test]
    fn kind_specific_fields_are_policed() {
        let text = MINIMAL.replace("theta_true = [1.0, -0.5]", "");
        assert!(err_of(&text).contains("theta_true"));
        // mean0 belongs to two_gaussians; smuggling it into the synthetic
        // section must fail even though the TOML itself is well-formed.
        let text = MINIMAL.replace("n_test = 50", "n_test = 50\nmean0 = [0.0]");
        assert!(err_of(&text).contains("two_gaussians"));
        let msg = err_of(&MINIMAL.replace("logistic_linear", "spiral"));
        assert!(msg.contains("spiral"));
    }

    #[test]
    fn oracle_knobs_rejected_on_plain_criteria() {
        let text = format!("{}\nmc_samples = 100", MINIMAL.trim_end());
        assert!(err_of(&text).contains("oracle"));
        let text = format!(
            "{MINIMAL}\n[[criteria]]\nkind = \"bayes_oracle_montecarlo\"\nmc_samples = 500\n"
        );
        let exp = parse(&text).unwrap();
        let oracle = exp.criteria[1].oracle.as_ref().unwrap();
        assert_eq!(oracle.mc_samples, 500);
        assert_eq!(
            oracle.grid_steps_per_dim,
            OracleSettings::default().grid_steps_per_dim
        );
    }

    #[test]
    fn csv_source_builds_schema_with_defaults() {
        let text = r#"
            output_dir = "runs/csv"
            seeds = [1, 2]

            [data.csv]
            path = "train.csv"
            label_column = "y"
            feature_columns = ["a", "b"]

            [[criteria]]
            kind = "max_predicted_prob"
        "#;
        let exp = parse(text).unwrap();
        match &exp.data {
            DataSource::Csv { train, schema, test } => {
                assert_eq!(train, &PathBuf::from("train.csv"));
                assert_eq!(schema.missing_marker, "?");
                assert!(schema.add_intercept);
                assert_eq!(test, &None);
            }
            other => panic!("expected csv source, got {other:?}"),
        }
    }

    #[test]
    fn engine_config_propagates_cell_seed() {
        let exp = parse(MINIMAL).unwrap();
        let cfg = exp.engine_config(&exp.criteria[0], 41);
        assert_eq!(cfg.seed, 41);
        assert_eq!(cfg.eval_every, 1);
        assert_eq!(cfg.criterion, exp.criteria[0]);
    }
}
