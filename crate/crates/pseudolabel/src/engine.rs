//! The self-training loop.
//!
//! Each iteration fits the model on the current labeled data, predicts
//! pseudo-labels for the entire remaining pool from that fit, scores the
//! pool with the configured criterion, and moves the argmax candidate (with
//! its pseudo-label) into the labeled set. The loop stops on the configured
//! rule, with pool exhaustion always acting as a backstop. Every step is
//! recorded in a [`Trajectory`]: chosen candidate, full score map, inclusion
//! probabilities, parameter snapshot, and optional test metrics. That record
//! is the audit trail consumed by the importance-weighting module.
//!
//! Labels of added points are frozen: the pool is re-pseudo-labeled from
//! each fresh fit, but points already moved into the labeled set keep the
//! label they were added with.

use std::collections::BTreeMap;
use std::io::Write as IoWrite;

use nalgebra::DVector;

use crate::criteria::{
    score_pool, Candidate, CandidateId, CriterionSpec, OracleSettings, PoolPoint,
};
use crate::error::{Error, Result};
use crate::glm::{self, Dataset, FitSettings, ModelFit, ModelSpec};
use crate::math::{fnv1a64, mix_seed};

/// When to stop adding pool points. Pool exhaustion always stops the run
/// regardless of the configured rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StoppingRule {
    /// Run until the pool is empty.
    PoolExhausted,
    /// Stop after this many additions (at least 1).
    MaxIterations(usize),
    /// Stop, without adding, once the chosen candidate's log inclusion
    /// probability falls below this threshold.
    ScoreFloor(f64),
}

/// Everything that determines a run apart from the data itself.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub criterion: CriterionSpec,
    pub stop: StoppingRule,
    pub fit: FitSettings,
    /// Test metrics are computed at iterations divisible by this cadence,
    /// plus once for the final fit. Must be at least 1.
    pub eval_every: usize,
    /// Base seed; it reaches only the Monte-Carlo oracle criterion, which
    /// receives a sub-seed derived per iteration.
    pub seed: u64,
}

impl EngineConfig {
    /// Configuration with the given criterion and defaults everywhere else:
    /// run to pool exhaustion, default fit settings, evaluate every step.
    pub fn new(criterion: CriterionSpec) -> Self {
        Self {
            criterion,
            stop: StoppingRule::PoolExhausted,
            fit: FitSettings::default(),
            eval_every: 1,
            seed: 0,
        }
    }
}

/// Test-set performance of one fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Fraction of test rows whose thresholded prediction matches the label.
    pub accuracy: f64,
    /// Negative mean per-row log-likelihood, in nats.
    pub log_loss: f64,
}

/// One engine iteration: the state it saw and the choice it made.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: usize,
    pub chosen_id: CandidateId,
    /// Label the chosen candidate was added with.
    pub pseudo_label: u8,
    /// Features of the chosen candidate, kept so a trajectory suffices to
    /// rebuild the augmented dataset (the IPW module relies on this).
    pub chosen_features: DVector<f64>,
    /// Criterion value for every candidate still in the pool.
    pub scores: BTreeMap<CandidateId, f64>,
    /// Softmax inclusion probabilities matching `scores`.
    pub log_inclusion_probs: BTreeMap<CandidateId, f64>,
    /// Score of the chosen candidate (criterion scale).
    pub log_score_chosen: f64,
    /// Log inclusion probability of the chosen candidate.
    pub log_inclusion_chosen: f64,
    /// Parameter estimate the pool was pseudo-labeled and scored with.
    pub theta_hat: DVector<f64>,
    /// Present when the evaluation cadence fired at this iteration.
    pub test_metrics: Option<Metrics>,
}

/// Reproducibility fingerprint of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    /// FNV-1a hash of the engine configuration's debug representation.
    pub config_hash: u64,
    pub seed: u64,
}

/// Complete record of one engine run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    /// Fit on the final labeled set, after the last addition.
    pub final_fit: ModelFit,
    /// Metrics of `final_fit`, when a test set was supplied.
    pub final_metrics: Option<Metrics>,
    /// Rows in the labeled set before the first addition.
    pub initial_labeled_n: usize,
    pub provenance: Provenance,
}

impl Trajectory {
    /// Labeled rows after the run: the initial rows plus one per step.
    pub fn final_labeled_n(&self) -> usize {
        self.initial_labeled_n + self.steps.len()
    }

    /// Accuracy of the fit before any addition, when it was evaluated.
    pub fn initial_accuracy(&self) -> Option<f64> {
        self.steps
            .first()
            .and_then(|s| s.test_metrics)
            .map(|m| m.accuracy)
    }

    /// Accuracy of the final fit, when a test set was supplied.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.final_metrics.map(|m| m.accuracy)
    }
}

/// A run that aborted mid-way: the cause plus everything recorded before it.
#[derive(Debug, Clone, thiserror::Error)]
#[error("engine aborted at iteration {iteration}: {source}")]
pub struct EngineError {
    pub iteration: usize,
    #[source]
    pub source: Error,
    /// Steps completed before the failure.
    pub partial_steps: Vec<StepRecord>,
    pub provenance: Provenance,
}

/// Runs the self-training loop.
///
/// `labeled` must contain both classes, `pool` ids must be unique, and the
/// optional `test` set feeds the evaluation cadence. The run is
/// deterministic given its inputs; `config.seed` only influences the
/// Monte-Carlo oracle criterion, which gets a fresh sub-seed each iteration.
/// Errors carry the partial trajectory recorded up to the failure.
pub fn run(
    labeled: &Dataset,
    pool: Vec<PoolPoint>,
    spec: &ModelSpec,
    config: &EngineConfig,
    test: Option<&Dataset>,
) -> std::result::Result<Trajectory, Box<EngineError>> {
    let provenance = Provenance {
        config_hash: fnv1a64(format!("{config:?}").as_bytes()),
        seed: config.seed,
    };
    let mut steps: Vec<StepRecord> = Vec::new();
    match run_inner(labeled, pool, spec, config, test, &mut steps, provenance) {
        Ok(traj) => Ok(traj),
        Err(source) => Err(Box::new(EngineError {
            iteration: steps.len(),
            source,
            partial_steps: steps,
            provenance,
        })),
    }
}

fn run_inner(
    labeled: &Dataset,
    mut pool: Vec<PoolPoint>,
    spec: &ModelSpec,
    config: &EngineConfig,
    test: Option<&Dataset>,
    steps: &mut Vec<StepRecord>,
    provenance: Provenance,
) -> Result<Trajectory> {
    if !labeled.labels().contains(&0) {
        return Err(Error::DegenerateStart { missing: 0 });
    }
    if !labeled.labels().contains(&1) {
        return Err(Error::DegenerateStart { missing: 1 });
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for p in &pool {
            if !seen.insert(p.id) {
                return Err(Error::Invalid {
                    context: "engine pool",
                    reason: format!("duplicate pool id {}", p.id),
                });
            }
        }
    }
    if let StoppingRule::MaxIterations(0) = config.stop {
        return Err(Error::Config("max_iterations must be at least 1".into()));
    }
    if config.eval_every == 0 {
        return Err(Error::Config("eval_every must be at least 1".into()));
    }

    let initial_labeled_n = labeled.n();
    let mut data = labeled.clone();
    loop {
        let iteration = steps.len();
        let fit = glm::fit_map(&data, spec, &config.fit)?;
        let metrics = match test {
            Some(t) if iteration % config.eval_every == 0 => Some(evaluate(&fit, t)?),
            _ => None,
        };

        let exhausted = pool.is_empty();
        let iteration_cap = matches!(config.stop, StoppingRule::MaxIterations(k) if iteration >= k);
        if exhausted || iteration_cap {
            return finish(fit, metrics, test, steps, initial_labeled_n, provenance);
        }

        let candidates: Vec<Candidate> =
            pool.iter().map(|p| p.labeled_by(&fit.theta_hat)).collect();
        let criterion = criterion_for_iteration(&config.criterion, config.seed, iteration);
        let scored = score_pool(&data, spec, &candidates, &criterion, &config.fit)?;

        if let StoppingRule::ScoreFloor(floor) = config.stop {
            if scored.log_inclusion_of_chosen() < floor {
                return finish(fit, metrics, test, steps, initial_labeled_n, provenance);
            }
        }

        let chosen_idx = pool
            .iter()
            .position(|p| p.id == scored.chosen)
            .expect("chosen id comes from the pool");
        let chosen_point = pool.remove(chosen_idx);
        let chosen_cand = candidates
            .iter()
            .find(|c| c.id == scored.chosen)
            .expect("chosen id comes from the candidates");

        steps.push(StepRecord {
            iteration,
            chosen_id: scored.chosen,
            pseudo_label: chosen_cand.pseudo_label,
            chosen_features: chosen_point.features.clone(),
            log_score_chosen: scored.scores[&scored.chosen],
            log_inclusion_chosen: scored.log_inclusion_of_chosen(),
            scores: scored.scores,
            log_inclusion_probs: scored.log_inclusion_probs,
            theta_hat: fit.theta_hat.clone(),
            test_metrics: metrics,
        });
        data = data.augmented(&chosen_point.features, chosen_cand.pseudo_label, 1.0)?;
    }
}

/// Builds the final trajectory, evaluating the last fit if the cadence did
/// not already cover it.
fn finish(
    fit: ModelFit,
    metrics: Option<Metrics>,
    test: Option<&Dataset>,
    steps: &mut Vec<StepRecord>,
    initial_labeled_n: usize,
    provenance: Provenance,
) -> Result<Trajectory> {
    let final_metrics = match (metrics, test) {
        (Some(m), _) => Some(m),
        (None, Some(t)) => Some(evaluate(&fit, t)?),
        (None, None) => None,
    };
    Ok(Trajectory {
        steps: std::mem::take(steps),
        final_fit: fit,
        final_metrics,
        initial_labeled_n,
        provenance,
    })
}

/// Derives the per-iteration criterion: identical to the configured one
/// except that a Monte-Carlo oracle receives a sub-seed of the engine seed,
/// so each iteration draws fresh but reproducible samples.
fn criterion_for_iteration(base: &CriterionSpec, seed: u64, iteration: usize) -> CriterionSpec {
    let mut criterion = base.clone();
    if let Some(oracle) = criterion.oracle.as_mut() {
        *oracle = OracleSettings {
            seed: mix_seed(seed, iteration as u64 + 1),
            ..*oracle
        };
    }
    criterion
}

/// Test-set metrics of a fit: thresholded accuracy (ties to class 1) and
/// negative mean per-row log-likelihood. Row weights are ignored; a test
/// set counts every row once.
pub fn evaluate(fit: &ModelFit, test: &Dataset) -> Result<Metrics> {
    if test.n() == 0 {
        return Err(Error::Invalid {
            context: "evaluate",
            reason: "test set is empty".into(),
        });
    }
    let p = glm::predict_proba(&fit.theta_hat, test.features())?;
    let mut correct = 0usize;
    let mut total_ll = 0.0;
    for i in 0..test.n() {
        let predicted = u8::from(p[i] >= 0.5);
        if predicted == test.labels()[i] {
            correct += 1;
        }
        total_ll += if test.labels()[i] == 1 {
            p[i].ln()
        } else {
            (1.0 - p[i]).ln()
        };
    }
    Ok(Metrics {
        accuracy: correct as f64 / test.n() as f64,
        log_loss: -total_ll / test.n() as f64,
    })
}

/// Writes one line per step: iteration, chosen id, pseudo-label, chosen
/// score, chosen log inclusion probability, and test metrics (empty when the
/// cadence skipped the iteration).
pub fn write_steps_csv<W: IoWrite>(traj: &Trajectory, writer: W) -> Result<()> {
    write_step_records_csv(&traj.steps, writer)
}

/// Same format as [`write_steps_csv`], but takes a bare step slice so that
/// the partial steps carried by an [`EngineError`] can be flushed too.
pub fn write_step_records_csv<W: IoWrite>(steps: &[StepRecord], writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "iteration",
        "chosen_id",
        "pseudo_label",
        "log_score_chosen",
        "log_inclusion_prob",
        "test_accuracy",
        "test_log_loss",
    ])?;
    for step in steps {
        let (acc, loss) = match step.test_metrics {
            Some(m) => (m.accuracy.to_string(), m.log_loss.to_string()),
            None => (String::new(), String::new()),
        };
        out.write_record([
            step.iteration.to_string(),
            step.chosen_id.to_string(),
            step.pseudo_label.to_string(),
            step.log_score_chosen.to_string(),
            step.log_inclusion_chosen.to_string(),
            acc,
            loss,
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the full per-candidate score maps, keyed by iteration and
/// candidate id.
pub fn write_scores_csv<W: IoWrite>(traj: &Trajectory, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["iteration", "candidate_id", "score", "log_inclusion_prob"])?;
    for step in &traj.steps {
        for (id, score) in &step.scores {
            out.write_record([
                step.iteration.to_string(),
                id.to_string(),
                score.to_string(),
                step.log_inclusion_probs[id].to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}
