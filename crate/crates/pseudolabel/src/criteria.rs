//! Pseudo-label selection criteria.
//!
//! A criterion assigns every pool candidate a scalar score (higher is
//! better); the engine adds the argmax. The reference criterion scores a
//! candidate by the (approximate) model evidence of the labeled data
//! augmented with that candidate: `laplace` uses the Laplace approximation
//! `l(theta_hat) - 1/2 log det I(theta_hat)` of the augmented evidence, while
//! the oracle kinds integrate the posterior predictive exactly (quadrature)
//! or by importance sampling. Heuristic baselines score by predicted-class
//! probability, predictive variance, or the bare augmented likelihood, and
//! the superset variants range over both candidate labels instead of the
//! predicted one.
//!
//! Scores are normalized per pool into inclusion probabilities by a softmax;
//! those are what the importance-weighting module inverts. The softmax
//! normalization is a modeling choice of this crate, documented here because
//! no canonical cross-candidate normalization exists for these scores.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::glm::{
    self, log_det_spd, Dataset, FitSettings, ModelFit, ModelSpec,
};
use crate::math::log_softmax;
use crate::oracles::{self, QuadratureGrid};

/// Stable identity of a pool point across an entire run.
pub type CandidateId = u64;

/// An unlabeled pool point: identity plus features, no label of any kind.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolPoint {
    pub id: CandidateId,
    pub features: DVector<f64>,
}

/// A pool point together with the pseudo-label the current fit assigns it.
///
/// Kept distinct from [`PoolPoint`] so that a label can only enter a
/// candidate through an explicit prediction step.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: CandidateId,
    pub features: DVector<f64>,
    pub pseudo_label: u8,
}

impl PoolPoint {
    /// Attaches the pseudo-label predicted by `theta` (probability
    /// thresholded at one half, ties to class 1).
    pub fn labeled_by(&self, theta: &DVector<f64>) -> Candidate {
        let p = glm::predict_proba_one(theta, &self.features);
        Candidate {
            id: self.id,
            features: self.features.clone(),
            pseudo_label: u8::from(p >= 0.5),
        }
    }
}

/// Which selection rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionKind {
    /// Laplace-approximated augmented evidence; the production criterion.
    BayesLaplace,
    /// Exact augmented posterior predictive by trapezoidal quadrature (d <= 2).
    BayesOracleQuadrature,
    /// Exact augmented posterior predictive by importance sampling.
    BayesOracleMonteCarlo,
    /// Predicted-class probability `max(p, 1-p)` at the MAP.
    MaxPredictedProb,
    /// Negated predictive variance `-p(1-p)` (most confident first).
    PredictiveVariance,
    /// Augmented log-likelihood at the MAP, without the curvature penalty.
    LikelihoodOnly,
    /// Best Laplace score over both labels of the candidate.
    OptimisticSuperset,
    /// Worst Laplace score over both labels of the candidate.
    PessimisticSuperset,
}

impl CriterionKind {
    /// Stable lowercase name, used in file names and config files.
    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::BayesLaplace => "bayes_laplace",
            CriterionKind::BayesOracleQuadrature => "bayes_oracle_quadrature",
            CriterionKind::BayesOracleMonteCarlo => "bayes_oracle_montecarlo",
            CriterionKind::MaxPredictedProb => "max_predicted_prob",
            CriterionKind::PredictiveVariance => "predictive_variance",
            CriterionKind::LikelihoodOnly => "likelihood_only",
            CriterionKind::OptimisticSuperset => "optimistic_superset",
            CriterionKind::PessimisticSuperset => "pessimistic_superset",
        }
    }

    fn is_oracle(self) -> bool {
        matches!(
            self,
            CriterionKind::BayesOracleQuadrature | CriterionKind::BayesOracleMonteCarlo
        )
    }
}

impl std::str::FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "bayes_laplace" => CriterionKind::BayesLaplace,
            "bayes_oracle_quadrature" => CriterionKind::BayesOracleQuadrature,
            "bayes_oracle_montecarlo" => CriterionKind::BayesOracleMonteCarlo,
            "max_predicted_prob" => CriterionKind::MaxPredictedProb,
            "predictive_variance" => CriterionKind::PredictiveVariance,
            "likelihood_only" => CriterionKind::LikelihoodOnly,
            "optimistic_superset" => CriterionKind::OptimisticSuperset,
            "pessimistic_superset" => CriterionKind::PessimisticSuperset,
            other => return Err(Error::Config(format!("unknown criterion {other:?}"))),
        })
    }
}

/// Settings for the oracle criteria: quadrature resolution and Monte-Carlo
/// sample budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSettings {
    /// Nodes per dimension of the quadrature grid.
    pub grid_steps_per_dim: usize,
    /// Half-width of the grid in marginal standard deviations of the
    /// Laplace approximation.
    pub grid_half_width_sds: f64,
    /// Maximum fraction of integral mass allowed on the grid boundary.
    pub boundary_mass_tol: f64,
    /// Importance-sampling sample count.
    pub mc_samples: usize,
    /// Seed for the Monte-Carlo oracle. All candidates of one pool share it,
    /// so identical candidates score identically and comparisons use common
    /// random numbers.
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            grid_steps_per_dim: 2001,
            grid_half_width_sds: 8.0,
            boundary_mass_tol: 1e-6,
            mc_samples: 10_000,
            seed: 0,
        }
    }
}

/// Full description of a selection rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionSpec {
    pub kind: CriterionKind,
    /// Required for the oracle kinds, ignored otherwise.
    pub oracle: Option<OracleSettings>,
    /// When true, the Bayes-Laplace and superset scores refit the model on
    /// each augmented dataset; when false (the default) they reuse the fit
    /// on the labeled data and apply a rank-one information update. The
    /// default costs one fit per engine iteration instead of one per
    /// candidate.
    pub refit_per_candidate: bool,
}

impl CriterionSpec {
    /// A criterion with default settings (no refits, default oracle budget
    /// where applicable).
    pub fn new(kind: CriterionKind) -> Self {
        let oracle = kind.is_oracle().then(OracleSettings::default);
        Self {
            kind,
            oracle,
            refit_per_candidate: false,
        }
    }

    fn oracle_settings(&self) -> Result<&OracleSettings> {
        self.oracle
            .as_ref()
            .ok_or_else(|| Error::Config(format!("criterion {} requires oracle settings", self.kind.name())))
    }
}

/// Fit and refit configuration shared by all criterion evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreSettings {
    pub fit: FitSettings,
    pub refit_per_candidate: bool,
}

/// Scores for one pool snapshot: the criterion value per candidate, the
/// selected candidate, and softmax inclusion probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPool {
    /// Criterion value per candidate id.
    pub scores: BTreeMap<CandidateId, f64>,
    /// Argmax of the scores; ties break toward the lowest id.
    pub chosen: CandidateId,
    /// Log inclusion probabilities: softmax of the scores over the pool.
    pub log_inclusion_probs: BTreeMap<CandidateId, f64>,
}

impl ScoredPool {
    /// Normalizes a finished score map into a `ScoredPool`.
    ///
    /// Scanning ids in ascending order with strict improvement implements
    /// the lowest-id tie-break; the softmax is evaluated in the same order,
    /// so the result does not depend on how the map was filled.
    fn from_scores(scores: BTreeMap<CandidateId, f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::PoolExhausted);
        }
        let mut chosen = None;
        let mut best = f64::NEG_INFINITY;
        for (&id, &score) in &scores {
            if !score.is_finite() {
                return Err(Error::Numerical(format!(
                    "criterion score for candidate {id} is not finite"
                )));
            }
            if score > best {
                best = score;
                chosen = Some(id);
            }
        }
        let values: Vec<f64> = scores.values().copied().collect();
        let log_probs = log_softmax(&values);
        let log_inclusion_probs = scores
            .keys()
            .copied()
            .zip(log_probs)
            .collect::<BTreeMap<_, _>>();
        Ok(Self {
            scores,
            chosen: chosen.expect("non-empty scores"),
            log_inclusion_probs,
        })
    }

    /// Log inclusion probability of the chosen candidate.
    pub fn log_inclusion_of_chosen(&self) -> f64 {
        self.log_inclusion_probs[&self.chosen]
    }
}

fn check_candidate(cand: &Candidate, dim: usize) -> Result<()> {
    if cand.features.len() != dim {
        return Err(Error::Shape {
            context: "Candidate",
            expected: format!("{dim} features"),
            actual: format!("{}", cand.features.len()),
        });
    }
    if cand.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Candidate features"));
    }
    if cand.pseudo_label > 1 {
        return Err(Error::Invalid {
            context: "Candidate",
            reason: format!("pseudo label {} is not binary", cand.pseudo_label),
        });
    }
    Ok(())
}

/// Log-likelihood of the candidate's pseudo-label under `theta`.
fn log_label_prob(theta: &DVector<f64>, cand: &Candidate) -> f64 {
    let p = glm::predict_proba_one(theta, &cand.features);
    if cand.pseudo_label == 1 {
        p.ln()
    } else {
        (1.0 - p).ln()
    }
}

/// The pseudo-label likelihood utility
/// `log p(data ∪ (z, y_hat) | theta)`: the labeled-data log-likelihood plus
/// the candidate's own label log-probability, all at a fixed `theta`.
pub fn pseudo_label_utility(theta: &DVector<f64>, data: &Dataset, cand: &Candidate) -> Result<f64> {
    check_candidate(cand, data.dim())?;
    let ll = glm::log_likelihood(theta, data)?;
    Ok(ll + log_label_prob(theta, cand))
}

/// Laplace criterion score: augmented log-likelihood at the mode minus half
/// the log-determinant of the augmented information,
/// `l_aug(theta_hat) - 1/2 log det I_aug(theta_hat)`.
///
/// The dimension-dependent `(d/2) log 2pi` constant of the full Laplace
/// evidence is dropped: it is identical for every candidate, so neither the
/// argmax nor the softmax inclusion probabilities change.
///
/// With `refit_per_candidate` unset, `theta_hat` is the mode of the labeled
/// data and the information gains one rank-one term for the candidate; when
/// set, the mode and information are recomputed on each augmented dataset.
pub fn bayes_laplace_score(
    data: &Dataset,
    spec: &ModelSpec,
    cand: &Candidate,
    settings: &ScoreSettings,
) -> Result<f64> {
    let fit = glm::fit_map(data, spec, &settings.fit)?;
    bayes_laplace_score_with_fit(data, spec, cand, &fit, settings)
}

/// Same as [`bayes_laplace_score`] but reuses an existing fit of `data`,
/// avoiding one redundant fit per candidate when scoring a whole pool.
pub fn bayes_laplace_score_with_fit(
    data: &Dataset,
    spec: &ModelSpec,
    cand: &Candidate,
    base_fit: &ModelFit,
    settings: &ScoreSettings,
) -> Result<f64> {
    check_candidate(cand, spec.dimension())?;
    if settings.refit_per_candidate {
        let aug = data.augmented(&cand.features, cand.pseudo_label, 1.0)?;
        let fit = glm::fit_map(&aug, spec, &settings.fit)?;
        Ok(fit.log_lik_at_mode - 0.5 * log_det_spd(&fit.fisher_info)?)
    } else {
        let ll_aug = base_fit.log_lik_at_mode + log_label_prob(&base_fit.theta_hat, cand);
        let p = glm::predict_proba_one(&base_fit.theta_hat, &cand.features);
        let curv = p * (1.0 - p);
        let info_aug =
            &base_fit.fisher_info + (&cand.features * cand.features.transpose()) * curv;
        Ok(ll_aug - 0.5 * log_det_spd(&info_aug)?)
    }
}

/// Exact Bayes criterion by quadrature: the log posterior predictive of the
/// augmented dataset, `log p(data ∪ (z, y_hat) | data)`, computed as the
/// difference of augmented and base log evidences on one shared grid
/// centered at the Laplace approximation of the posterior.
///
/// Requires model dimension at most 2.
pub fn bayes_oracle_quadrature_score(
    data: &Dataset,
    spec: &ModelSpec,
    cand: &Candidate,
    settings: &OracleSettings,
) -> Result<f64> {
    check_candidate(cand, spec.dimension())?;
    if spec.dimension() > 2 {
        return Err(Error::Config(format!(
            "quadrature oracle supports dimension <= 2, got {}",
            spec.dimension()
        )));
    }
    let (center, info) = if data.n() == 0 {
        (spec.prior_mean().clone(), spec.prior_precision().clone())
    } else {
        let fit = glm::fit_map(data, spec, &FitSettings::default())?;
        (fit.theta_hat, fit.fisher_info)
    };
    let grid = QuadratureGrid::from_gaussian(
        &center,
        &info,
        settings.grid_half_width_sds,
        settings.grid_steps_per_dim,
        settings.boundary_mass_tol,
    )?;
    let aug = data.augmented(&cand.features, cand.pseudo_label, 1.0)?;
    let ev_aug = oracles::evidence_quadrature(&aug, spec, &grid)?;
    let ev_base = oracles::evidence_quadrature(data, spec, &grid)?;
    Ok(ev_aug - ev_base)
}

/// Exact Bayes criterion by self-normalized importance sampling: the log
/// posterior predictive `log p(data ∪ (z, y_hat) | data)` estimated with the
/// Laplace Gaussian proposal. Deterministic per the settings seed; the seed
/// is shared across candidates so that equal candidates score equally.
pub fn bayes_oracle_montecarlo_score(
    data: &Dataset,
    spec: &ModelSpec,
    cand: &Candidate,
    settings: &OracleSettings,
) -> Result<f64> {
    check_candidate(cand, spec.dimension())?;
    let estimate = oracles::posterior_predictive_mc(
        data,
        spec,
        &cand.features,
        cand.pseudo_label,
        settings.mc_samples,
        settings.seed,
    )?;
    Ok(estimate.log_value)
}

/// Heuristic baselines evaluated at an existing fit.
///
/// `max_predicted_prob` is the predicted-class probability `max(p, 1-p)`;
/// `predictive_variance` is `-p(1-p)` so that the argmax is the most
/// confident candidate; `likelihood_only` is the augmented log-likelihood at
/// the mode, i.e. the Laplace score without its curvature penalty.
pub fn heuristic_score(kind: CriterionKind, fit: &ModelFit, cand: &Candidate) -> Result<f64> {
    check_candidate(cand, fit.theta_hat.len())?;
    let p = glm::predict_proba_one(&fit.theta_hat, &cand.features);
    match kind {
        CriterionKind::MaxPredictedProb => Ok(p.max(1.0 - p)),
        CriterionKind::PredictiveVariance => Ok(-(p * (1.0 - p))),
        CriterionKind::LikelihoodOnly => Ok(fit.log_lik_at_mode + log_label_prob(&fit.theta_hat, cand)),
        other => Err(Error::Config(format!(
            "{} is not a heuristic criterion",
            other.name()
        ))),
    }
}

/// Label-set scanning mode for superset scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupersetMode {
    Optimistic,
    Pessimistic,
}

/// Superset variants of the Laplace criterion: score the candidate under
/// both possible labels and keep the best (optimistic, max-max) or worst
/// (pessimistic, min-max) value.
pub fn superset_score(
    data: &Dataset,
    spec: &ModelSpec,
    cand: &Candidate,
    mode: SupersetMode,
    settings: &ScoreSettings,
) -> Result<f64> {
    let fit = glm::fit_map(data, spec, &settings.fit)?;
    superset_score_with_fit(data, spec, cand, mode, &fit, settings)
}

fn superset_score_with_fit(
    data: &Dataset,
    spec: &ModelSpec,
    cand: &Candidate,
    mode: SupersetMode,
    base_fit: &ModelFit,
    settings: &ScoreSettings,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    let mut worst = f64::INFINITY;
    for label in [0u8, 1u8] {
        let relabeled = Candidate {
            id: cand.id,
            features: cand.features.clone(),
            pseudo_label: label,
        };
        let score = bayes_laplace_score_with_fit(data, spec, &relabeled, base_fit, settings)?;
        best = best.max(score);
        worst = worst.min(score);
    }
    Ok(match mode {
        SupersetMode::Optimistic => best,
        SupersetMode::Pessimistic => worst,
    })
}

/// Scores a whole pool with one criterion and returns the scored snapshot.
///
/// The candidate order in `pool` never affects the result: scores are keyed
/// and reduced in candidate-id order. Errors on an empty pool (the engine
/// treats that as normal exhaustion) and on duplicate ids.
pub fn score_pool(
    data: &Dataset,
    spec: &ModelSpec,
    pool: &[Candidate],
    crit: &CriterionSpec,
    fit_settings: &FitSettings,
) -> Result<ScoredPool> {
    if pool.is_empty() {
        return Err(Error::PoolExhausted);
    }
    for cand in pool {
        check_candidate(cand, spec.dimension())?;
    }
    let mut ordered: BTreeMap<CandidateId, &Candidate> = BTreeMap::new();
    for cand in pool {
        if ordered.insert(cand.id, cand).is_some() {
            return Err(Error::Invalid {
                context: "score_pool",
                reason: format!("duplicate candidate id {}", cand.id),
            });
        }
    }
    let settings = ScoreSettings {
        fit: *fit_settings,
        refit_per_candidate: crit.refit_per_candidate,
    };
    // The oracle kinds manage their own posterior computations; everything
    // else evaluates at one shared fit of the labeled data.
    let base_fit = if crit.kind.is_oracle() {
        None
    } else {
        Some(glm::fit_map(data, spec, fit_settings)?)
    };
    let mut scores = BTreeMap::new();
    for (&id, cand) in &ordered {
        let score = match crit.kind {
            CriterionKind::BayesLaplace => bayes_laplace_score_with_fit(
                data,
                spec,
                cand,
                base_fit.as_ref().expect("fit for non-oracle kind"),
                &settings,
            )?,
            CriterionKind::BayesOracleQuadrature => {
                bayes_oracle_quadrature_score(data, spec, cand, crit.oracle_settings()?)?
            }
            CriterionKind::BayesOracleMonteCarlo => {
                bayes_oracle_montecarlo_score(data, spec, cand, crit.oracle_settings()?)?
            }
            CriterionKind::MaxPredictedProb
            | CriterionKind::PredictiveVariance
            | CriterionKind::LikelihoodOnly => heuristic_score(
                crit.kind,
                base_fit.as_ref().expect("fit for non-oracle kind"),
                cand,
            )?,
            CriterionKind::OptimisticSuperset => superset_score_with_fit(
                data,
                spec,
                cand,
                SupersetMode::Optimistic,
                base_fit.as_ref().expect("fit for non-oracle kind"),
                &settings,
            )?,
            CriterionKind::PessimisticSuperset => superset_score_with_fit(
                data,
                spec,
                cand,
                SupersetMode::Pessimistic,
                base_fit.as_ref().expect("fit for non-oracle kind"),
                &settings,
            )?,
        };
        scores.insert(id, score);
    }
    ScoredPool::from_scores(scores)
}
