//! Bayesian pseudo-label selection for self-training.
//!
//! Self-training grows a small labeled dataset by repeatedly fitting a
//! model, predicting labels for unlabeled pool points, and moving the most
//! promising point — with its predicted pseudo-label — into the labeled
//! set. The usual confidence heuristics for "most promising" are prone to
//! confirmation bias: the model keeps selecting whatever it is already sure
//! about. This crate implements a decision-theoretic alternative for
//! Bernoulli-logit models with Gaussian priors: score each candidate by the
//! pseudo posterior predictive of the augmented dataset, approximated with
//! a Laplace expansion around the posterior mode. The resulting criterion
//! trades data fit against a determinant penalty on the observed
//! information, which is what separates it from pure likelihood chasing.
//!
//! The crate is organized around small, testable layers:
//!
//! - [`glm`] — weighted Bernoulli-logit GLM: datasets, Gaussian priors,
//!   damped-Newton MAP fitting, and Laplace log-evidence.
//! - [`criteria`] — selection criteria (Laplace, quadrature and Monte-Carlo
//!   oracles, confidence heuristics, superset variants) and pool scoring
//!   with softmax inclusion probabilities.
//! - [`engine`] — the self-training loop with full trajectory records.
//! - [`ipw`] — inverse-probability weights from recorded inclusion
//!   probabilities, and debiased refits.
//! - [`data`] — synthetic data-generating processes and CSV ingestion.
//! - [`oracles`] — brute-force references (quadrature, importance sampling,
//!   grid search, finite differences) used to validate the fast paths.
//! - [`math`] — shared numeric primitives.
//!
//! Everything is deterministic given explicit seeds; random draws go
//! through a seedable, portable generator (ChaCha8).

pub mod criteria;
pub mod data;
pub mod engine;
pub mod error;
pub mod glm;
pub mod ipw;
pub mod math;
pub mod oracles;

// Vectors and matrices in the public API are nalgebra types; re-exporting
// the crate lets downstream code name them without pinning its own copy.
pub use nalgebra;

pub use criteria::{
    score_pool, Candidate, CandidateId, CriterionKind, CriterionSpec, OracleSettings, PoolPoint,
    ScoredPool,
};
pub use data::{generate, load_csv, write_csv, CsvSchema, DgpConfig, DgpKind, GeneratedData};
pub use engine::{
    evaluate, run, EngineConfig, EngineError, Metrics, StepRecord, StoppingRule, Trajectory,
};
pub use error::{Error, Result};
pub use glm::{fit_map, Dataset, FitSettings, ModelFit, ModelSpec};
pub use ipw::{ipw_weights, weighted_refit, WeightConvention, WeightedAugmentedSet};
