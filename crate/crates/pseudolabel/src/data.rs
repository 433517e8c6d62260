//! Synthetic data generation and CSV ingestion.
//!
//! Two data-generating processes cover the experiment grid: a logistic
//! linear model (features standard normal, labels Bernoulli through the
//! sigmoid of a fixed true parameter) and a pair of class-conditional
//! Gaussians with equal priors and shared isotropic covariance. Generation
//! is deterministic per seed and retries with derived sub-seeds until the
//! labeled split contains both classes.
//!
//! Ground-truth labels of pool points are returned in a separate
//! [`HiddenLabels`] structure rather than on the pool points themselves, so
//! no selection criterion can read them even by accident: criteria only
//! ever see [`PoolPoint`]s, which carry features and an id.
//!
//! CSV files use a header row, comma delimiters, and a configurable
//! missing-label marker (default `"?"`); marker rows become pool
//! candidates in file order.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::criteria::{CandidateId, PoolPoint};
use crate::error::{Error, Result};
use crate::glm::Dataset;
use crate::math::{mix_seed, sigmoid};

/// Number of full redraws attempted before generation gives up on
/// producing a labeled split with both classes.
pub const MAX_GENERATION_RETRIES: u64 = 100;

/// The data-generating process. The feature dimension is implied by the
/// parameter vectors, which keeps them consistent by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum DgpKind {
    /// x ~ N(0, I), y ~ Bernoulli(sigmoid(xᵀθ_true)).
    LogisticLinear { theta_true: DVector<f64> },
    /// y ~ Bernoulli(1/2), x ~ N(mean_y, covariance_scale² · I).
    TwoGaussians {
        mean0: DVector<f64>,
        mean1: DVector<f64>,
        covariance_scale: f64,
    },
}

impl DgpKind {
    pub fn dimension(&self) -> usize {
        match self {
            DgpKind::LogisticLinear { theta_true } => theta_true.len(),
            DgpKind::TwoGaussians { mean0, .. } => mean0.len(),
        }
    }
}

/// A full experiment draw: sizes of the three splits and the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpConfig {
    pub kind: DgpKind,
    pub n_labeled: usize,
    pub n_pool: usize,
    pub n_test: usize,
    pub seed: u64,
}

/// Ground-truth labels of pool points, keyed by candidate id. Owned by
/// evaluation code; selection criteria never receive this type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenLabels {
    map: BTreeMap<CandidateId, u8>,
}

impl HiddenLabels {
    pub fn label_of(&self, id: CandidateId) -> Option<u8> {
        self.map.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CandidateId, u8)> + '_ {
        self.map.iter().map(|(&id, &label)| (id, label))
    }
}

/// Output of [`generate`]: the three disjoint splits, with pool ground
/// truth quarantined in `hidden`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub labeled: Dataset,
    pub pool: Vec<PoolPoint>,
    pub hidden: HiddenLabels,
    pub test: Dataset,
}

fn validate(config: &DgpConfig) -> Result<()> {
    if config.n_labeled == 0 || config.n_pool == 0 || config.n_test == 0 {
        return Err(Error::Invalid {
            context: "generate",
            reason: format!(
                "all split sizes must be at least 1, got labeled={} pool={} test={}",
                config.n_labeled, config.n_pool, config.n_test
            ),
        });
    }
    match &config.kind {
        DgpKind::LogisticLinear { theta_true } => {
            if theta_true.is_empty() {
                return Err(Error::Invalid {
                    context: "generate",
                    reason: "theta_true must have dimension at least 1".into(),
                });
            }
        }
        DgpKind::TwoGaussians {
            mean0,
            mean1,
            covariance_scale,
        } => {
            if mean0.is_empty() || mean0.len() != mean1.len() {
                return Err(Error::Invalid {
                    context: "generate",
                    reason: format!(
                        "class means must share a positive dimension, got {} and {}",
                        mean0.len(),
                        mean1.len()
                    ),
                });
            }
            if !(*covariance_scale > 0.0) || !covariance_scale.is_finite() {
                return Err(Error::Invalid {
                    context: "generate",
                    reason: format!("covariance_scale must be positive, got {covariance_scale}"),
                });
            }
        }
    }
    Ok(())
}

/// Draws `n` rows from the DGP, filling features row by row.
fn draw_rows(rng: &mut ChaCha8Rng, kind: &DgpKind, n: usize) -> (DMatrix<f64>, Vec<u8>) {
    let d = kind.dimension();
    let mut x = DMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        match kind {
            DgpKind::LogisticLinear { theta_true } => {
                let mut eta = 0.0;
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(i, j)] = z;
                    eta += z * theta_true[j];
                }
                y.push(u8::from(rng.random::<f64>() < sigmoid(eta)));
            }
            DgpKind::TwoGaussians {
                mean0,
                mean1,
                covariance_scale,
            } => {
                let label = u8::from(rng.random::<bool>());
                let mean = if label == 1 { mean1 } else { mean0 };
                for j in 0..d {
                    let z: f64 = rng.sample(StandardNormal);
                    x[(i, j)] = mean[j] + covariance_scale * z;
                }
                y.push(label);
            }
        }
    }
    (x, y)
}

/// Generates the labeled/pool/test splits.
///
/// Deterministic per seed: each attempt seeds a fresh ChaCha8 generator
/// with a sub-seed derived from `config.seed` and the attempt index, and
/// draws the three splits in a fixed order. If the labeled split comes out
/// single-class the entire draw is retried with the next sub-seed, up to
/// [`MAX_GENERATION_RETRIES`] times.
pub fn generate(config: &DgpConfig) -> Result<GeneratedData> {
    validate(config)?;
    for attempt in 0..MAX_GENERATION_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, attempt));
        let (xl, yl) = draw_rows(&mut rng, &config.kind, config.n_labeled);
        if !yl.contains(&0) || !yl.contains(&1) {
            continue;
        }
        let (xp, yp) = draw_rows(&mut rng, &config.kind, config.n_pool);
        let (xt, yt) = draw_rows(&mut rng, &config.kind, config.n_test);
        let pool = (0..config.n_pool)
            .map(|i| PoolPoint {
                id: i as CandidateId,
                features: xp.row(i).transpose(),
            })
            .collect();
        let hidden = HiddenLabels {
            map: (0..config.n_pool)
                .map(|i| (i as CandidateId, yp[i]))
                .collect(),
        };
        return Ok(GeneratedData {
            labeled: Dataset::new(xl, yl)?,
            pool,
            hidden,
            test: Dataset::new(xt, yt)?,
        });
    }
    Err(Error::GenerationRetriesExhausted {
        retries: MAX_GENERATION_RETRIES,
    })
}

/// How to read a CSV file: which column holds labels, which hold features,
/// what marks a missing label, and whether to prepend an intercept column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub label_column: String,
    pub feature_columns: Vec<String>,
    /// Label-cell value marking an unlabeled (pool) row.
    pub missing_marker: String,
    /// Prepend an all-ones column to loaded feature matrices.
    pub add_intercept: bool,
}

impl CsvSchema {
    /// Schema with the default `"?"` marker and an intercept column.
    pub fn new(label_column: &str, feature_columns: &[&str]) -> Self {
        Self {
            label_column: label_column.to_string(),
            feature_columns: feature_columns.iter().map(|s| s.to_string()).collect(),
            missing_marker: "?".to_string(),
            add_intercept: true,
        }
    }
}

/// Loads a header-first CSV file. Rows whose label cell equals the missing
/// marker become pool candidates with ids in file order; all other rows
/// must carry a 0/1 label and become the labeled dataset.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<(Dataset, Vec<PoolPoint>)> {
    if schema.feature_columns.is_empty() {
        return Err(Error::Config(
            "csv schema must name at least one feature column".into(),
        ));
    }
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Data(format!(
                "column '{name}' not found in header [{}]",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let label_idx = column_index(&schema.label_column)?;
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;

    let d_raw = feature_idx.len();
    let mut labeled_rows: Vec<(Vec<f64>, u8)> = Vec::new();
    let mut pool_rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // 1-based physical row in the file; the header is row 1.
        let row = i + 2;
        let mut features = Vec::with_capacity(d_raw);
        for (k, &idx) in feature_idx.iter().enumerate() {
            let column = schema.feature_columns[k].clone();
            let cell = record.get(idx).ok_or_else(|| Error::CsvParse {
                row,
                column: column.clone(),
                message: "missing cell".into(),
            })?;
            let value: f64 = cell.trim().parse().map_err(|e| Error::CsvParse {
                row,
                column,
                message: format!("'{cell}' is not a number: {e}"),
            })?;
            features.push(value);
        }
        let label_cell = record
            .get(label_idx)
            .ok_or_else(|| Error::CsvParse {
                row,
                column: schema.label_column.clone(),
                message: "missing cell".into(),
            })?
            .trim();
        if label_cell == schema.missing_marker {
            pool_rows.push(features);
        } else {
            let label = match label_cell {
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::UnknownLabel {
                        row,
                        value: other.to_string(),
                    })
                }
            };
            labeled_rows.push((features, label));
        }
    }

    let d_out = d_raw + usize::from(schema.add_intercept);
    let to_matrix = |rows: &[Vec<f64>]| -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), d_out, |i, j| {
            if schema.add_intercept {
                if j == 0 {
                    1.0
                } else {
                    rows[i][j - 1]
                }
            } else {
                rows[i][j]
            }
        })
    };
    let features: Vec<Vec<f64>> = labeled_rows.iter().map(|(f, _)| f.clone()).collect();
    let labels: Vec<u8> = labeled_rows.iter().map(|&(_, l)| l).collect();
    let labeled = Dataset::new(to_matrix(&features), labels)?;
    let pool_matrix = to_matrix(&pool_rows);
    let pool = (0..pool_rows.len())
        .map(|i| PoolPoint {
            id: i as CandidateId,
            features: pool_matrix.row(i).transpose(),
        })
        .collect();
    Ok((labeled, pool))
}

/// Writes labeled rows (0/1 labels) followed by pool rows (missing marker)
/// in the schema's column layout. Features are written as given — the
/// schema's intercept flag applies only to loading — so a generate → write
/// → load round trip with `add_intercept: false` reproduces matrices
/// exactly.
pub fn write_csv(
    path: impl AsRef<Path>,
    labeled: &Dataset,
    pool: &[PoolPoint],
    schema: &CsvSchema,
) -> Result<()> {
    let d = schema.feature_columns.len();
    if labeled.dim() != d || pool.iter().any(|p| p.features.len() != d) {
        return Err(Error::Shape {
            context: "write_csv",
            expected: format!("{d} feature columns"),
            actual: format!(
                "labeled d={}, pool dims {:?}",
                labeled.dim(),
                pool.iter().map(|p| p.features.len()).collect::<Vec<_>>()
            ),
        });
    }
    let mut out = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![schema.label_column.clone()];
    header.extend(schema.feature_columns.iter().cloned());
    out.write_record(&header)?;
    for i in 0..labeled.n() {
        let mut record = vec![labeled.labels()[i].to_string()];
        for j in 0..d {
            record.push(labeled.features()[(i, j)].to_string());
        }
        out.write_record(&record)?;
    }
    for point in pool {
        let mut record = vec![schema.missing_marker.clone()];
        for j in 0..d {
            record.push(point.features[j].to_string());
        }
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}
