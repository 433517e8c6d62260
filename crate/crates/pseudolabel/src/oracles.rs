//! Brute-force reference implementations used by tests and acceptance runs.
//!
//! Everything here trades speed for transparency: trapezoidal quadrature in
//! log space for model evidence, self-normalized importance sampling for the
//! posterior predictive, dense grid search for the MAP, and central finite
//! differences for derivatives. Production code paths must never need these;
//! they exist so the fast implementations can be checked against slow ones
//! that are simple enough to audit by eye.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::glm::{self, Dataset, FitSettings, ModelSpec};
use crate::math::{clamp_prob, log_sum_exp, sigmoid};

/// A regular rectangular quadrature grid over one or two dimensions.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    lower: DVector<f64>,
    upper: DVector<f64>,
    steps: Vec<usize>,
    boundary_mass_check: f64,
}

/// Hard cap on total grid nodes.
const MAX_NODES: usize = 10_000_000;

impl QuadratureGrid {
    /// Builds a grid from explicit per-dimension bounds and node counts.
    ///
    /// `steps` counts nodes per dimension (at least 2). Only one- and
    /// two-dimensional grids are supported; higher-dimensional evidence
    /// estimation is out of scope for these oracles.
    pub fn new(
        lower: DVector<f64>,
        upper: DVector<f64>,
        steps: Vec<usize>,
        boundary_mass_check: f64,
    ) -> Result<Self> {
        let d = lower.len();
        if d == 0 || d > 2 {
            return Err(Error::Config(format!(
                "quadrature supports dimension 1 or 2, got {d}"
            )));
        }
        if upper.len() != d || steps.len() != d {
            return Err(Error::Shape {
                context: "QuadratureGrid",
                expected: format!("{d} bounds and step counts"),
                actual: format!("{} upper, {} steps", upper.len(), steps.len()),
            });
        }
        for k in 0..d {
            if !(upper[k] > lower[k]) {
                return Err(Error::Invalid {
                    context: "QuadratureGrid",
                    reason: format!("upper bound {} not above lower {}", upper[k], lower[k]),
                });
            }
            if steps[k] < 2 {
                return Err(Error::Invalid {
                    context: "QuadratureGrid",
                    reason: "need at least 2 nodes per dimension".into(),
                });
            }
        }
        let total: usize = steps.iter().product();
        if total > MAX_NODES {
            return Err(Error::Invalid {
                context: "QuadratureGrid",
                reason: format!("{total} nodes exceed the {MAX_NODES} cap"),
            });
        }
        Ok(Self {
            lower,
            upper,
            steps,
            boundary_mass_check,
        })
    }

    /// Grid centered on a Gaussian approximation: bounds are
    /// `center ± half_width_sds` marginal standard deviations, where the
    /// standard deviations come from inverting `info`.
    ///
    /// Eight standard deviations with the default mass check make boundary
    /// truncation undetectable at the tolerances used in this crate.
    pub fn from_gaussian(
        center: &DVector<f64>,
        info: &DMatrix<f64>,
        half_width_sds: f64,
        steps_per_dim: usize,
        boundary_mass_check: f64,
    ) -> Result<Self> {
        let d = center.len();
        let cov = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("information matrix is not positive definite".into()))?
            .inverse();
        let mut lower = DVector::zeros(d);
        let mut upper = DVector::zeros(d);
        for k in 0..d {
            let sd = cov[(k, k)].sqrt();
            lower[k] = center[k] - half_width_sds * sd;
            upper[k] = center[k] + half_width_sds * sd;
        }
        Self::new(lower, upper, vec![steps_per_dim; d], boundary_mass_check)
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn boundary_mass_check(&self) -> f64 {
        self.boundary_mass_check
    }

    fn axis_nodes(&self, k: usize) -> (f64, f64) {
        let h = (self.upper[k] - self.lower[k]) / (self.steps[k] - 1) as f64;
        (self.lower[k], h)
    }
}

/// Trapezoidal integration of `exp(log_f)` over the grid, carried out
/// entirely in log space.
///
/// Returns the log-integral together with the fraction of integral mass
/// contributed by boundary nodes; callers decide whether that fraction
/// violates their tolerance. The node order (row-major) fixes the reduction
/// order, so results are bit-reproducible.
pub fn log_integral_quadrature<F>(grid: &QuadratureGrid, mut log_f: F) -> Result<(f64, f64)>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let d = grid.dimension();
    let mut terms = Vec::new();
    let mut boundary_terms = Vec::new();
    match d {
        1 => {
            let (lo, h) = grid.axis_nodes(0);
            let m = grid.steps[0];
            let mut theta = DVector::zeros(1);
            for i in 0..m {
                theta[0] = lo + h * i as f64;
                let edge = i == 0 || i == m - 1;
                let w = if edge { 0.5 * h } else { h };
                let term = log_f(&theta)? + w.ln();
                terms.push(term);
                if edge {
                    boundary_terms.push(term);
                }
            }
        }
        2 => {
            let (lo0, h0) = grid.axis_nodes(0);
            let (lo1, h1) = grid.axis_nodes(1);
            let (m0, m1) = (grid.steps[0], grid.steps[1]);
            let mut theta = DVector::zeros(2);
            for i in 0..m0 {
                theta[0] = lo0 + h0 * i as f64;
                let w0 = if i == 0 || i == m0 - 1 { 0.5 * h0 } else { h0 };
                for j in 0..m1 {
                    theta[1] = lo1 + h1 * j as f64;
                    let w1 = if j == 0 || j == m1 - 1 { 0.5 * h1 } else { h1 };
                    let edge = i == 0 || i == m0 - 1 || j == 0 || j == m1 - 1;
                    let term = log_f(&theta)? + (w0 * w1).ln();
                    terms.push(term);
                    if edge {
                        boundary_terms.push(term);
                    }
                }
            }
        }
        _ => unreachable!("grid dimension validated at construction"),
    }
    let log_total = log_sum_exp(&terms);
    let log_boundary = log_sum_exp(&boundary_terms);
    let boundary_mass = if log_total.is_finite() {
        (log_boundary - log_total).exp()
    } else {
        0.0
    };
    Ok((log_total, boundary_mass))
}

/// Log model evidence `log ∫ p(data | theta) pi(theta) dtheta` by trapezoidal
/// quadrature.
///
/// Fails with a precision error when the boundary nodes carry more than the
/// grid's mass tolerance, which indicates truncated bounds.
pub fn evidence_quadrature(data: &Dataset, spec: &ModelSpec, grid: &QuadratureGrid) -> Result<f64> {
    if spec.dimension() != data.dim() || spec.dimension() != grid.dimension() {
        return Err(Error::Shape {
            context: "evidence_quadrature",
            expected: format!("dimension {}", spec.dimension()),
            actual: format!("data {}, grid {}", data.dim(), grid.dimension()),
        });
    }
    let (log_total, boundary_mass) =
        log_integral_quadrature(grid, |theta| glm::log_joint(theta, data, spec))?;
    if boundary_mass > grid.boundary_mass_check() {
        return Err(Error::OraclePrecision {
            mass: boundary_mass,
            limit: grid.boundary_mass_check(),
        });
    }
    Ok(log_total)
}

/// Result of a self-normalized importance-sampling run.
#[derive(Debug, Clone)]
pub struct SnisResult {
    /// Log of the estimated expectation.
    pub log_value: f64,
    /// Kish effective sample size of the normalized weights.
    pub ess: f64,
    /// Unnormalized log-weights, exposed for diagnostics and tests.
    pub log_weights: Vec<f64>,
}

/// Self-normalized importance sampling of
/// `E_target[exp(log_value(theta))]`, in log space.
///
/// The proposal is the Gaussian with mean `proposal_mean` and precision
/// `proposal_info`; `log_target` is the unnormalized log-density of the
/// distribution the expectation is taken under. Deterministic per seed.
pub fn snis_log_expectation<T, V>(
    proposal_mean: &DVector<f64>,
    proposal_info: &DMatrix<f64>,
    mut log_target: T,
    mut log_value: V,
    samples: usize,
    seed: u64,
) -> Result<SnisResult>
where
    T: FnMut(&DVector<f64>) -> Result<f64>,
    V: FnMut(&DVector<f64>) -> Result<f64>,
{
    let d = proposal_mean.len();
    if samples == 0 {
        return Err(Error::Config("importance sampling needs at least one sample".into()));
    }
    let chol_info = proposal_info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("proposal precision is not positive definite".into()))?;
    let cov = chol_info.inverse();
    let chol_cov = cov
        .cholesky()
        .ok_or_else(|| Error::Numerical("proposal covariance is not positive definite".into()))?;
    let l = chol_cov.l();
    let log_det_info = 2.0
        * chol_info
            .l()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det_info;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_weights = Vec::with_capacity(samples);
    let mut log_weighted_values = Vec::with_capacity(samples);
    let mut z = DVector::zeros(d);
    for _ in 0..samples {
        for k in 0..d {
            z[k] = StandardNormal.sample(&mut rng);
        }
        let theta = proposal_mean + &l * &z;
        let log_q = log_norm - 0.5 * z.norm_squared();
        let log_w = log_target(&theta)? - log_q;
        log_weights.push(log_w);
        log_weighted_values.push(log_w + log_value(&theta)?);
    }
    let log_sum_w = log_sum_exp(&log_weights);
    let log_sum_w2 = log_sum_exp(&log_weights.iter().map(|w| 2.0 * w).collect::<Vec<_>>());
    let ess = (2.0 * log_sum_w - log_sum_w2).exp();
    let log_value = log_sum_exp(&log_weighted_values) - log_sum_w;
    Ok(SnisResult {
        log_value,
        ess,
        log_weights,
    })
}

/// Monte-Carlo estimate with its effective-sample-size diagnostic.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    /// Estimated `log p(data ∪ (z, y) | data)`.
    pub log_value: f64,
    /// Kish effective sample size of the importance weights.
    pub ess: f64,
    /// Number of raw samples drawn.
    pub samples: usize,
}

/// Minimum effective sample size accepted by [`posterior_predictive_mc`].
pub const MIN_EFFECTIVE_SAMPLES: f64 = 50.0;

/// Minimum raw sample count accepted by [`posterior_predictive_mc`].
pub const MIN_MC_SAMPLES: usize = 1000;

/// Estimates the log posterior predictive of one pseudo-labeled candidate,
/// `log p(data ∪ ((features, label)) | data)`, by self-normalized importance
/// sampling against the posterior, using the Laplace Gaussian at the MAP as
/// the proposal. With no data the proposal is the prior itself.
///
/// Deterministic per seed. Errors when the effective sample size falls below
/// [`MIN_EFFECTIVE_SAMPLES`], which signals an unreliable estimate.
pub fn posterior_predictive_mc(
    data: &Dataset,
    spec: &ModelSpec,
    features: &DVector<f64>,
    label: u8,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    if samples < MIN_MC_SAMPLES {
        return Err(Error::Config(format!(
            "posterior_predictive_mc needs at least {MIN_MC_SAMPLES} samples, got {samples}"
        )));
    }
    if features.len() != spec.dimension() {
        return Err(Error::Shape {
            context: "posterior_predictive_mc",
            expected: format!("candidate of length {}", spec.dimension()),
            actual: format!("{}", features.len()),
        });
    }
    let (mean, info) = if data.n() == 0 {
        (spec.prior_mean().clone(), spec.prior_precision().clone())
    } else {
        let fit = glm::fit_map(data, spec, &FitSettings::default())?;
        (fit.theta_hat, fit.fisher_info)
    };
    let result = snis_log_expectation(
        &mean,
        &info,
        |theta| glm::log_joint(theta, data, spec),
        |theta| {
            let p = clamp_prob(sigmoid(theta.dot(features)));
            Ok(if label == 1 { p.ln() } else { (1.0 - p).ln() })
        },
        samples,
        seed,
    )?;
    if result.ess < MIN_EFFECTIVE_SAMPLES {
        return Err(Error::LowEffectiveSampleSize {
            ess: result.ess,
            min: MIN_EFFECTIVE_SAMPLES,
        });
    }
    Ok(McEstimate {
        log_value: result.log_value,
        ess: result.ess,
        samples,
    })
}

/// Dense grid search for the one-dimensional MAP: scans
/// `[lower, upper]` in increments of `step` and returns the best node.
/// Ties keep the earliest node, making the scan deterministic.
pub fn grid_search_map_1d(
    data: &Dataset,
    spec: &ModelSpec,
    lower: f64,
    upper: f64,
    step: f64,
) -> Result<f64> {
    if spec.dimension() != 1 || data.dim() != 1 {
        return Err(Error::Config("grid_search_map_1d requires dimension 1".into()));
    }
    if !(upper > lower) || !(step > 0.0) {
        return Err(Error::Invalid {
            context: "grid_search_map_1d",
            reason: "need upper > lower and step > 0".into(),
        });
    }
    let mut best_theta = lower;
    let mut best_value = f64::NEG_INFINITY;
    let mut theta = DVector::zeros(1);
    let count = ((upper - lower) / step).floor() as usize;
    for i in 0..=count {
        let t = lower + step * i as f64;
        theta[0] = t;
        let v = glm::log_joint(&theta, data, spec)?;
        if v > best_value {
            best_value = v;
            best_theta = t;
        }
    }
    Ok(best_theta)
}

/// Central finite-difference gradient of a scalar function.
pub fn central_diff_gradient<F>(mut f: F, theta: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let d = theta.len();
    let mut grad = DVector::zeros(d);
    let mut probe = theta.clone();
    for k in 0..d {
        probe[k] = theta[k] + h;
        let up = f(&probe)?;
        probe[k] = theta[k] - h;
        let down = f(&probe)?;
        probe[k] = theta[k];
        grad[k] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Central finite-difference Jacobian of a vector function; used to check an
/// analytic Hessian against the analytic gradient.
pub fn central_diff_jacobian<G>(mut g: G, theta: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    G: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let d = theta.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut probe = theta.clone();
    for k in 0..d {
        probe[k] = theta[k] + h;
        let up = g(&probe)?;
        probe[k] = theta[k] - h;
        let down = g(&probe)?;
        probe[k] = theta[k];
        for r in 0..d {
            jac[(r, k)] = (up[r] - down[r]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Spearman rank correlation with average ranks for ties.
///
/// Returns `NaN` when either input has zero rank variance (fewer than two
/// distinct values), mirroring the usual statistical convention.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "spearman needs equal-length slices");
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).expect("NaN in rank input"));
    let mut ranks = vec![0.0; n];
    let mut start = 0;
    while start < n {
        let mut end = start;
        while end + 1 < n && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        // Average the 1-based ranks across the tie group.
        let avg = (start + end) as f64 / 2.0 + 1.0;
        for &idx in &order[start..=end] {
            ranks[idx] = avg;
        }
        start = end + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        let da = a[i] - ma;
        let db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    cov / (va.sqrt() * vb.sqrt())
}
