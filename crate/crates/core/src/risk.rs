//! Risk measures on finite samples and on GP posteriors.
//!
//! Two estimators are provided for a sample `F_1..F_L` with probability
//! weights `p_1..p_L`:
//!
//! * **VaR**: the smallest sample value whose cumulative weight (in sorted
//!   order) reaches `alpha`. For uniform weights this is the order statistic
//!   `F_(ceil(L*alpha))`.
//! * **CVaR**: for uniform weights, the mean of the top `L - ceil(L*alpha) + 1`
//!   order statistics (the divisor equals the number of summed terms). For
//!   general weights, the conditional expectation of the tail beyond the VaR,
//!   splitting the probability atom at the VaR proportionally, i.e.
//!   `( (cumw_{j*} - alpha) F_(j*) + sum_{j > j*} p_(j) F_(j) ) / (1 - alpha)`.
//!
//! CVaR at `alpha = 0` is the (weighted) mean in both conventions.
//!
//! [`posterior_risk`] estimates `rho[F_n(x, W)]` under a GP posterior by the
//! reparameterization `F_hat^j = mu + C z_j` with `C` the Cholesky factor of
//! the posterior covariance over the block `(x, w_1..w_L)` and `z_j` fixed
//! standard-normal base samples, so the estimate is deterministic given the
//! base samples and differentiable in `x` (and in the fantasy candidate).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::gp::Surrogate;
use crate::linalg;

/// Slack used when comparing cumulative weights against `alpha`, so that
/// accumulated floating-point error in `sum(1/L)` cannot shift the selected
/// order statistic off the exact-arithmetic one.
const CUMW_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskMeasure {
    Var,
    Cvar,
}

impl std::fmt::Display for RiskMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RiskMeasure::Var => write!(f, "var"),
            RiskMeasure::Cvar => write!(f, "cvar"),
        }
    }
}

/// Which risk measure to compute and at which level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub measure: RiskMeasure,
    pub alpha: f64,
}

impl RiskSpec {
    pub fn new(measure: RiskMeasure, alpha: f64) -> Result<Self> {
        let ok = match measure {
            RiskMeasure::Var => alpha > 0.0 && alpha < 1.0,
            RiskMeasure::Cvar => (0.0..1.0).contains(&alpha),
        };
        if !ok {
            return Err(Error::invalid(format!(
                "alpha {alpha} out of range for {measure} (VaR needs (0,1), CVaR [0,1))"
            )));
        }
        Ok(RiskSpec { measure, alpha })
    }

    pub fn var(alpha: f64) -> Result<Self> {
        Self::new(RiskMeasure::Var, alpha)
    }

    pub fn cvar(alpha: f64) -> Result<Self> {
        Self::new(RiskMeasure::Cvar, alpha)
    }
}

/// Where the points of a [`WSet`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WSetSource {
    /// The full support of a finite environment distribution.
    Full,
    /// An i.i.d. subsample standing in for a continuous (or large) support.
    Subsampled,
}

/// A finite set of environment points with probability weights, used both as
/// the support of finite distributions and as the per-iteration subsample
/// `W~` for continuous ones.
#[derive(Debug, Clone, PartialEq)]
pub struct WSet {
    points: DMatrix<f64>, // one row per point
    weights: DVector<f64>,
    source: WSetSource,
}

impl WSet {
    pub fn new(points: DMatrix<f64>, weights: DVector<f64>, source: WSetSource) -> Result<Self> {
        if points.nrows() == 0 {
            return Err(Error::invalid("WSet needs at least one point"));
        }
        if points.nrows() != weights.len() {
            return Err(Error::invalid(format!(
                "WSet has {} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        ensure_finite(points.as_slice(), "WSet points")?;
        validate_weights(weights.as_slice())?;
        Ok(WSet { points, weights, source })
    }

    /// Uniformly weighted set.
    pub fn uniform(points: DMatrix<f64>, source: WSetSource) -> Result<Self> {
        let l = points.nrows();
        let w = DVector::from_element(l, 1.0 / l as f64);
        Self::new(points, w, source)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one point
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn source(&self) -> WSetSource {
        self.source
    }
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("weights sum to {total}, expected 1")));
    }
    Ok(())
}

/// Result of an empirical risk evaluation on a finite sample.
///
/// `value = sum_i coeffs[i].1 * samples[coeffs[i].0]`, which is what gradient
/// code needs: with the realized ordering held fixed, the estimator is a
/// linear functional of the sample vector.
#[derive(Debug, Clone)]
pub struct RiskSampleEstimate {
    pub value: f64,
    /// Indices into the original sample, sorted ascending by value; ties keep
    /// their original relative order.
    pub ordering: Vec<usize>,
    /// Sparse linear-functional representation of the estimate.
    pub coeffs: Vec<(usize, f64)>,
}

fn validate_samples(samples: &[f64], weights: &[f64]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::invalid("empty sample vector"));
    }
    if samples.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} samples but {} weights",
            samples.len(),
            weights.len()
        )));
    }
    ensure_finite(samples, "samples")?;
    validate_weights(weights)
}

/// Stable argsort: ascending by value, ties by original index.
fn sorted_order(samples: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| samples[a].partial_cmp(&samples[b]).expect("finite samples"));
    idx
}

/// Index (into `order`) of the VaR: smallest position whose cumulative weight
/// reaches `alpha`.
fn var_position(samples: &[f64], weights: &[f64], order: &[usize], alpha: f64) -> (usize, f64) {
    let _ = samples;
    let mut cumw = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        cumw += weights[i];
        if cumw >= alpha - CUMW_SLACK {
            return (pos, cumw);
        }
    }
    // Weights sum to 1 (validated) and alpha < 1, so we cannot get here except
    // through rounding; fall back to the largest sample.
    (order.len() - 1, cumw)
}

fn uniform_weights(weights: &[f64]) -> bool {
    weights.iter().all(|&w| w == weights[0])
}

/// Empirical value-at-risk of a weighted sample.
pub fn empirical_var(samples: &[f64], weights: &[f64], alpha: f64) -> Result<RiskSampleEstimate> {
    validate_samples(samples, weights)?;
    RiskSpec::var(alpha)?;
    let order = sorted_order(samples);
    let (pos, _) = var_position(samples, weights, &order, alpha);
    let idx = order[pos];
    Ok(RiskSampleEstimate {
        value: samples[idx],
        ordering: order,
        coeffs: vec![(idx, 1.0)],
    })
}

/// Empirical conditional value-at-risk of a weighted sample.
pub fn empirical_cvar(samples: &[f64], weights: &[f64], alpha: f64) -> Result<RiskSampleEstimate> {
    validate_samples(samples, weights)?;
    RiskSpec::cvar(alpha)?;
    let order = sorted_order(samples);

    if uniform_weights(weights) {
        // Mean of the top order statistics, dividing by the number of summed
        // terms. ceil(L*alpha) is clamped to at least 1 so alpha = 0 averages
        // the whole sample.
        let l = samples.len();
        let first = ((l as f64 * alpha).ceil() as usize).max(1) - 1; // 0-based
        let tail = &order[first..];
        let count = tail.len() as f64;
        let mut sum = 0.0;
        for &i in tail {
            sum += samples[i];
        }
        let coeffs = tail.iter().map(|&i| (i, 1.0 / count)).collect();
        return Ok(RiskSampleEstimate { value: sum / count, ordering: order, coeffs });
    }

    // Weighted tail expectation with the VaR atom split proportionally.
    let (pos, cumw) = var_position(samples, weights, &order, alpha);
    let denom = 1.0 - alpha;
    let mut coeffs = Vec::with_capacity(order.len() - pos);
    let atom = (cumw - alpha).max(0.0);
    coeffs.push((order[pos], atom / denom));
    for &i in &order[pos + 1..] {
        coeffs.push((i, weights[i] / denom));
    }
    let mut value = 0.0;
    for &(i, c) in &coeffs {
        value += c * samples[i];
    }
    Ok(RiskSampleEstimate { value, ordering: order, coeffs })
}

/// Dispatches to [`empirical_var`] / [`empirical_cvar`] per the spec.
pub fn empirical_risk(samples: &[f64], weights: &[f64], spec: RiskSpec) -> Result<RiskSampleEstimate> {
    match spec.measure {
        RiskMeasure::Var => empirical_var(samples, weights, spec.alpha),
        RiskMeasure::Cvar => empirical_cvar(samples, weights, spec.alpha),
    }
}

/// Which inputs [`posterior_risk_gradient`] differentiates with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskGradient {
    /// The decision point `x` shared by every row of the query block.
    Query,
    /// The candidate `(x, w)` that produced a fantasy model.
    Candidate,
}

/// Maximum posterior block variance (relative to the kernel output scale)
/// below which the posterior is treated as degenerate and sampled with zero
/// covariance, so duplicated noise-free queries reproduce observed values
/// exactly instead of through jitter noise.
const DEGENERATE_VARIANCE_REL: f64 = 1e-12;

fn block_chol(model: &impl Surrogate, cov: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    let scale = model.outputscale_raw();
    let max_var = (0..cov.nrows()).map(|i| cov[(i, i)]).fold(0.0, f64::max);
    if max_var <= DEGENERATE_VARIANCE_REL * scale {
        return Ok(None);
    }
    let (l, _) = linalg::cholesky_with_jitter(cov, 1e-9 * scale, "posterior risk block")?;
    Ok(Some(l))
}

fn check_block_args(model: &impl Surrogate, x: &[f64], wset: &WSet, z: &DMatrix<f64>) -> Result<()> {
    if x.len() + wset.dim() != model.input_dim() {
        return Err(Error::invalid(format!(
            "query dimension {} + {} does not match model dimension {}",
            x.len(),
            wset.dim(),
            model.input_dim()
        )));
    }
    ensure_finite(x, "query x")?;
    if z.nrows() == 0 || z.ncols() != wset.len() {
        return Err(Error::invalid(format!(
            "base sample matrix is {}x{}, expected M x {}",
            z.nrows(),
            z.ncols(),
            wset.len()
        )));
    }
    Ok(())
}

/// Sample-average estimate of `rho[F(x, W)]` under the model posterior.
///
/// `z` holds `M` standard-normal rows of length `L = wset.len()`. Returns the
/// estimate and the per-draw risk values.
pub fn posterior_risk(
    model: &impl Surrogate,
    x: &[f64],
    wset: &WSet,
    spec: RiskSpec,
    z: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>)> {
    check_block_args(model, x, wset, z)?;
    let (mean, cov) = model.block_posterior(x, wset.points())?;
    let chol = block_chol(model, &cov)?;
    let m = z.nrows();
    let l = wset.len();
    let weights = wset.weights().as_slice();
    let mut per_draw = DVector::zeros(m);
    let mut sample = vec![0.0; l];
    for j in 0..m {
        for i in 0..l {
            sample[i] = mean[i];
        }
        if let Some(c) = &chol {
            for i in 0..l {
                let mut acc = 0.0;
                for t in 0..=i {
                    acc += c[(i, t)] * z[(j, t)];
                }
                sample[i] += acc;
            }
        }
        per_draw[j] = empirical_risk(&sample, weights, spec)?.value;
    }
    let estimate = per_draw.sum() / m as f64;
    Ok((estimate, per_draw))
}

/// [`posterior_risk`] together with its gradient.
///
/// The gradient holds the realized orderings fixed (the estimator is then a
/// linear functional of the Gaussian draws) and differentiates the posterior
/// mean and covariance factor, either with respect to the shared query `x`
/// ([`RiskGradient::Query`]) or the fantasy candidate
/// ([`RiskGradient::Candidate`]).
pub fn posterior_risk_gradient(
    model: &impl Surrogate,
    x: &[f64],
    wset: &WSet,
    spec: RiskSpec,
    z: &DMatrix<f64>,
    wrt: RiskGradient,
) -> Result<(f64, DVector<f64>)> {
    check_block_args(model, x, wset, z)?;
    let grad = model.block_posterior_grad(
        x,
        wset.points(),
        match wrt {
            RiskGradient::Query => crate::gp::Wrt::Query,
            RiskGradient::Candidate => crate::gp::Wrt::Candidate,
        },
    )?;
    let g = grad.dmean.len();
    let l = wset.len();
    let m = z.nrows();
    let weights = wset.weights().as_slice();

    let chol = block_chol(model, &grad.cov)?;
    // dC per gradient coordinate; zero when the block is degenerate (the
    // estimator is locally constant there).
    let dchol: Vec<DMatrix<f64>> = match &chol {
        Some(c) => grad.dcov.iter().map(|ds| linalg::cholesky_derivative(c, ds)).collect(),
        None => Vec::new(),
    };

    let mut sample = vec![0.0; l];
    let mut total = 0.0;
    let mut gradient = DVector::zeros(g);
    for j in 0..m {
        for i in 0..l {
            sample[i] = grad.mean[i];
        }
        if let Some(c) = &chol {
            for i in 0..l {
                let mut acc = 0.0;
                for t in 0..=i {
                    acc += c[(i, t)] * z[(j, t)];
                }
                sample[i] += acc;
            }
        }
        let est = empirical_risk(&sample, weights, spec)?;
        total += est.value;
        for (gi, grad_g) in gradient.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(i, coef) in &est.coeffs {
                let mut dval = grad.dmean[gi][i];
                if !dchol.is_empty() {
                    let dc = &dchol[gi];
                    for t in 0..=i {
                        dval += dc[(i, t)] * z[(j, t)];
                    }
                }
                acc += coef * dval;
            }
            *grad_g += acc;
        }
    }
    let m_f = m as f64;
    Ok((total / m_f, gradient / m_f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uni(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    #[test]
    fn var_uniform_matches_order_statistic() {
        // Values 1..10 shuffled; VaR_0.7 is the ceil(10*0.7) = 7th order stat.
        let samples = [3.0, 9.0, 1.0, 7.0, 5.0, 10.0, 2.0, 8.0, 6.0, 4.0];
        let est = empirical_var(&samples, &uni(10), 0.7).unwrap();
        assert_eq!(est.value, 7.0);
        assert_eq!(est.coeffs, vec![(3, 1.0)]);
    }

    #[test]
    fn cvar_uniform_divides_by_term_count() {
        let samples = [3.0, 9.0, 1.0, 7.0, 5.0, 10.0, 2.0, 8.0, 6.0, 4.0];
        let est = empirical_cvar(&samples, &uni(10), 0.7).unwrap();
        // Mean of {7, 8, 9, 10}.
        assert_eq!(est.value, 8.5);
        assert_eq!(est.coeffs.len(), 4);
    }

    #[test]
    fn cvar_at_zero_is_the_mean() {
        let samples = [2.0, -1.0, 5.0, 0.5];
        let est = empirical_cvar(&samples, &uni(4), 0.0).unwrap();
        assert!((est.value - 1.625).abs() < 1e-15);
    }

    #[test]
    fn weighted_var_uses_cumulative_weight() {
        let samples = [3.0, 1.0, 2.0];
        let weights = [0.2, 0.5, 0.3];
        let est = empirical_var(&samples, &weights, 0.6).unwrap();
        assert_eq!(est.value, 2.0);
    }

    #[test]
    fn weighted_cvar_splits_the_atom() {
        let samples = [3.0, 1.0, 2.0];
        let weights = [0.2, 0.5, 0.3];
        // Sorted: 1 (cum 0.5), 2 (cum 0.8), 3 (cum 1.0); alpha = 0.6.
        // Tail: 0.2 of the atom at 2 plus the full 0.2 at 3 => (0.2*2 + 0.2*3)/0.4 = 2.5.
        let est = empirical_cvar(&samples, &weights, 0.6).unwrap();
        assert!((est.value - 2.5).abs() < 1e-15, "got {}", est.value);
    }

    #[test]
    fn weighted_cvar_at_zero_is_weighted_mean() {
        let samples = [3.0, 1.0, 2.0];
        let weights = [0.2, 0.5, 0.3];
        let est = empirical_cvar(&samples, &weights, 0.0).unwrap();
        let mean: f64 = samples.iter().zip(&weights).map(|(s, w)| s * w).sum();
        assert!((est.value - mean).abs() < 1e-12);
    }

    #[test]
    fn ties_keep_original_order() {
        let samples = [2.0, 1.0, 1.0, 2.0];
        let est = empirical_var(&samples, &uni(4), 0.5).unwrap();
        assert_eq!(est.ordering, vec![1, 2, 0, 3]);
        assert_eq!(est.value, 1.0);
        let cvar = empirical_cvar(&samples, &uni(4), 0.5).unwrap();
        // Tail of 3: {1, 2, 2}.
        assert!((cvar.value - 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(empirical_var(&[], &[], 0.5).is_err());
        assert!(empirical_var(&[1.0], &[0.5], 0.5).is_err()); // weights sum 0.5
        assert!(empirical_var(&[1.0, 2.0], &[0.5, 0.5], 0.0).is_err()); // alpha
        assert!(empirical_var(&[1.0, 2.0], &[0.5, 0.5], 1.0).is_err());
        assert!(empirical_cvar(&[1.0, 2.0], &[0.5, 0.5], 1.0).is_err());
        assert!(empirical_var(&[f64::NAN, 2.0], &[0.5, 0.5], 0.5).is_err());
        assert!(empirical_cvar(&[1.0, 2.0], &[0.7, 0.5], 0.5).is_err());
    }

    #[test]
    fn risk_spec_validation() {
        assert!(RiskSpec::var(0.7).is_ok());
        assert!(RiskSpec::cvar(0.0).is_ok());
        assert!(RiskSpec::var(0.0).is_err());
        assert!(RiskSpec::cvar(1.0).is_err());
    }
}
