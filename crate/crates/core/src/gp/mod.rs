//! Gaussian-process surrogate over the joint space of decision and
//! environment variables.
//!
//! The model uses a Matern 5/2 kernel with per-dimension lengthscales,
//! a Gaussian observation-noise term, and maximum a posteriori
//! hyperparameter selection under weak Gamma priors. Inputs are expected in
//! the unit cube (callers map problem bounds through [`InputTransform`]) and
//! targets are standardized internally through [`OutcomeTransform`]; all
//! public posterior quantities are reported in raw outcome units.
//!
//! Besides the plain posterior, the module exposes the two pieces the
//! acquisition layer is built on:
//!
//! * *block posteriors*: joint mean and covariance (plus derivatives) of the
//!   latent function at rows `(x, w_1), ..., (x, w_L)` sharing one decision
//!   vector, and
//! * *fantasy models* ([`FantasyModel`]): the posterior conditioned on one
//!   hypothetical observation at a candidate point, expressed in closed form
//!   so it stays differentiable with respect to the candidate.

pub(crate) mod kernel;
mod fit;
mod serialize;

pub use fit::{fit_map, FitConfig};
pub use serialize::{from_json, to_json, FORMAT_VERSION};

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite_scalar, Error, Result};
use crate::linalg::{cholesky_with_jitter, solve_lower, solve_lower_transpose};
use kernel::Matern52;

/// Relative jitter added to the observed-process covariance diagonal before
/// Cholesky factorization (scaled by the outputscale).
pub const BASE_JITTER_REL: f64 = 1e-9;

/// Tolerance for the "inputs live in the unit cube" precondition.
const UNIT_CUBE_SLACK: f64 = 1e-8;

/// Kernel and noise hyperparameters in standardized-outcome units.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// One positive lengthscale per input dimension.
    pub lengthscales: DVector<f64>,
    /// Kernel variance (prior variance of the standardized latent function).
    pub outputscale: f64,
    /// Observation-noise variance of standardized targets; zero means
    /// noise-free observations.
    pub noise_variance: f64,
}

impl Hyperparameters {
    pub fn new(lengthscales: DVector<f64>, outputscale: f64, noise_variance: f64) -> Result<Self> {
        if lengthscales.is_empty() {
            return Err(Error::invalid("hyperparameters need at least one lengthscale"));
        }
        for (i, l) in lengthscales.iter().enumerate() {
            if !(l.is_finite() && *l > 0.0) {
                return Err(Error::invalid(format!("lengthscale {i} must be positive, got {l}")));
            }
        }
        if !(outputscale.is_finite() && outputscale > 0.0) {
            return Err(Error::invalid(format!("outputscale must be positive, got {outputscale}")));
        }
        if !(noise_variance.is_finite() && noise_variance >= 0.0) {
            return Err(Error::invalid(format!(
                "noise variance must be nonnegative, got {noise_variance}"
            )));
        }
        Ok(Self { lengthscales, outputscale, noise_variance })
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    pub(crate) fn kernel(&self) -> Matern52<'_> {
        Matern52 { ls: self.lengthscales.as_slice(), s2: self.outputscale }
    }
}

/// Affine map between the problem's native box bounds and the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTransform {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl InputTransform {
    pub fn new(bounds: &[(f64, f64)]) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("input transform needs at least one dimension"));
        }
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(Error::invalid(format!(
                    "dimension {i}: bounds must be finite with upper > lower, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            lower: DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0)),
            upper: DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.1)),
        })
    }

    /// Identity map on `[0, 1]^dim` for data that is already normalized.
    pub fn identity(dim: usize) -> Self {
        Self { lower: DVector::zeros(dim), upper: DVector::from_element(dim, 1.0) }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn to_unit(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(x, (lo, hi))| (x - lo) / (hi - lo))
            .collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        unit.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .map(|(u, (lo, hi))| lo + u * (hi - lo))
            .collect()
    }
}

/// Standardization of raw outcomes: `standardized = (raw - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeTransform {
    pub mean: f64,
    pub std: f64,
}

impl OutcomeTransform {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    /// Empirical mean/standard deviation of the data (population convention).
    /// Constant data degrades to a unit scale so the transform stays
    /// invertible.
    pub fn from_data(targets: &DVector<f64>) -> Self {
        if targets.is_empty() {
            return Self::identity();
        }
        let mean = targets.mean();
        let var = targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / targets.len() as f64;
        let std = var.sqrt();
        Self { mean, std: if std > 1e-12 { std } else { 1.0 } }
    }

    pub fn standardize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn destandardize(&self, std_value: f64) -> f64 {
        self.mean + self.std * std_value
    }
}

/// Which inputs a block-posterior derivative is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wrt {
    /// The shared decision vector `x` of the query block.
    Query,
    /// The conditioning candidate of a fantasy model.
    Candidate,
}

/// Joint posterior of a query block together with its derivatives.
///
/// `dmean[g]` and `dcov[g]` are the derivatives of the mean vector and the
/// covariance matrix with respect to coordinate `g` of the differentiation
/// target selected by [`Wrt`].
#[derive(Debug, Clone)]
pub struct BlockPosteriorGrads {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub dmean: Vec<DVector<f64>>,
    pub dcov: Vec<DMatrix<f64>>,
}

/// Posterior interface shared by the fitted model and its fantasy updates.
///
/// A *query block* is the set of joint points `(x, w_1), ..., (x, w_L)`
/// built from one decision vector `x` (length `dx`) and the rows of
/// `wpoints` (an `L x dw` matrix, `dw = input_dim - dx`, possibly zero
/// columns for problems without environment variables). Means and
/// covariances are for the latent (noise-free) function in raw outcome
/// units.
pub trait Surrogate {
    /// Total input dimension `dx + dw`.
    fn input_dim(&self) -> usize;

    /// Outcome standardization used by the model.
    fn outcome(&self) -> OutcomeTransform;

    /// Kernel variance in raw squared outcome units; used to scale
    /// degeneracy thresholds and jitter.
    fn outputscale_raw(&self) -> f64;

    /// Observation-noise variance in raw squared outcome units.
    fn noise_variance_raw(&self) -> f64;

    /// Joint latent mean and covariance of a query block.
    fn block_posterior(&self, x: &[f64], wpoints: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>;

    /// Block posterior plus derivatives with respect to `wrt`.
    fn block_posterior_grad(&self, x: &[f64], wpoints: &DMatrix<f64>, wrt: Wrt)
        -> Result<BlockPosteriorGrads>;
}

/// Assembles the `L x d` query matrix whose row `l` is `(x, wpoints[l, :])`.
fn assemble_block(x: &[f64], wpoints: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let l = wpoints.nrows();
    if l == 0 {
        return Err(Error::invalid("query block needs at least one environment row"));
    }
    if x.len() + wpoints.ncols() != dim {
        return Err(Error::invalid(format!(
            "query block dimensions {} + {} do not match model dimension {dim}",
            x.len(),
            wpoints.ncols()
        )));
    }
    let mut q = DMatrix::zeros(l, dim);
    for i in 0..l {
        for (g, xv) in x.iter().enumerate() {
            q[(i, g)] = *xv;
        }
        for g in 0..wpoints.ncols() {
            q[(i, x.len() + g)] = wpoints[(i, g)];
        }
    }
    Ok(q)
}

fn check_unit_cube(points: &DMatrix<f64>, what: &str) -> Result<()> {
    for v in points.iter() {
        ensure_finite_scalar(*v, what)?;
        if *v < -UNIT_CUBE_SLACK || *v > 1.0 + UNIT_CUBE_SLACK {
            return Err(Error::invalid(format!("{what} must lie in the unit cube, got {v}")));
        }
    }
    Ok(())
}

/// Gaussian-process regression model over unit-cube inputs.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    hyper: Hyperparameters,
    input: InputTransform,
    outcome: OutcomeTransform,
    /// Training inputs in the unit cube, one row per observation.
    inputs: DMatrix<f64>,
    /// Standardized training targets.
    targets_std: DVector<f64>,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    chol: DMatrix<f64>,
    /// `(K + (noise + jitter) I)^{-1} targets_std`.
    alpha: DVector<f64>,
    /// Jitter actually added to the diagonal (standardized units).
    jitter: f64,
}

impl GaussianProcess {
    /// Builds the model from unit-cube inputs and *standardized* targets.
    pub fn from_parts(
        inputs: DMatrix<f64>,
        targets_std: DVector<f64>,
        hyper: Hyperparameters,
        input: InputTransform,
        outcome: OutcomeTransform,
    ) -> Result<Self> {
        if inputs.ncols() != hyper.dim() || inputs.ncols() != input.dim() {
            return Err(Error::invalid(format!(
                "input dimension mismatch: data {}, hyperparameters {}, transform {}",
                inputs.ncols(),
                hyper.dim(),
                input.dim()
            )));
        }
        if inputs.nrows() != targets_std.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} targets",
                inputs.nrows(),
                targets_std.len()
            )));
        }
        check_unit_cube(&inputs, "training input")?;
        for y in targets_std.iter() {
            ensure_finite_scalar(*y, "training target")?;
        }
        if !(outcome.std.is_finite() && outcome.std > 0.0 && outcome.mean.is_finite()) {
            return Err(Error::invalid("outcome transform must have finite mean and positive std"));
        }

        let n = inputs.nrows();
        let base_jitter = BASE_JITTER_REL * hyper.outputscale;
        let (chol, alpha, jitter) = if n == 0 {
            (DMatrix::zeros(0, 0), DVector::zeros(0), base_jitter)
        } else {
            let mut a = hyper.kernel().symmetric(&inputs);
            for i in 0..n {
                a[(i, i)] += hyper.noise_variance;
            }
            let (chol, jitter) = cholesky_with_jitter(&a, base_jitter, "training covariance")?;
            let mut alpha = targets_std.clone();
            solve_lower(&chol, &mut alpha);
            solve_lower_transpose(&chol, &mut alpha);
            (chol, alpha, jitter)
        };

        Ok(Self { hyper, input, outcome, inputs, targets_std, chol, alpha, jitter })
    }

    /// Builds the model from unit-cube inputs and raw targets, standardizing
    /// them through `outcome`.
    pub fn with_hyperparameters(
        inputs: DMatrix<f64>,
        targets_raw: &DVector<f64>,
        hyper: Hyperparameters,
        input: InputTransform,
        outcome: OutcomeTransform,
    ) -> Result<Self> {
        let std = DVector::from_iterator(targets_raw.len(), targets_raw.iter().map(|y| outcome.standardize(*y)));
        Self::from_parts(inputs, std, hyper, input, outcome)
    }

    /// Prior model with no observations.
    pub fn prior(hyper: Hyperparameters, input: InputTransform, outcome: OutcomeTransform) -> Result<Self> {
        let d = hyper.dim();
        Self::from_parts(DMatrix::zeros(0, d), DVector::zeros(0), hyper, input, outcome)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn input_transform(&self) -> &InputTransform {
        &self.input
    }

    pub fn outcome_transform(&self) -> OutcomeTransform {
        self.outcome
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn train_targets_std(&self) -> &DVector<f64> {
        &self.targets_std
    }

    pub fn train_targets_raw(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.targets_std.len(),
            self.targets_std.iter().map(|y| self.outcome.destandardize(*y)),
        )
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor of the training covariance (standardized).
    pub(crate) fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// `(K + (noise + jitter) I)^{-1} targets_std`.
    pub(crate) fn alpha_vec(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn base_jitter(&self) -> f64 {
        BASE_JITTER_REL * self.hyper.outputscale
    }

    /// Latent posterior mean and covariance at arbitrary unit-cube query rows,
    /// in raw outcome units.
    pub fn posterior(&self, query: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if query.ncols() != self.dim() {
            return Err(Error::invalid(format!(
                "query dimension {} does not match model dimension {}",
                query.ncols(),
                self.dim()
            )));
        }
        check_unit_cube(query, "query point")?;
        let kernel = self.hyper.kernel();
        let kqq = kernel.symmetric(query);
        let (mean_std, cov_std) = if self.is_empty() {
            (DVector::zeros(query.nrows()), kqq)
        } else {
            let kqt = kernel.cross(query, &self.inputs);
            let mean = &kqt * &self.alpha;
            // V = chol^{-1} kqt^T, so cov = kqq - V^T V.
            let mut v = kqt.transpose();
            solve_lower(&self.chol, &mut v);
            (mean, kqq - v.transpose() * v)
        };
        let s = self.outcome.std;
        let mean = mean_std.map(|m| self.outcome.destandardize(m));
        let cov = cov_std.map(|c| c * s * s);
        Ok((mean, cov))
    }

    /// Predictive mean and variance of a noisy *observation* at single points
    /// (latent variance plus noise), in raw units.
    pub fn predict_observation(&self, query: &DMatrix<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let (mean, cov) = self.posterior(query)?;
        let noise = self.noise_variance_raw();
        let var = DVector::from_iterator(
            mean.len(),
            (0..mean.len()).map(|i| (cov[(i, i)] + noise).max(0.0)),
        );
        Ok((mean, var))
    }
}

impl Surrogate for GaussianProcess {
    fn input_dim(&self) -> usize {
        self.dim()
    }

    fn outcome(&self) -> OutcomeTransform {
        self.outcome
    }

    fn outputscale_raw(&self) -> f64 {
        self.hyper.outputscale * self.outcome.std * self.outcome.std
    }

    fn noise_variance_raw(&self) -> f64 {
        self.hyper.noise_variance * self.outcome.std * self.outcome.std
    }

    fn block_posterior(&self, x: &[f64], wpoints: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = assemble_block(x, wpoints, self.dim())?;
        self.posterior(&q)
    }

    fn block_posterior_grad(
        &self,
        x: &[f64],
        wpoints: &DMatrix<f64>,
        wrt: Wrt,
    ) -> Result<BlockPosteriorGrads> {
        if wrt == Wrt::Candidate {
            return Err(Error::invalid(
                "the fitted model has no conditioning candidate to differentiate against",
            ));
        }
        let q = assemble_block(x, wpoints, self.dim())?;
        check_unit_cube(&q, "query point")?;
        let dx = x.len();
        let l = q.nrows();
        let kernel = self.hyper.kernel();
        let kqq = kernel.symmetric(&q);
        let s = self.outcome.std;

        if self.is_empty() {
            // Prior: constant mean, covariance independent of x because the
            // kernel is stationary and all rows share the same x offset.
            let mean = DVector::from_element(l, self.outcome.mean);
            let cov = kqq.map(|c| c * s * s);
            return Ok(BlockPosteriorGrads {
                mean,
                cov,
                dmean: vec![DVector::zeros(l); dx],
                dcov: vec![DMatrix::zeros(l, l); dx],
            });
        }

        let n = self.len();
        let kqt = kernel.cross(&q, &self.inputs);
        let mean_std = &kqt * &self.alpha;
        // U = (K + sI)^{-1} kqt^T via two triangular solves.
        let mut u = kqt.transpose();
        solve_lower(&self.chol, &mut u);
        let v = u.clone();
        let cov_std = &kqq - v.transpose() * &v;
        solve_lower_transpose(&self.chol, &mut u);

        // D_g[l, t] = d k(q_l, train_t) / d x_g; only the first dx
        // coordinates of the joint gradient matter because w rows are fixed.
        let mut grad_buf = vec![0.0; self.dim()];
        let mut dmats: Vec<DMatrix<f64>> = vec![DMatrix::zeros(l, n); dx];
        for i in 0..l {
            for t in 0..n {
                kernel.grad(&q, i, &self.inputs, t, &mut grad_buf);
                for g in 0..dx {
                    dmats[g][(i, t)] = grad_buf[g];
                }
            }
        }

        let mut dmean = Vec::with_capacity(dx);
        let mut dcov = Vec::with_capacity(dx);
        for g in 0..dx {
            let dm = (&dmats[g] * &self.alpha).map(|m| m * s);
            // d cov = d kqq - (D U + U^T D^T); d kqq = 0 since every row of
            // the block shifts by the same amount in x and the kernel is
            // stationary.
            let t1 = &dmats[g] * &u;
            let dc = (-(&t1 + t1.transpose())).map(|c| c * s * s);
            dmean.push(dm);
            dcov.push(dc);
        }

        Ok(BlockPosteriorGrads {
            mean: mean_std.map(|m| self.outcome.destandardize(m)),
            cov: cov_std.map(|c| c * s * s),
            dmean,
            dcov,
        })
    }
}

/// Posterior conditioned on one hypothetical observation at `candidate`.
///
/// With `c` the candidate, `v_c = chol^{-1} k(T, c)`, posterior variance
/// `var_c = k(c,c) - |v_c|^2`, and `denom = var_c + noise`, the hypothetical
/// standardized observation is `y_+ = mu(c) + sqrt(denom) z0` and the updated
/// posterior at a query block `Q` is
///
/// `mean_+(Q) = mean(Q) + s(Q) z0 / sqrt(denom)`
/// `cov_+(Q)  = cov(Q) - s(Q) s(Q)^T / denom`
///
/// where `s(Q) = cov(Q, c)` is the current posterior cross-covariance. This
/// closed form is algebraically identical to refitting the model on the
/// `n + 1` points with unchanged hyperparameters, but costs only one extra
/// triangular solve and stays differentiable in the candidate.
#[derive(Debug, Clone)]
pub struct FantasyModel<'p> {
    parent: &'p GaussianProcess,
    /// Candidate point in the unit cube.
    candidate: DVector<f64>,
    z0: f64,
    /// `chol^{-1} k(T, c)` (standardized kernel units).
    vc: DVector<f64>,
    /// `(K + sI)^{-1} k(T, c)`.
    uc: DVector<f64>,
    /// Latent posterior variance at the candidate (standardized, clamped
    /// to be nonnegative).
    var_c: f64,
    /// `var_c + noise`, clamped below by the base jitter so the update stays
    /// well defined when the candidate duplicates a noise-free observation.
    denom: f64,
    /// Whether the clamp above was active (exact duplicate of a noise-free
    /// observation); derivative of `denom` is zero in that regime.
    denom_clamped: bool,
    /// Standardized posterior mean at the candidate.
    mu_c_std: f64,
}

impl<'p> FantasyModel<'p> {
    fn build(parent: &'p GaussianProcess, candidate: DVector<f64>, z0: f64) -> Result<Self> {
        ensure_finite_scalar(z0, "fantasy draw")?;
        let n = parent.len();
        let kernel = parent.hyper.kernel();
        let cand_m = DMatrix::from_row_iterator(1, candidate.len(), candidate.iter().copied());
        check_unit_cube(&cand_m, "candidate point")?;

        let (vc, uc, mu_c_std) = if n == 0 {
            (DVector::zeros(0), DVector::zeros(0), 0.0)
        } else {
            let kc = DVector::from_iterator(
                n,
                (0..n).map(|t| kernel.eval(&cand_m, 0, parent.train_inputs(), t)),
            );
            let mut vc = kc.clone();
            solve_lower(&parent.chol, &mut vc);
            let mut uc = vc.clone();
            solve_lower_transpose(&parent.chol, &mut uc);
            let mu = kc.dot(&parent.alpha);
            (vc, uc, mu)
        };

        let raw_var = parent.hyper.outputscale - vc.norm_squared();
        let var_c = raw_var.max(0.0);
        let raw_denom = var_c + parent.hyper.noise_variance;
        let base = parent.base_jitter();
        let (denom, denom_clamped) = if raw_denom < base {
            (base, true)
        } else {
            // A clamp on either quantity freezes the derivative of denom.
            (raw_denom, raw_var < 0.0)
        };

        Ok(Self { parent, candidate, z0, vc, uc, var_c, denom, denom_clamped, mu_c_std })
    }

    pub fn candidate(&self) -> &DVector<f64> {
        &self.candidate
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    /// `chol^{-1} k(T, c)` of the parent (standardized kernel units).
    pub(crate) fn vc(&self) -> &DVector<f64> {
        &self.vc
    }

    /// `var_c + noise` after the duplicate clamp (standardized units).
    pub(crate) fn denom(&self) -> f64 {
        self.denom
    }

    pub fn parent(&self) -> &GaussianProcess {
        self.parent
    }

    /// The hypothetical raw observation this model conditions on:
    /// `mu(c) + sqrt(var_c + noise) z0` in raw units.
    pub fn fantasy_target(&self) -> f64 {
        let std_target = self.mu_c_std + (self.var_c + self.parent.hyper.noise_variance).sqrt() * self.z0;
        self.parent.outcome.destandardize(std_target)
    }

    /// Cross-covariance `cov(Q rows, candidate)` of the *parent* posterior,
    /// standardized units.
    fn cross_to_candidate(&self, q: &DMatrix<f64>, u: &DMatrix<f64>) -> DVector<f64> {
        let kernel = self.parent.hyper.kernel();
        let cand_m = DMatrix::from_row_iterator(1, self.candidate.len(), self.candidate.iter().copied());
        DVector::from_iterator(
            q.nrows(),
            (0..q.nrows()).map(|i| {
                let k_qc = kernel.eval(q, i, &cand_m, 0);
                if self.parent.is_empty() {
                    k_qc
                } else {
                    // u holds (K + sI)^{-1} kqt^T column-wise, so
                    // k(q_i, T) A^{-1} k(T, c) = u[:, i] . k(T, c) = vc-form.
                    let mut acc = 0.0;
                    for t in 0..self.parent.len() {
                        acc += u[(t, i)]
                            * kernel.eval(&cand_m, 0, self.parent.train_inputs(), t);
                    }
                    k_qc - acc
                }
            }),
        )
    }
}

impl Surrogate for FantasyModel<'_> {
    fn input_dim(&self) -> usize {
        self.parent.dim()
    }

    fn outcome(&self) -> OutcomeTransform {
        self.parent.outcome
    }

    fn outputscale_raw(&self) -> f64 {
        self.parent.outputscale_raw()
    }

    fn noise_variance_raw(&self) -> f64 {
        self.parent.noise_variance_raw()
    }

    fn block_posterior(&self, x: &[f64], wpoints: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let q = assemble_block(x, wpoints, self.parent.dim())?;
        check_unit_cube(&q, "query point")?;
        let parent = self.parent;
        let kernel = parent.hyper.kernel();
        let kqq = kernel.symmetric(&q);
        let (mean0, cov0, u) = if parent.is_empty() {
            (DVector::zeros(q.nrows()), kqq, DMatrix::zeros(0, q.nrows()))
        } else {
            let kqt = kernel.cross(&q, parent.train_inputs());
            let mean = &kqt * &parent.alpha;
            let mut u = kqt.transpose();
            solve_lower(&parent.chol, &mut u);
            let cov = &kqq - u.transpose() * &u;
            solve_lower_transpose(&parent.chol, &mut u);
            (mean, cov, u)
        };
        let s_vec = self.cross_to_candidate(&q, &u);
        let scale = self.z0 / self.denom.sqrt();
        let mean_std = &mean0 + &s_vec * scale;
        let cov_std = &cov0 - (&s_vec * s_vec.transpose()) / self.denom;
        let s = parent.outcome.std;
        Ok((
            mean_std.map(|m| parent.outcome.destandardize(m)),
            cov_std.map(|c| c * s * s),
        ))
    }

    fn block_posterior_grad(
        &self,
        x: &[f64],
        wpoints: &DMatrix<f64>,
        wrt: Wrt,
    ) -> Result<BlockPosteriorGrads> {
        let parent = self.parent;
        let q = assemble_block(x, wpoints, parent.dim())?;
        check_unit_cube(&q, "query point")?;
        let dx = x.len();
        let l = q.nrows();
        let n = parent.len();
        let d = parent.dim();
        let kernel = parent.hyper.kernel();
        let cand_m = DMatrix::from_row_iterator(1, d, self.candidate.iter().copied());
        let s_out = parent.outcome.std;

        // Parent block pieces.
        let kqq = kernel.symmetric(&q);
        let (mean0, cov0, u) = if n == 0 {
            (DVector::zeros(l), kqq, DMatrix::zeros(0, l))
        } else {
            let kqt = kernel.cross(&q, parent.train_inputs());
            let mean = &kqt * &parent.alpha;
            let mut u = kqt.transpose();
            solve_lower(&parent.chol, &mut u);
            let cov = &kqq - u.transpose() * &u;
            solve_lower_transpose(&parent.chol, &mut u);
            (mean, cov, u)
        };
        let s_vec = self.cross_to_candidate(&q, &u);
        let sqrt_denom = self.denom.sqrt();
        let mean_scale = self.z0 / sqrt_denom;
        let mean_std = &mean0 + &s_vec * mean_scale;
        let cov_std = &cov0 - (&s_vec * s_vec.transpose()) / self.denom;

        let mut grad_buf = vec![0.0; d];
        let (ng, dmean, dcov) = match wrt {
            Wrt::Query => {
                // Parent derivative matrices D_g[l, t].
                let mut dmats: Vec<DMatrix<f64>> = vec![DMatrix::zeros(l, n); dx];
                for i in 0..l {
                    for t in 0..n {
                        kernel.grad(&q, i, parent.train_inputs(), t, &mut grad_buf);
                        for g in 0..dx {
                            dmats[g][(i, t)] = grad_buf[g];
                        }
                    }
                }
                // ds[g][l] = d s_l / d x_g = d k(q_l, c)/d x_g - D_g[l, :] uc.
                let mut ds: Vec<DVector<f64>> = vec![DVector::zeros(l); dx];
                for i in 0..l {
                    kernel.grad(&q, i, &cand_m, 0, &mut grad_buf);
                    for g in 0..dx {
                        let mut corr = 0.0;
                        for t in 0..n {
                            corr += dmats[g][(i, t)] * self.uc[t];
                        }
                        ds[g][i] = grad_buf[g] - corr;
                    }
                }
                let mut dmean = Vec::with_capacity(dx);
                let mut dcov = Vec::with_capacity(dx);
                for g in 0..dx {
                    let dmean0 = &dmats[g] * &parent.alpha;
                    let t1 = &dmats[g] * &u;
                    let dcov0 = -(&t1 + t1.transpose());
                    let dm = (&dmean0 + &ds[g] * mean_scale).map(|m| m * s_out);
                    let cross = &ds[g] * s_vec.transpose();
                    let dc = (dcov0 - (&cross + cross.transpose()) / self.denom)
                        .map(|c| c * s_out * s_out);
                    dmean.push(dm);
                    dcov.push(dc);
                }
                (dx, dmean, dcov)
            }
            Wrt::Candidate => {
                // Parent posterior does not depend on the candidate; only
                // s_vec and denom do.
                // dk(T, c)/dc_g and its A^{-1}-solve, one column per g.
                let mut w_cols = DMatrix::zeros(n, d);
                for t in 0..n {
                    kernel.grad(&cand_m, 0, parent.train_inputs(), t, &mut grad_buf);
                    for g in 0..d {
                        w_cols[(t, g)] = grad_buf[g];
                    }
                }
                // a_inv_dkc = (K + sI)^{-1} dk(T, c)/dc_g column-wise.
                let mut chol_inv_dkc = w_cols.clone();
                if n > 0 {
                    solve_lower(&parent.chol, &mut chol_inv_dkc);
                }
                // d var_c / dc_g = -2 vc . (chol^{-1} dk(T,c)/dc_g).
                let mut ddenom = vec![0.0; d];
                if !self.denom_clamped {
                    for g in 0..d {
                        let mut acc = 0.0;
                        for t in 0..n {
                            acc += self.vc[t] * chol_inv_dkc[(t, g)];
                        }
                        ddenom[g] = -2.0 * acc;
                    }
                }
                // ds[g][l] = d k(q_l, c)/dc_g - k(q_l, T) A^{-1} dk(T, c)/dc_g.
                // `u` already holds A^{-1} k(T, q), so it contracts against the
                // raw kernel derivative columns.
                let mut ds: Vec<DVector<f64>> = vec![DVector::zeros(l); d];
                for i in 0..l {
                    kernel.grad(&cand_m, 0, &q, i, &mut grad_buf);
                    for g in 0..d {
                        let mut corr = 0.0;
                        for t in 0..n {
                            corr += u[(t, i)] * w_cols[(t, g)];
                        }
                        // grad_buf holds d k(c, q_l)/dc_g = d k(q_l, c)/dc_g.
                        ds[g][i] = grad_buf[g] - corr;
                    }
                }
                let mut dmean = Vec::with_capacity(d);
                let mut dcov = Vec::with_capacity(d);
                for g in 0..d {
                    // mean term: ds * z0/sqrt(denom) - s * z0 ddenom / (2 denom^{3/2}).
                    let dm = (&ds[g] * mean_scale
                        - &s_vec * (self.z0 * ddenom[g] / (2.0 * self.denom * sqrt_denom)))
                        .map(|m| m * s_out);
                    let cross = &ds[g] * s_vec.transpose();
                    let dc = ((-(&cross + cross.transpose()) / self.denom)
                        + (&s_vec * s_vec.transpose()) * (ddenom[g] / (self.denom * self.denom)))
                        .map(|c| c * s_out * s_out);
                    dmean.push(dm);
                    dcov.push(dc);
                }
                (d, dmean, dcov)
            }
        };
        debug_assert_eq!(dmean.len(), ng);

        Ok(BlockPosteriorGrads {
            mean: mean_std.map(|m| parent.outcome.destandardize(m)),
            cov: cov_std.map(|c| c * s_out * s_out),
            dmean,
            dcov,
        })
    }
}

/// Block posterior with derivatives of the mean and of the lower Cholesky
/// factor of the covariance.
#[derive(Debug, Clone)]
pub struct PosteriorWithGrads {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov` (after the jitter policy).
    pub chol: DMatrix<f64>,
    pub dmean: Vec<DVector<f64>>,
    /// Forward-mode derivative of the factor: `dC = C Phi(C^{-1} dCov C^{-T})`
    /// with `Phi` the lower triangle with halved diagonal.
    pub dchol: Vec<DMatrix<f64>>,
}

/// Block posterior of `model` at `(x, wpoints)` together with analytic
/// derivatives of the mean vector and of the covariance Cholesky factor with
/// respect to `wrt`. Fails with a numerical error when the covariance is
/// singular beyond the jitter policy.
pub fn posterior_with_gradients(
    model: &impl Surrogate,
    x: &[f64],
    wpoints: &DMatrix<f64>,
    wrt: Wrt,
) -> Result<PosteriorWithGrads> {
    let grads = model.block_posterior_grad(x, wpoints, wrt)?;
    let base_jitter = BASE_JITTER_REL * model.outputscale_raw();
    let (chol, _) = cholesky_with_jitter(&grads.cov, base_jitter, "query block covariance")?;
    let dchol = grads
        .dcov
        .iter()
        .map(|dc| crate::linalg::cholesky_derivative(&chol, dc))
        .collect();
    Ok(PosteriorWithGrads { mean: grads.mean, cov: grads.cov, chol, dmean: grads.dmean, dchol })
}

/// Builds one fantasy model per draw in `z0s`, all conditioned at `candidate`.
///
/// The candidate solve (`chol^{-1} k(T, c)`) is shared across draws, so the
/// per-draw cost is O(1) beyond the first.
pub fn fantasize<'p>(
    parent: &'p GaussianProcess,
    candidate: &[f64],
    z0s: &DVector<f64>,
) -> Result<Vec<FantasyModel<'p>>> {
    if candidate.len() != parent.dim() {
        return Err(Error::invalid(format!(
            "candidate dimension {} does not match model dimension {}",
            candidate.len(),
            parent.dim()
        )));
    }
    let cand = DVector::from_column_slice(candidate);
    let first = FantasyModel::build(parent, cand, z0s.get(0).copied().unwrap_or(0.0))?;
    let mut out = Vec::with_capacity(z0s.len());
    for (i, z) in z0s.iter().enumerate() {
        if i == 0 {
            out.push(first.clone());
        } else {
            ensure_finite_scalar(*z, "fantasy draw")?;
            let mut m = first.clone();
            m.z0 = *z;
            out.push(m);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_gp(noise: f64) -> GaussianProcess {
        let inputs = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, 0.8, 0.3, 0.4, 0.9, 0.6, 0.6]);
        let targets = DVector::from_column_slice(&[0.5, -1.2, 0.7, 0.1]);
        let hyper = Hyperparameters::new(DVector::from_column_slice(&[0.4, 0.6]), 1.3, noise).unwrap();
        GaussianProcess::with_hyperparameters(
            inputs,
            &targets,
            hyper,
            InputTransform::identity(2),
            OutcomeTransform::from_data(&targets),
        )
        .unwrap()
    }

    #[test]
    fn interpolates_training_data_when_noise_free() {
        let gp = toy_gp(0.0);
        let (mean, cov) = gp.posterior(&gp.train_inputs().clone()).unwrap();
        let raw = gp.train_targets_raw();
        for i in 0..4 {
            assert_abs_diff_eq!(mean[i], raw[i], epsilon = 1e-6);
            assert!(cov[(i, i)].abs() < 1e-6);
        }
    }

    #[test]
    fn posterior_variance_shrinks_near_data() {
        let gp = toy_gp(0.01);
        let near = DMatrix::from_row_slice(1, 2, &[0.11, 0.21]);
        let far = DMatrix::from_row_slice(1, 2, &[0.95, 0.05]);
        let (_, cov_near) = gp.posterior(&near).unwrap();
        let (_, cov_far) = gp.posterior(&far).unwrap();
        assert!(cov_near[(0, 0)] < cov_far[(0, 0)]);
        assert!(cov_far[(0, 0)] <= gp.outputscale_raw() * (1.0 + 1e-9));
    }

    #[test]
    fn prior_model_has_zero_mean_and_full_variance() {
        let hyper = Hyperparameters::new(DVector::from_element(2, 0.5), 2.0, 0.1).unwrap();
        let gp = GaussianProcess::prior(hyper, InputTransform::identity(2), OutcomeTransform::identity())
            .unwrap();
        let q = DMatrix::from_row_slice(1, 2, &[0.3, 0.7]);
        let (mean, cov) = gp.posterior(&q).unwrap();
        assert_eq!(mean[0], 0.0);
        assert_abs_diff_eq!(cov[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn block_posterior_matches_plain_posterior() {
        let gp = toy_gp(0.05);
        let w = DMatrix::from_row_slice(3, 1, &[0.2, 0.5, 0.8]);
        let (bm, bc) = gp.block_posterior(&[0.35], &w).unwrap();
        let q = DMatrix::from_row_slice(3, 2, &[0.35, 0.2, 0.35, 0.5, 0.35, 0.8]);
        let (pm, pc) = gp.posterior(&q).unwrap();
        assert_abs_diff_eq!(bm, pm, epsilon = 1e-14);
        assert_abs_diff_eq!(bc, pc, epsilon = 1e-14);
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let gp = toy_gp(0.02);
        let w = DMatrix::from_row_slice(2, 1, &[0.25, 0.75]);
        let x = [0.45];
        let grads = gp.block_posterior_grad(&x, &w, Wrt::Query).unwrap();
        let h = 1e-6;
        let (mp, cp) = gp.block_posterior(&[x[0] + h], &w).unwrap();
        let (mm, cm) = gp.block_posterior(&[x[0] - h], &w).unwrap();
        let fdm = (mp - mm) / (2.0 * h);
        let fdc = (cp - cm) / (2.0 * h);
        assert_abs_diff_eq!(&grads.dmean[0], &fdm, epsilon = 1e-6);
        assert_abs_diff_eq!(&grads.dcov[0], &fdc, epsilon = 1e-6);
    }

    #[test]
    fn fantasy_matches_retrained_model() {
        // Conditioning on a hypothetical observation must agree with
        // refitting the model on the extended data set with the same
        // hyperparameters: that is the defining property of the update.
        let gp = toy_gp(0.04);
        let cand = [0.3, 0.55];
        let z0 = DVector::from_column_slice(&[0.83]);
        let fm = &fantasize(&gp, &cand, &z0).unwrap()[0];
        let y_plus = fm.fantasy_target();

        let mut inputs = gp.train_inputs().clone().insert_row(4, 0.0);
        inputs[(4, 0)] = cand[0];
        inputs[(4, 1)] = cand[1];
        let mut targets = gp.train_targets_raw().insert_row(4, 0.0);
        targets[4] = y_plus;
        // Keep the parent's transforms and hyperparameters fixed.
        let retrained = GaussianProcess::with_hyperparameters(
            inputs,
            &targets,
            gp.hyperparameters().clone(),
            InputTransform::identity(2),
            gp.outcome_transform(),
        )
        .unwrap();

        let w = DMatrix::from_row_slice(3, 1, &[0.15, 0.5, 0.95]);
        let (fm_mean, fm_cov) = fm.block_posterior(&[0.7], &w).unwrap();
        let (rt_mean, rt_cov) = retrained.block_posterior(&[0.7], &w).unwrap();
        assert_abs_diff_eq!(fm_mean, rt_mean, epsilon = 1e-8);
        assert_abs_diff_eq!(fm_cov, rt_cov, epsilon = 1e-8);
    }

    #[test]
    fn fantasy_query_gradients_match_finite_differences() {
        let gp = toy_gp(0.03);
        let cand = [0.62, 0.41];
        let z0 = DVector::from_column_slice(&[-0.7]);
        let fm = &fantasize(&gp, &cand, &z0).unwrap()[0];
        let w = DMatrix::from_row_slice(2, 1, &[0.3, 0.6]);
        let x = [0.52];
        let grads = fm.block_posterior_grad(&x, &w, Wrt::Query).unwrap();
        let h = 1e-6;
        let (mp, cp) = fm.block_posterior(&[x[0] + h], &w).unwrap();
        let (mm, cm) = fm.block_posterior(&[x[0] - h], &w).unwrap();
        assert_abs_diff_eq!(&grads.dmean[0], &((mp - mm) / (2.0 * h)), epsilon = 1e-6);
        assert_abs_diff_eq!(&grads.dcov[0], &((cp - cm) / (2.0 * h)), epsilon = 1e-6);
    }

    #[test]
    fn fantasy_candidate_gradients_match_finite_differences() {
        let gp = toy_gp(0.03);
        let cand = [0.62, 0.41];
        let z0 = DVector::from_column_slice(&[1.2]);
        let fm = &fantasize(&gp, &cand, &z0).unwrap()[0];
        let w = DMatrix::from_row_slice(2, 1, &[0.3, 0.6]);
        let x = [0.52];
        let grads = fm.block_posterior_grad(&x, &w, Wrt::Candidate).unwrap();
        let h = 1e-6;
        for g in 0..2 {
            let mut cp = cand;
            let mut cm = cand;
            cp[g] += h;
            cm[g] -= h;
            let fp = &fantasize(&gp, &cp, &z0).unwrap()[0];
            let fmn = &fantasize(&gp, &cm, &z0).unwrap()[0];
            let (mp, covp) = fp.block_posterior(&x, &w).unwrap();
            let (mm, covm) = fmn.block_posterior(&x, &w).unwrap();
            assert_abs_diff_eq!(&grads.dmean[g], &((mp - mm) / (2.0 * h)), epsilon = 1e-5);
            assert_abs_diff_eq!(&grads.dcov[g], &((covp - covm) / (2.0 * h)), epsilon = 1e-5);
        }
    }

    #[test]
    fn duplicate_noise_free_candidate_reproduces_observation() {
        let gp = toy_gp(0.0);
        // Conditioning at an already-observed noise-free point must leave the
        // posterior there unchanged regardless of the draw.
        let cand = [0.1, 0.2];
        let z0 = DVector::from_column_slice(&[2.5]);
        let fm = &fantasize(&gp, &cand, &z0).unwrap()[0];
        let w = DMatrix::from_row_slice(1, 1, &[0.2]);
        let (mean, _) = fm.block_posterior(&[0.1], &w).unwrap();
        assert_abs_diff_eq!(mean[0], gp.train_targets_raw()[0], epsilon = 1e-4);
    }

    #[test]
    fn fantasize_shares_candidate_solve_across_draws() {
        let gp = toy_gp(0.02);
        let z0 = DVector::from_column_slice(&[0.5, -0.5, 1.5]);
        let fms = fantasize(&gp, &[0.3, 0.3], &z0).unwrap();
        assert_eq!(fms.len(), 3);
        for (fm, z) in fms.iter().zip(z0.iter()) {
            assert_eq!(fm.z0(), *z);
        }
        // Same candidate solve: deterministic equality of shared fields.
        assert_eq!(fms[0].vc, fms[2].vc);
        assert_eq!(fms[0].denom, fms[2].denom);
    }

    #[test]
    fn gradients_vanish_far_from_data() {
        // All training points sit near the origin with short lengthscales;
        // a distant query sees an essentially constant (prior) posterior.
        let inputs = DMatrix::from_row_slice(3, 2, &[0.01, 0.02, 0.03, 0.01, 0.02, 0.04]);
        let targets = DVector::from_column_slice(&[1.0, -1.0, 0.3]);
        let hyper = Hyperparameters::new(DVector::from_element(2, 0.05), 1.0, 0.01).unwrap();
        let gp = GaussianProcess::with_hyperparameters(
            inputs,
            &targets,
            hyper,
            InputTransform::identity(2),
            OutcomeTransform::from_data(&targets),
        )
        .unwrap();
        let w = DMatrix::from_row_slice(1, 1, &[0.9]);
        let res = posterior_with_gradients(&gp, &[0.9], &w, Wrt::Query).unwrap();
        assert!(res.dmean[0].amax() < 1e-6, "far-query mean gradient {:?}", res.dmean[0]);
    }

    #[test]
    fn scalar_chol_derivative_is_half_over_sqrt() {
        let gp = toy_gp(0.05);
        let w = DMatrix::from_row_slice(1, 1, &[0.35]);
        let grads = gp.block_posterior_grad(&[0.15], &w, Wrt::Query).unwrap();
        let res = posterior_with_gradients(&gp, &[0.15], &w, Wrt::Query).unwrap();
        // For a 1x1 covariance, C = sqrt(S) and dC = dS / (2 C); use the
        // factored value itself so the identity holds exactly even with the
        // stabilizing diagonal jitter included in the factor.
        assert_abs_diff_eq!(
            res.dchol[0][(0, 0)],
            grads.dcov[0][(0, 0)] / (2.0 * res.chol[(0, 0)]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn chol_factor_gradients_match_finite_differences() {
        let gp = toy_gp(0.02);
        let w = DMatrix::from_row_slice(2, 1, &[0.2, 0.7]);
        let x = [0.4];
        let res = posterior_with_gradients(&gp, &x, &w, Wrt::Query).unwrap();
        let h = 1e-5;
        let fd_of = |xv: f64| {
            let r = posterior_with_gradients(&gp, &[xv], &w, Wrt::Query).unwrap();
            r.chol
        };
        let fd = (fd_of(x[0] + h) - fd_of(x[0] - h)) / (2.0 * h);
        assert_abs_diff_eq!(&res.dchol[0], &fd, epsilon = 1e-5);
    }

    #[test]
    fn fantasy_variance_never_exceeds_parent() {
        let gp = toy_gp(0.05);
        let z0 = DVector::from_column_slice(&[0.9]);
        let fm = &fantasize(&gp, &[0.5, 0.5], &z0).unwrap()[0];
        for q in [[0.1, 0.9], [0.45, 0.5], [0.8, 0.2], [0.5, 0.5]] {
            let w = DMatrix::from_row_slice(1, 1, &[q[1]]);
            let (_, parent_cov) = gp.block_posterior(&[q[0]], &w).unwrap();
            let (_, fantasy_cov) = fm.block_posterior(&[q[0]], &w).unwrap();
            assert!(
                fantasy_cov[(0, 0)] <= parent_cov[(0, 0)] + 1e-10,
                "fantasy variance {} exceeds parent {} at {q:?}",
                fantasy_cov[(0, 0)],
                parent_cov[(0, 0)]
            );
        }
    }

    #[test]
    fn fantasy_variance_at_candidate_follows_noise_formula() {
        // Conditioning at the candidate leaves residual variance
        // var * noise / (var + noise) there.
        let gp = toy_gp(0.07);
        let cand = [0.33, 0.66];
        let w = DMatrix::from_row_slice(1, 1, &[cand[1]]);
        let (_, parent_cov) = gp.block_posterior(&[cand[0]], &w).unwrap();
        let var = parent_cov[(0, 0)];
        let noise = gp.noise_variance_raw();
        let fm = &fantasize(&gp, &cand, &DVector::from_column_slice(&[0.4])).unwrap()[0];
        let (_, fantasy_cov) = fm.block_posterior(&[cand[0]], &w).unwrap();
        assert_abs_diff_eq!(
            fantasy_cov[(0, 0)],
            var * noise / (var + noise),
            epsilon = 1e-8
        );
    }

    #[test]
    fn rejects_out_of_cube_inputs() {
        let hyper = Hyperparameters::new(DVector::from_element(1, 0.5), 1.0, 0.1).unwrap();
        let res = GaussianProcess::with_hyperparameters(
            DMatrix::from_row_slice(2, 1, &[0.5, 1.4]),
            &DVector::from_column_slice(&[0.0, 1.0]),
            hyper,
            InputTransform::identity(1),
            OutcomeTransform::identity(),
        );
        assert!(res.is_err());
    }

    #[test]
    fn input_transform_round_trips() {
        let tf = InputTransform::new(&[(-5.0, 10.0), (0.0, 15.0)]).unwrap();
        let raw = [2.5, 7.5];
        let unit = tf.to_unit(&raw);
        assert_abs_diff_eq!(unit[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(unit[1], 0.5, epsilon = 1e-15);
        let back = tf.from_unit(&unit);
        assert_abs_diff_eq!(back[0], raw[0], epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], raw[1], epsilon = 1e-12);
    }

    #[test]
    fn outcome_transform_standardizes_to_zero_mean_unit_variance() {
        let y = DVector::from_column_slice(&[1.0, 3.0, 5.0, 7.0]);
        let tf = OutcomeTransform::from_data(&y);
        assert_abs_diff_eq!(tf.mean, 4.0, epsilon = 1e-15);
        let stds: Vec<f64> = y.iter().map(|v| tf.standardize(*v)).collect();
        let m: f64 = stds.iter().sum::<f64>() / 4.0;
        let v: f64 = stds.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / 4.0;
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }
}

