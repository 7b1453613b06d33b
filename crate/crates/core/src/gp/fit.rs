//! Maximum a posteriori hyperparameter fitting.
//!
//! The optimized objective is the log marginal likelihood of the
//! standardized targets plus weak Gamma log-priors, maximized over
//! log-parameterized hyperparameters with a multistart box L-BFGS. Priors
//! (shape, rate): lengthscales Gamma(3.0, 6.0), outputscale Gamma(2.0,
//! 0.15), noise variance Gamma(1.1, 0.05) — the defaults widely used for
//! standardized data on unit-cube inputs.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::Gamma;

use crate::error::{Error, Result};
use crate::gp::{
    GaussianProcess, Hyperparameters, InputTransform, OutcomeTransform, BASE_JITTER_REL,
};
use crate::linalg::{cholesky_inverse, cholesky_with_jitter, solve_lower, solve_lower_transpose};
use crate::optimize::{lbfgs_box, LbfgsConfig};
use crate::qmc::{rng_from_seed, split_seed};

const SQRT5: f64 = 2.23606797749978969;
const LN_2PI: f64 = 1.83787706640934548;

/// Box bounds of the log-parameterized search.
const LS_BOUNDS: (f64, f64) = (1e-3, 1e2);
const SCALE_BOUNDS: (f64, f64) = (1e-6, 1e4);
const NOISE_BOUNDS: (f64, f64) = (1e-8, 1e2);

/// Gamma prior constants (shape, rate).
const LS_PRIOR: (f64, f64) = (3.0, 6.0);
const SCALE_PRIOR: (f64, f64) = (2.0, 0.15);
const NOISE_PRIOR: (f64, f64) = (1.1, 0.05);

/// Configuration of one MAP fit.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// L-BFGS iteration budget per restart.
    pub q1: usize,
    /// Total restarts; the first uses `warm_start` (or defaults), the rest
    /// draw starting hyperparameters from the priors.
    pub restarts: usize,
    pub seed: u64,
    /// Known observation-noise variance in raw outcome units; when set, the
    /// noise is standardized and held fixed instead of optimized.
    pub fixed_noise: Option<f64>,
    /// Hyperparameters to start the first restart from (e.g. the previous
    /// fit when refitting incrementally).
    pub warm_start: Option<Hyperparameters>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { q1: 50, restarts: 5, seed: 0, fixed_noise: None, warm_start: None }
    }
}

/// Log-density of `Gamma(shape, rate)` at `v` and its derivative with
/// respect to `ln v`, dropping the normalizing constant.
fn gamma_log_prior(v: f64, shape: f64, rate: f64) -> (f64, f64) {
    ((shape - 1.0) * v.ln() - rate * v, (shape - 1.0) - rate * v)
}

struct MapObjective<'a> {
    /// Per-dimension matrices of squared coordinate differences.
    sqdiff: Vec<DMatrix<f64>>,
    targets: &'a DVector<f64>,
    n: usize,
    d: usize,
    fixed_noise_std: Option<f64>,
}

impl MapObjective<'_> {
    fn n_params(&self) -> usize {
        self.d + 1 + usize::from(self.fixed_noise_std.is_none())
    }

    fn unpack(&self, theta: &[f64]) -> (Vec<f64>, f64, f64) {
        let ls: Vec<f64> = theta[..self.d].iter().map(|t| t.exp()).collect();
        let s2 = theta[self.d].exp();
        let noise = self.fixed_noise_std.unwrap_or_else(|| theta[self.d + 1].exp());
        (ls, s2, noise)
    }

    /// Negative (log marginal likelihood + log prior) and its gradient with
    /// respect to the log-parameters. Returns `+inf` when the covariance
    /// cannot be factorized within the jitter policy.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (ls, s2, noise) = self.unpack(theta);
        let n = self.n;
        let inf = (f64::INFINITY, vec![0.0; self.n_params()]);

        // Scaled squared distances and kernel matrix.
        let mut r2 = DMatrix::<f64>::zeros(n, n);
        for (g, sq) in self.sqdiff.iter().enumerate() {
            let inv = 1.0 / (ls[g] * ls[g]);
            for i in 0..n {
                for j in 0..i {
                    r2[(i, j)] += sq[(i, j)] * inv;
                }
            }
        }
        let mut k = DMatrix::zeros(n, n);
        // E r_ij = (5/3) s2 (1 + sqrt5 r) exp(-sqrt5 r): the shared factor of
        // every lengthscale derivative (dK/d ln ls_g = E .* sq_g / ls_g^2).
        let mut e = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = s2;
            e[(i, i)] = (5.0 / 3.0) * s2;
            for j in 0..i {
                let r = r2[(i, j)].sqrt();
                let decay = (-SQRT5 * r).exp();
                let kij = s2 * (1.0 + SQRT5 * r + 5.0 / 3.0 * r2[(i, j)]) * decay;
                let eij = (5.0 / 3.0) * s2 * (1.0 + SQRT5 * r) * decay;
                k[(i, j)] = kij;
                k[(j, i)] = kij;
                e[(i, j)] = eij;
                e[(j, i)] = eij;
            }
        }
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += noise;
        }
        let Ok((chol, jitter)) = cholesky_with_jitter(&a, BASE_JITTER_REL * s2, "fit covariance")
        else {
            return inf;
        };

        let mut alpha = self.targets.clone();
        solve_lower(&chol, &mut alpha);
        solve_lower_transpose(&chol, &mut alpha);
        let log_det_half: f64 = (0..n).map(|i| chol[(i, i)].ln()).sum();
        let lml = -0.5 * self.targets.dot(&alpha) - log_det_half - 0.5 * n as f64 * LN_2PI;

        // W = alpha alpha^T - A^{-1}; d lml / d theta = 0.5 tr(W dA/d theta).
        let a_inv = cholesky_inverse(&chol);
        let w = &alpha * alpha.transpose() - a_inv;

        let mut grad = vec![0.0; self.n_params()];
        for (g, sq) in self.sqdiff.iter().enumerate() {
            let inv = 1.0 / (ls[g] * ls[g]);
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..i {
                    acc += 2.0 * w[(i, j)] * e[(i, j)] * sq[(i, j)];
                }
            }
            grad[g] = 0.5 * acc * inv;
        }
        {
            // dA/d ln s2 = K + jitter I (the jitter scales with s2).
            let mut acc = 0.0;
            for i in 0..n {
                acc += w[(i, i)] * (k[(i, i)] + jitter);
                for j in 0..i {
                    acc += 2.0 * w[(i, j)] * k[(i, j)];
                }
            }
            grad[self.d] = 0.5 * acc;
        }
        if self.fixed_noise_std.is_none() {
            let tr_w: f64 = (0..n).map(|i| w[(i, i)]).sum();
            grad[self.d + 1] = 0.5 * noise * tr_w;
        }

        // Log priors.
        let mut log_prior = 0.0;
        for (g, l) in ls.iter().enumerate() {
            let (lp, dlp) = gamma_log_prior(*l, LS_PRIOR.0, LS_PRIOR.1);
            log_prior += lp;
            grad[g] += dlp;
        }
        let (lp, dlp) = gamma_log_prior(s2, SCALE_PRIOR.0, SCALE_PRIOR.1);
        log_prior += lp;
        grad[self.d] += dlp;
        if self.fixed_noise_std.is_none() {
            let (lp, dlp) = gamma_log_prior(noise, NOISE_PRIOR.0, NOISE_PRIOR.1);
            log_prior += lp;
            grad[self.d + 1] += dlp;
        }

        // Minimization convention.
        let f = -(lml + log_prior);
        let grad = grad.into_iter().map(|g| -g).collect();
        if !f.is_finite() {
            return inf;
        }
        (f, grad)
    }
}

/// Fits a Gaussian process to raw targets by MAP estimation.
///
/// Inputs must already live in the unit cube; `input` records the map back
/// to the raw domain. Outcomes are standardized internally.
pub fn fit_map(
    inputs: DMatrix<f64>,
    targets_raw: &DVector<f64>,
    input: InputTransform,
    cfg: &FitConfig,
) -> Result<GaussianProcess> {
    let n = inputs.nrows();
    let d = inputs.ncols();
    if n < 2 {
        return Err(Error::invalid(format!("fitting needs at least 2 observations, got {n}")));
    }
    if d != input.dim() {
        return Err(Error::invalid(format!(
            "input dimension {d} does not match transform dimension {}",
            input.dim()
        )));
    }
    if cfg.restarts == 0 || cfg.q1 == 0 {
        return Err(Error::invalid("fit needs restarts >= 1 and q1 >= 1"));
    }
    if let Some(v) = cfg.fixed_noise {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::invalid(format!("fixed noise variance must be >= 0, got {v}")));
        }
    }

    let outcome = OutcomeTransform::from_data(targets_raw);
    let targets_std = DVector::from_iterator(n, targets_raw.iter().map(|y| outcome.standardize(*y)));
    let fixed_noise_std = cfg.fixed_noise.map(|v| v / (outcome.std * outcome.std));

    let mut sqdiff = Vec::with_capacity(d);
    for g in 0..d {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..i {
                let dv = inputs[(i, g)] - inputs[(j, g)];
                m[(i, j)] = dv * dv;
                m[(j, i)] = dv * dv;
            }
        }
        sqdiff.push(m);
    }
    let obj = MapObjective { sqdiff, targets: &targets_std, n, d, fixed_noise_std };

    let n_params = obj.n_params();
    let mut bounds: Vec<(f64, f64)> = Vec::with_capacity(n_params);
    for _ in 0..d {
        bounds.push((LS_BOUNDS.0.ln(), LS_BOUNDS.1.ln()));
    }
    bounds.push((SCALE_BOUNDS.0.ln(), SCALE_BOUNDS.1.ln()));
    if fixed_noise_std.is_none() {
        bounds.push((NOISE_BOUNDS.0.ln(), NOISE_BOUNDS.1.ln()));
    }
    let clamp_theta = |theta: &mut Vec<f64>| {
        for (t, (lo, hi)) in theta.iter_mut().zip(bounds.iter()) {
            *t = t.clamp(*lo, *hi);
        }
    };

    // Starting points: warm start or defaults first, prior draws after.
    let mut starts: Vec<Vec<f64>> = Vec::with_capacity(cfg.restarts);
    let mut first = Vec::with_capacity(n_params);
    match &cfg.warm_start {
        Some(h) => {
            if h.dim() != d {
                return Err(Error::invalid("warm-start hyperparameter dimension mismatch"));
            }
            first.extend(h.lengthscales.iter().map(|l| l.ln()));
            first.push(h.outputscale.ln());
            if fixed_noise_std.is_none() {
                first.push(h.noise_variance.max(NOISE_BOUNDS.0).ln());
            }
        }
        None => {
            first.extend(std::iter::repeat(0.5_f64.ln()).take(d));
            first.push(0.0);
            if fixed_noise_std.is_none() {
                first.push(0.1_f64.ln());
            }
        }
    }
    clamp_theta(&mut first);
    starts.push(first);
    let ls_prior = Gamma::new(LS_PRIOR.0, LS_PRIOR.1).expect("valid prior");
    let scale_prior = Gamma::new(SCALE_PRIOR.0, SCALE_PRIOR.1).expect("valid prior");
    let noise_prior = Gamma::new(NOISE_PRIOR.0, NOISE_PRIOR.1).expect("valid prior");
    for r in 1..cfg.restarts {
        let mut rng = rng_from_seed(split_seed(cfg.seed, 100 + r as u64));
        let mut theta = Vec::with_capacity(n_params);
        for _ in 0..d {
            theta.push(rng.sample(ls_prior).ln());
        }
        theta.push(rng.sample(scale_prior).ln());
        if fixed_noise_std.is_none() {
            theta.push(rng.sample(noise_prior).ln());
        }
        clamp_theta(&mut theta);
        starts.push(theta);
    }

    let lbfgs_cfg = LbfgsConfig { max_iters: cfg.q1, ..LbfgsConfig::default() };
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_err: Option<Error> = None;
    for start in &starts {
        let mut f = |theta: &[f64], _: bool| Ok(obj.eval(theta));
        match lbfgs_box(&mut f, start, &bounds, &lbfgs_cfg) {
            Ok(r) => {
                // Highest posterior density wins; ties keep the earliest
                // restart.
                let replace = best.as_ref().map(|(bv, _)| r.value < *bv).unwrap_or(true);
                if replace && r.value.is_finite() {
                    best = Some((r.value, r.x));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (_, theta) = best.ok_or_else(|| {
        last_err.unwrap_or_else(|| Error::numerical("every fit restart failed"))
    })?;

    let (ls, s2, noise) = obj.unpack(&theta);
    let hyper = Hyperparameters::new(DVector::from_vec(ls), s2, noise)?;
    GaussianProcess::from_parts(inputs, targets_std, hyper, input, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid_inputs(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64)
    }

    #[test]
    fn interpolates_linear_data_with_fixed_zero_noise() {
        let inputs = grid_inputs(5);
        let targets = DVector::from_fn(5, |i, _| 2.0 * (i as f64 / 4.0) - 0.7);
        let cfg = FitConfig { restarts: 1, fixed_noise: Some(0.0), ..Default::default() };
        let gp = fit_map(inputs.clone(), &targets, InputTransform::identity(1), &cfg).unwrap();
        let (mean, _) = gp.posterior(&inputs).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(mean[i], targets[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn refit_is_deterministic() {
        let inputs = grid_inputs(8);
        let targets = DVector::from_fn(8, |i, _| ((i as f64) * 1.3).sin());
        let cfg = FitConfig { seed: 42, ..Default::default() };
        let a = fit_map(inputs.clone(), &targets, InputTransform::identity(1), &cfg).unwrap();
        let b = fit_map(inputs, &targets, InputTransform::identity(1), &cfg).unwrap();
        assert_eq!(a.hyperparameters(), b.hyperparameters());
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let inputs = DMatrix::<f64>::from_row_slice(6, 2, &[
            0.1, 0.3, 0.5, 0.8, 0.9, 0.1, 0.3, 0.6, 0.7, 0.9, 0.2, 0.2,
        ]);
        let targets = DVector::from_column_slice(&[0.3, -0.8, 1.1, 0.2, -0.4, 0.9]);
        let outcome = OutcomeTransform::from_data(&targets);
        let targets_std =
            DVector::from_iterator(6, targets.iter().map(|y| outcome.standardize(*y)));
        let mut sqdiff = Vec::new();
        for g in 0..2 {
            sqdiff.push(DMatrix::<f64>::from_fn(6, 6, |i, j| {
                (inputs[(i, g)] - inputs[(j, g)]).powi(2)
            }));
        }
        let obj = MapObjective { sqdiff, targets: &targets_std, n: 6, d: 2, fixed_noise_std: None };
        let theta = vec![(0.4_f64).ln(), (0.7_f64).ln(), (1.2_f64).ln(), (0.05_f64).ln()];
        let (_, grad) = obj.eval(&theta);
        let h = 1e-6;
        for p in 0..4 {
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[p] += h;
            tm[p] -= h;
            let fd = (obj.eval(&tp).0 - obj.eval(&tm).0) / (2.0 * h);
            assert!(
                (grad[p] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "param {p}: analytic {} vs fd {}",
                grad[p],
                fd
            );
        }
    }

    #[test]
    fn fixed_noise_is_respected() {
        let inputs = grid_inputs(6);
        let targets = DVector::from_fn(6, |i, _| (i as f64 * 0.9).cos() * 3.0 + 1.0);
        let cfg = FitConfig { restarts: 2, fixed_noise: Some(0.25), ..Default::default() };
        let gp = fit_map(inputs, &targets, InputTransform::identity(1), &cfg).unwrap();
        let std = gp.outcome_transform().std;
        assert_abs_diff_eq!(
            gp.hyperparameters().noise_variance * std * std,
            0.25,
            epsilon = 1e-12
        );
    }

    #[test]
    fn too_few_observations_rejected() {
        let inputs = DMatrix::from_row_slice(1, 1, &[0.5]);
        let targets = DVector::from_column_slice(&[1.0]);
        assert!(fit_map(inputs, &targets, InputTransform::identity(1), &FitConfig::default())
            .is_err());
    }
}
