//! Acquisition functions for risk-aware Bayesian optimization.
//!
//! The primary acquisition scores a joint candidate `(x, w)` by the expected
//! one-step drop of the minimal posterior risk. Its sample-average form here
//! uses `K` fantasy models that share one inner path matrix (common random
//! numbers) and measures the current best as the minimum of the
//! fantasy-average risk:
//!
//! `value = min_x (1/K) Σ_i r^i(x)  −  (1/K) Σ_i min_x r^i(x)`
//!
//! where `r^i` is fantasy `i`'s posterior-risk estimate on the shared paths.
//! Averages of minima never exceed minima of averages, so the value is
//! nonnegative by construction; when the candidate duplicates a noise-free
//! observation every fantasy collapses onto the current model, the two terms
//! coincide, and value and gradient cancel to zero. Gradients follow from
//! holding the cached inner minimizers fixed and differentiating with
//! respect to the candidate alone.
//!
//! A discretized variant replaces the continuous inner minimization with an
//! argmin over the previously evaluated decision points plus the candidate's
//! own decision coordinates. Baselines (expected improvement, a confidence
//! bound, the expectation-objective knowledge gradient) and the two random
//! strategies round out the set.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{ensure_finite, Error, Result};
use crate::gp::{fantasize, FantasyModel, GaussianProcess, OutcomeTransform, Surrogate, Wrt};
use crate::optimize::{
    multistart_minimize, LbfgsConfig, MultistartConfig, OptimizerConfig, TtsObjective,
};
use crate::problems::WDomain;
use crate::qmc::{inverse_normal_cdf, sobol_points, split_seed, BaseSampleSet};
use crate::risk::{posterior_risk, posterior_risk_gradient, RiskGradient, RiskSpec, WSet, WSetSource};

/// Seed stream (off the base-sample seed) for the nested minimizations.
const STREAM_INNER_SOLVE: u64 = 23;

/// Fantasy count used for cheap raw-sample scoring.
pub const RAW_SCORE_FANTASIES: usize = 4;

/// Relative posterior-variance threshold under which the point baselines
/// treat a location as noiselessly known. Sits above the stabilizing jitter
/// so noise-free training points register as degenerate.
const DEGENERATE_VARIANCE_REL: f64 = 1e-8;

// ---------------------------------------------------------------------------
// Shared types
// ---------------------------------------------------------------------------

/// Budgets of one nested (inner) minimization.
#[derive(Debug, Clone)]
pub struct InnerSolveConfig {
    pub restarts: usize,
    pub raw_samples: usize,
    /// Softmax temperature of the restart selection.
    pub eta: f64,
    pub lbfgs: LbfgsConfig,
}

impl InnerSolveConfig {
    /// Inner budgets of a resolved optimizer configuration.
    pub fn from_optimizer(cfg: &OptimizerConfig) -> Self {
        Self {
            restarts: cfg.inner_restarts,
            raw_samples: cfg.inner_raw,
            eta: 1.0,
            lbfgs: cfg.inner_lbfgs(),
        }
    }
}

/// Evaluation state of the knowledge-gradient acquisitions: the model, the
/// risk measure, the frozen base samples of the surrounding optimization
/// round, and the cached inner minimizers.
#[derive(Debug)]
pub struct AcqContext<'a> {
    pub gp: &'a GaussianProcess,
    pub spec: RiskSpec,
    pub base: &'a BaseSampleSet,
    pub inner: InnerSolveConfig,
    /// `K + 1` cached decision points: entry 0 minimizes the fantasy-average
    /// risk, entry `i >= 1` minimizes fantasy `i`'s risk. Empty until the
    /// first inner solve.
    pub inner_solutions: Vec<Vec<f64>>,
    /// Evaluations since the cached solutions were last refreshed.
    pub inner_stale_counter: usize,
}

impl<'a> AcqContext<'a> {
    pub fn new(
        gp: &'a GaussianProcess,
        spec: RiskSpec,
        base: &'a BaseSampleSet,
        inner: InnerSolveConfig,
    ) -> Result<Self> {
        if base.wset().dim() >= gp.dim() {
            return Err(Error::invalid(format!(
                "environment dimension {} leaves no decision coordinates in a {}-dim model",
                base.wset().dim(),
                gp.dim()
            )));
        }
        Ok(Self { gp, spec, base, inner, inner_solutions: Vec::new(), inner_stale_counter: 0 })
    }

    /// Decision dimension.
    pub fn dx(&self) -> usize {
        self.gp.dim() - self.base.wset().dim()
    }

    /// Environment dimension.
    pub fn dw(&self) -> usize {
        self.base.wset().dim()
    }
}

/// Value, candidate gradient, and diagnostics of one acquisition evaluation.
#[derive(Debug, Clone)]
pub struct AcqValue {
    pub value: f64,
    /// Gradient with respect to the joint candidate, length `dx + dw`.
    pub gradient: DVector<f64>,
    pub diagnostics: AcqDiagnostics,
}

/// Per-evaluation diagnostics.
#[derive(Debug, Clone, Default)]
pub struct AcqDiagnostics {
    /// The current-best term: the fantasy-average risk at its cached
    /// minimizer.
    pub current_best: f64,
    /// Each fantasy's risk at its own cached minimizer.
    pub fantasy_inner_values: Vec<f64>,
}

fn check_candidate(gp: &GaussianProcess, candidate: &[f64]) -> Result<()> {
    if candidate.len() != gp.dim() {
        return Err(Error::invalid(format!(
            "candidate dimension {} does not match model dimension {}",
            candidate.len(),
            gp.dim()
        )));
    }
    ensure_finite(candidate, "candidate")
}

fn fantasies<'p>(
    gp: &'p GaussianProcess,
    base: &BaseSampleSet,
    k_use: usize,
    candidate: &[f64],
) -> Result<Vec<FantasyModel<'p>>> {
    if k_use == 0 || k_use > base.k() {
        return Err(Error::invalid(format!(
            "cannot use {k_use} fantasies with {} draws",
            base.k()
        )));
    }
    let z0 = base.z0().rows(0, k_use).into_owned();
    fantasize(gp, candidate, &z0)
}

// ---------------------------------------------------------------------------
// Knowledge gradient over the continuous inner problem
// ---------------------------------------------------------------------------

/// Value/gradient assembly at fixed cached inner minimizers. `solutions`
/// holds `k_use + 1` decision points (entry 0 for the fantasy average).
fn kg_assemble(
    gp: &GaussianProcess,
    spec: RiskSpec,
    base: &BaseSampleSet,
    k_use: usize,
    solutions: &[Vec<f64>],
    candidate: &[f64],
    with_grad: bool,
) -> Result<AcqValue> {
    check_candidate(gp, candidate)?;
    if solutions.len() != k_use + 1 {
        return Err(Error::invalid(format!(
            "expected {} cached inner solutions, found {}",
            k_use + 1,
            solutions.len()
        )));
    }
    let fants = fantasies(gp, base, k_use, candidate)?;
    let wset = base.wset();
    let z = base.z_row(0);
    let d = candidate.len();
    let kf = k_use as f64;
    let x0 = &solutions[0];

    let mut best_sum = 0.0;
    let mut inner_sum = 0.0;
    let mut gradient = DVector::zeros(d);
    let mut fantasy_inner_values = Vec::with_capacity(k_use);
    for (i, fm) in fants.iter().enumerate() {
        let xi = &solutions[i + 1];
        if with_grad {
            let (v0, g0) =
                posterior_risk_gradient(fm, x0, wset, spec, z, RiskGradient::Candidate)?;
            let (vi, gi) = if xi == x0 {
                (v0, g0.clone())
            } else {
                posterior_risk_gradient(fm, xi, wset, spec, z, RiskGradient::Candidate)?
            };
            best_sum += v0;
            inner_sum += vi;
            gradient += (g0 - gi) / kf;
            fantasy_inner_values.push(vi);
        } else {
            let (v0, _) = posterior_risk(fm, x0, wset, spec, z)?;
            let (vi, _) =
                if xi == x0 { (v0, DVector::zeros(0)) } else { posterior_risk(fm, xi, wset, spec, z)? };
            best_sum += v0;
            inner_sum += vi;
            fantasy_inner_values.push(vi);
        }
    }
    Ok(AcqValue {
        value: (best_sum - inner_sum) / kf,
        gradient,
        diagnostics: AcqDiagnostics { current_best: best_sum / kf, fantasy_inner_values },
    })
}

/// Re-solves the nested minimizations at `candidate`: first the minimizer of
/// the fantasy-average risk, then each fantasy's own minimizer warm-started
/// from it. Warm-starting guarantees each fantasy minimum is no worse than
/// its value at the average's minimizer, which keeps the assembled
/// acquisition nonnegative. All solves share one seed so identical inner
/// objectives produce identical minimizers.
fn solve_inner_set(
    gp: &GaussianProcess,
    spec: RiskSpec,
    base: &BaseSampleSet,
    k_use: usize,
    inner: &InnerSolveConfig,
    warm: &[Vec<f64>],
    candidate: &[f64],
) -> Result<Vec<Vec<f64>>> {
    check_candidate(gp, candidate)?;
    let fants = fantasies(gp, base, k_use, candidate)?;
    let wset = base.wset();
    let z = base.z_row(0);
    let dx = gp.dim() - wset.dim();
    let bounds = vec![(0.0, 1.0); dx];
    let seed = split_seed(base.seed(), STREAM_INNER_SOLVE);
    let ms = MultistartConfig {
        restarts: inner.restarts,
        raw_samples: inner.raw_samples,
        eta: inner.eta,
        lbfgs: inner.lbfgs.clone(),
    };
    let kf = k_use as f64;

    let mut mix = |x: &[f64], _: bool| -> Result<(f64, Vec<f64>)> {
        let mut v = 0.0;
        let mut g = vec![0.0; dx];
        for fm in &fants {
            let (vi, gi) = posterior_risk_gradient(fm, x, wset, spec, z, RiskGradient::Query)?;
            v += vi / kf;
            for (gs, gn) in g.iter_mut().zip(gi.iter()) {
                *gs += gn / kf;
            }
        }
        Ok((v, g))
    };
    let r0 = multistart_minimize(&mut mix, &bounds, &ms, seed, warm)?;

    let mut out = Vec::with_capacity(k_use + 1);
    out.push(r0.x.clone());
    let mut warm_i = warm.to_vec();
    warm_i.push(r0.x);
    for fm in &fants {
        let mut fi = |x: &[f64], _: bool| -> Result<(f64, Vec<f64>)> {
            let (v, g) = posterior_risk_gradient(fm, x, wset, spec, z, RiskGradient::Query)?;
            Ok((v, g.iter().copied().collect()))
        };
        let ri = multistart_minimize(&mut fi, &bounds, &ms, seed, &warm_i)?;
        out.push(ri.x);
    }
    Ok(out)
}

/// Knowledge gradient of the risk objective at a joint candidate.
///
/// With `solve_inner` (or on the first call) the `K + 1` nested
/// minimizations are re-solved at this candidate and cached on the context;
/// otherwise the cached minimizers are reused and only the value and the
/// candidate gradient (inner minimizers held fixed) are computed.
pub fn rho_kg(ctx: &mut AcqContext<'_>, candidate: &[f64], solve_inner: bool) -> Result<AcqValue> {
    let k = ctx.base.k();
    if solve_inner || ctx.inner_solutions.len() != k + 1 {
        let warm = std::mem::take(&mut ctx.inner_solutions);
        ctx.inner_solutions =
            solve_inner_set(ctx.gp, ctx.spec, ctx.base, k, &ctx.inner, &warm, candidate)?;
        ctx.inner_stale_counter = 0;
    } else {
        ctx.inner_stale_counter += 1;
    }
    kg_assemble(ctx.gp, ctx.spec, ctx.base, k, &ctx.inner_solutions, candidate, true)
}

// ---------------------------------------------------------------------------
// Discretized inner problem
// ---------------------------------------------------------------------------

/// One entry of the discrete inner set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApxEntry {
    /// Index into the deduplicated previously evaluated decision points.
    Train(usize),
    /// The candidate's own decision coordinates.
    Candidate,
}

/// Candidate-independent quantities of one discrete inner block `(x_t, W~)`:
/// the current posterior over the block and the triangular solve that turns
/// per-candidate cross-covariances into `O(n L)` updates.
struct BlockCache {
    x: Vec<f64>,
    /// Assembled `L x d` block rows.
    q: DMatrix<f64>,
    /// Current posterior mean, standardized.
    mean_std: DVector<f64>,
    /// Current posterior covariance, standardized.
    cov_std: DMatrix<f64>,
    /// `chol^{-1} k(T, Q)`, `n x L`.
    u: DMatrix<f64>,
}

fn build_block(gp: &GaussianProcess, x: &[f64], wset: &WSet) -> Result<BlockCache> {
    let d = gp.dim();
    let l = wset.len();
    let dw = wset.dim();
    let mut q = DMatrix::zeros(l, d);
    for r in 0..l {
        for (g, xv) in x.iter().enumerate() {
            q[(r, g)] = *xv;
        }
        for g in 0..dw {
            q[(r, x.len() + g)] = wset.points()[(r, g)];
        }
    }
    let kernel = gp.hyperparameters().kernel();
    let kqq = kernel.symmetric(&q);
    let n = gp.len();
    if n == 0 {
        return Ok(BlockCache {
            x: x.to_vec(),
            q,
            mean_std: DVector::zeros(l),
            cov_std: kqq,
            u: DMatrix::zeros(0, l),
        });
    }
    let kqt = kernel.cross(&q, gp.train_inputs());
    let mean_std = &kqt * gp.alpha_vec();
    let mut u = kqt.transpose();
    crate::linalg::solve_lower(gp.chol_factor(), &mut u);
    let cov_std = &kqq - u.transpose() * &u;
    Ok(BlockCache { x: x.to_vec(), q, mean_std, cov_std, u })
}

/// The precomputed discrete inner set: one cached block per distinct
/// previously evaluated decision point.
pub struct ApxBlocks {
    blocks: Vec<BlockCache>,
}

impl ApxBlocks {
    /// Collects the distinct decision points of the model's training data
    /// and caches their block posteriors over `wset`.
    pub fn build(gp: &GaussianProcess, wset: &WSet) -> Result<Self> {
        if gp.is_empty() {
            return Err(Error::invalid(
                "the discretized acquisition needs at least one prior observation",
            ));
        }
        let dx = gp.dim() - wset.dim();
        let inputs = gp.train_inputs();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        for r in 0..inputs.nrows() {
            let x: Vec<f64> = (0..dx).map(|c| inputs[(r, c)]).collect();
            if !xs.contains(&x) {
                xs.push(x);
            }
        }
        let blocks = xs
            .into_iter()
            .map(|x| build_block(gp, &x, wset))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { blocks })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Surrogate adapter exposing one precomputed block posterior so the risk
/// estimators can run on cached quantities.
struct FixedBlock<'a> {
    dim: usize,
    mean: DVector<f64>,
    cov: &'a DMatrix<f64>,
    outcome: OutcomeTransform,
    outputscale: f64,
    noise: f64,
}

impl Surrogate for FixedBlock<'_> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn outcome(&self) -> OutcomeTransform {
        self.outcome
    }

    fn outputscale_raw(&self) -> f64 {
        self.outputscale
    }

    fn noise_variance_raw(&self) -> f64 {
        self.noise
    }

    fn block_posterior(&self, _x: &[f64], _w: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        Ok((self.mean.clone(), self.cov.clone()))
    }

    fn block_posterior_grad(
        &self,
        _x: &[f64],
        _w: &DMatrix<f64>,
        _wrt: Wrt,
    ) -> Result<crate::gp::BlockPosteriorGrads> {
        Err(Error::invalid("a cached block has no gradients"))
    }
}

/// Fantasy risk estimates at one cached block, one value per fantasy draw,
/// written into `out[0..k_use]`.
fn block_fantasy_risks(
    gp: &GaussianProcess,
    spec: RiskSpec,
    base: &BaseSampleSet,
    blk: &BlockCache,
    fm: &FantasyModel<'_>,
    k_use: usize,
    out: &mut [f64],
) -> Result<()> {
    let wset = base.wset();
    let z = base.z_row(0);
    let l = wset.len();
    let kernel = gp.hyperparameters().kernel();
    let cand = fm.candidate();
    let cand_m = DMatrix::from_row_iterator(1, cand.len(), cand.iter().copied());

    // Cross-covariance of the current posterior between block rows and the
    // candidate, standardized: k(Q, c) - U^T vc.
    let vc = fm.vc();
    let n = vc.len();
    let mut s_std = DVector::zeros(l);
    for r in 0..l {
        let mut v = kernel.eval(&blk.q, r, &cand_m, 0);
        for t in 0..n {
            v -= blk.u[(t, r)] * vc[t];
        }
        s_std[r] = v;
    }

    let denom = fm.denom();
    let fcov_std = &blk.cov_std - (&s_std * s_std.transpose()) / denom;
    let out_t = gp.outcome();
    let s = out_t.std;
    let cov_raw = fcov_std.map(|c| c * s * s);
    let mean_raw_base = blk.mean_std.map(|m| out_t.destandardize(m));
    // Per-unit-z0 mean shift in raw units.
    let shift_raw = s_std.map(|v| v * s / denom.sqrt());

    for (i, o) in out.iter_mut().enumerate().take(k_use) {
        let z0i = base.z0()[i];
        let mean_i = &mean_raw_base + &shift_raw * z0i;
        let fixed = FixedBlock {
            dim: gp.dim(),
            mean: mean_i,
            cov: &cov_raw,
            outcome: out_t,
            outputscale: gp.outputscale_raw(),
            noise: gp.noise_variance_raw(),
        };
        let (v, _) = posterior_risk(&fixed, &blk.x, wset, spec, z)?;
        *o = v;
    }
    Ok(())
}

/// Full enumeration of the discrete inner set at `candidate`: returns the
/// `k_use + 1` argmin entries (entry 0 for the fantasy average).
fn apx_enumerate(
    gp: &GaussianProcess,
    spec: RiskSpec,
    base: &BaseSampleSet,
    blocks: &ApxBlocks,
    k_use: usize,
    candidate: &[f64],
) -> Result<Vec<ApxEntry>> {
    check_candidate(gp, candidate)?;
    let fants = fantasies(gp, base, k_use, candidate)?;
    let fm0 = &fants[0];
    let dx = gp.dim() - base.wset().dim();
    let cand_block = build_block(gp, &candidate[..dx], base.wset())?;

    let t_total = blocks.blocks.len() + 1;
    let mut risks = vec![vec![0.0; t_total]; k_use];
    let mut buf = vec![0.0; k_use];
    for (t, blk) in blocks.blocks.iter().chain(std::iter::once(&cand_block)).enumerate() {
        block_fantasy_risks(gp, spec, base, blk, fm0, k_use, &mut buf)?;
        for i in 0..k_use {
            risks[i][t] = buf[i];
        }
    }

    let entry_of = |t: usize| {
        if t + 1 == t_total {
            ApxEntry::Candidate
        } else {
            ApxEntry::Train(t)
        }
    };
    let mut entries = Vec::with_capacity(k_use + 1);
    // Fantasy-average argmin.
    let mut best_t = 0;
    let mut best_v = f64::INFINITY;
    for t in 0..t_total {
        let avg: f64 = (0..k_use).map(|i| risks[i][t]).sum::<f64>() / k_use as f64;
        if avg < best_v {
            best_v = avg;
            best_t = t;
        }
    }
    entries.push(entry_of(best_t));
    // Per-fantasy argmins.
    for ri in &risks {
        let mut bt = 0;
        let mut bv = f64::INFINITY;
        for (t, v) in ri.iter().enumerate() {
            if *v < bv {
                bv = *v;
                bt = t;
            }
        }
        entries.push(entry_of(bt));
    }
    Ok(entries)
}

/// Value/gradient at fixed discrete entries, computed through the fantasy
/// models directly so results agree bit-for-bit with a plain enumeration
/// over `fantasize` + `posterior_risk`.
fn apx_eval_at(
    gp: &GaussianProcess,
    spec: RiskSpec,
    base: &BaseSampleSet,
    blocks: &ApxBlocks,
    k_use: usize,
    entries: &[ApxEntry],
    candidate: &[f64],
    with_grad: bool,
) -> Result<AcqValue> {
    check_candidate(gp, candidate)?;
    if entries.len() != k_use + 1 {
        return Err(Error::invalid(format!(
            "expected {} cached inner entries, found {}",
            k_use + 1,
            entries.len()
        )));
    }
    let fants = fantasies(gp, base, k_use, candidate)?;
    let wset = base.wset();
    let z = base.z_row(0);
    let d = candidate.len();
    let dx = d - wset.dim();
    let kf = k_use as f64;

    let entry_x = |e: ApxEntry| -> Result<&[f64]> {
        match e {
            ApxEntry::Train(t) => blocks
                .blocks
                .get(t)
                .map(|b| b.x.as_slice())
                .ok_or_else(|| Error::invalid(format!("stale inner entry index {t}"))),
            ApxEntry::Candidate => Ok(&candidate[..dx]),
        }
    };

    let mut best_sum = 0.0;
    let mut inner_sum = 0.0;
    let mut gradient = DVector::zeros(d);
    let mut fantasy_inner_values = Vec::with_capacity(k_use);
    for (i, fm) in fants.iter().enumerate() {
        let e0 = entries[0];
        let ei = entries[i + 1];
        if with_grad {
            let eval = |e: ApxEntry| -> Result<(f64, DVector<f64>)> {
                let x = entry_x(e)?;
                let (v, mut g) =
                    posterior_risk_gradient(fm, x, wset, spec, z, RiskGradient::Candidate)?;
                if e == ApxEntry::Candidate {
                    // The entry moves with the candidate's decision part, so
                    // the total derivative adds the query channel.
                    let (_, gq) =
                        posterior_risk_gradient(fm, x, wset, spec, z, RiskGradient::Query)?;
                    for gidx in 0..dx {
                        g[gidx] += gq[gidx];
                    }
                }
                Ok((v, g))
            };
            let (v0, g0) = eval(e0)?;
            let (vi, gi) = if ei == e0 { (v0, g0.clone()) } else { eval(ei)? };
            best_sum += v0;
            inner_sum += vi;
            gradient += (g0 - gi) / kf;
            fantasy_inner_values.push(vi);
        } else {
            let (v0, _) = posterior_risk(fm, entry_x(e0)?, wset, spec, z)?;
            let vi = if ei == e0 {
                v0
            } else {
                posterior_risk(fm, entry_x(ei)?, wset, spec, z)?.0
            };
            best_sum += v0;
            inner_sum += vi;
            fantasy_inner_values.push(vi);
        }
    }
    Ok(AcqValue {
        value: (best_sum - inner_sum) / kf,
        gradient,
        diagnostics: AcqDiagnostics { current_best: best_sum / kf, fantasy_inner_values },
    })
}

/// Discretized knowledge gradient: the inner minimization runs over the
/// previously evaluated decision points plus the candidate's own decision
/// coordinates, enumerated fresh at every call.
pub fn rho_kg_apx(ctx: &AcqContext<'_>, candidate: &[f64]) -> Result<AcqValue> {
    let blocks = ApxBlocks::build(ctx.gp, ctx.base.wset())?;
    let k = ctx.base.k();
    let entries = apx_enumerate(ctx.gp, ctx.spec, ctx.base, &blocks, k, candidate)?;
    apx_eval_at(ctx.gp, ctx.spec, ctx.base, &blocks, k, &entries, candidate, true)
}

// ---------------------------------------------------------------------------
// Two-time-scale objective adapters
// ---------------------------------------------------------------------------

/// Continuous-inner knowledge gradient as a two-time-scale objective: full
/// evaluations use all `K` fantasies, raw-sample scoring a cheaper subset
/// with its own cached minimizers.
pub struct RhoKgObjective<'a> {
    ctx: AcqContext<'a>,
    raw_k: usize,
    raw_solutions: Vec<Vec<f64>>,
    solves: usize,
}

impl<'a> RhoKgObjective<'a> {
    pub fn new(ctx: AcqContext<'a>) -> Self {
        let raw_k = RAW_SCORE_FANTASIES.min(ctx.base.k());
        Self { ctx, raw_k, raw_solutions: Vec::new(), solves: 0 }
    }

    /// The context with its cached inner solutions.
    pub fn context(&self) -> &AcqContext<'a> {
        &self.ctx
    }
}

impl TtsObjective for RhoKgObjective<'_> {
    fn dim(&self) -> usize {
        self.ctx.gp.dim()
    }

    fn eval(&mut self, candidate: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.ctx.inner_solutions.len() != self.ctx.base.k() + 1 {
            self.refresh(candidate)?;
        }
        let k = self.ctx.base.k();
        let v = kg_assemble(
            self.ctx.gp,
            self.ctx.spec,
            self.ctx.base,
            k,
            &self.ctx.inner_solutions,
            candidate,
            true,
        )?;
        self.ctx.inner_stale_counter += 1;
        Ok((v.value, v.gradient.iter().copied().collect()))
    }

    fn refresh(&mut self, candidate: &[f64]) -> Result<()> {
        let k = self.ctx.base.k();
        let warm = std::mem::take(&mut self.ctx.inner_solutions);
        self.ctx.inner_solutions = solve_inner_set(
            self.ctx.gp,
            self.ctx.spec,
            self.ctx.base,
            k,
            &self.ctx.inner,
            &warm,
            candidate,
        )?;
        self.ctx.inner_stale_counter = 0;
        self.solves += k + 1;
        Ok(())
    }

    fn raw_score(&mut self, candidate: &[f64]) -> Result<f64> {
        if self.raw_solutions.len() != self.raw_k + 1 {
            self.refresh_raw(candidate)?;
        }
        let v = kg_assemble(
            self.ctx.gp,
            self.ctx.spec,
            self.ctx.base,
            self.raw_k,
            &self.raw_solutions,
            candidate,
            false,
        )?;
        Ok(v.value)
    }

    fn refresh_raw(&mut self, candidate: &[f64]) -> Result<()> {
        let warm = std::mem::take(&mut self.raw_solutions);
        self.raw_solutions = solve_inner_set(
            self.ctx.gp,
            self.ctx.spec,
            self.ctx.base,
            self.raw_k,
            &self.ctx.inner,
            &warm,
            candidate,
        )?;
        self.solves += self.raw_k + 1;
        Ok(())
    }

    fn inner_solves(&self) -> usize {
        self.solves
    }
}

/// Discretized knowledge gradient as a two-time-scale objective: refreshes
/// enumerate the full discrete set, evaluations between refreshes hold the
/// cached argmin entries fixed.
pub struct RhoKgApxObjective<'a> {
    gp: &'a GaussianProcess,
    spec: RiskSpec,
    base: &'a BaseSampleSet,
    blocks: ApxBlocks,
    entries: Option<Vec<ApxEntry>>,
    raw_k: usize,
    raw_entries: Option<Vec<ApxEntry>>,
    solves: usize,
}

impl<'a> RhoKgApxObjective<'a> {
    pub fn new(gp: &'a GaussianProcess, spec: RiskSpec, base: &'a BaseSampleSet) -> Result<Self> {
        let blocks = ApxBlocks::build(gp, base.wset())?;
        let raw_k = RAW_SCORE_FANTASIES.min(base.k());
        Ok(Self { gp, spec, base, blocks, entries: None, raw_k, raw_entries: None, solves: 0 })
    }
}

impl TtsObjective for RhoKgApxObjective<'_> {
    fn dim(&self) -> usize {
        self.gp.dim()
    }

    fn eval(&mut self, candidate: &[f64]) -> Result<(f64, Vec<f64>)> {
        if self.entries.is_none() {
            self.refresh(candidate)?;
        }
        let entries = self.entries.as_ref().expect("refreshed above").clone();
        let k = self.base.k();
        let v = apx_eval_at(self.gp, self.spec, self.base, &self.blocks, k, &entries, candidate, true)?;
        Ok((v.value, v.gradient.iter().copied().collect()))
    }

    fn refresh(&mut self, candidate: &[f64]) -> Result<()> {
        let k = self.base.k();
        self.entries =
            Some(apx_enumerate(self.gp, self.spec, self.base, &self.blocks, k, candidate)?);
        self.solves += k + 1;
        Ok(())
    }

    fn raw_score(&mut self, candidate: &[f64]) -> Result<f64> {
        if self.raw_entries.is_none() {
            self.refresh_raw(candidate)?;
        }
        let entries = self.raw_entries.as_ref().expect("refreshed above").clone();
        let v = apx_eval_at(
            self.gp,
            self.spec,
            self.base,
            &self.blocks,
            self.raw_k,
            &entries,
            candidate,
            false,
        )?;
        Ok(v.value)
    }

    fn refresh_raw(&mut self, candidate: &[f64]) -> Result<()> {
        self.raw_entries = Some(apx_enumerate(
            self.gp,
            self.spec,
            self.base,
            &self.blocks,
            self.raw_k,
            candidate,
        )?);
        self.solves += self.raw_k + 1;
        Ok(())
    }

    fn inner_solves(&self) -> usize {
        self.solves
    }
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Posterior mean/variance (standardized) with gradients at one decision
/// point of a decision-only model.
fn point_posterior_std(
    gp: &GaussianProcess,
    x: &[f64],
) -> Result<(f64, f64, DVector<f64>, DVector<f64>)> {
    let w = DMatrix::zeros(1, 0);
    let grads = gp.block_posterior_grad(x, &w, Wrt::Query)?;
    let out = gp.outcome();
    let s = out.std;
    let mu = out.standardize(grads.mean[0]);
    let var = grads.cov[(0, 0)] / (s * s);
    let d = x.len();
    let dmu = DVector::from_fn(d, |g, _| grads.dmean[g][0] / s);
    let dvar = DVector::from_fn(d, |g, _| grads.dcov[g][(0, 0)] / (s * s));
    Ok((mu, var, dmu, dvar))
}

/// Expected improvement below the incumbent (standardized units) of a model
/// trained on direct risk observations over the decision space.
pub fn ei(gp: &GaussianProcess, x: &[f64]) -> Result<f64> {
    ei_with_grad(gp, x).map(|(v, _)| v)
}

/// [`ei`] together with its gradient.
pub fn ei_with_grad(gp: &GaussianProcess, x: &[f64]) -> Result<(f64, DVector<f64>)> {
    if gp.is_empty() {
        return Err(Error::invalid("expected improvement needs at least one observation"));
    }
    let incumbent = gp.train_targets_std().min();
    let (mu, var, dmu, dvar) = point_posterior_std(gp, x)?;
    let scale = gp.hyperparameters().outputscale;
    if var <= DEGENERATE_VARIANCE_REL * scale {
        // Zero-variance limit.
        let gap = incumbent - mu;
        return if gap > 0.0 { Ok((gap, -dmu)) } else { Ok((0.0, DVector::zeros(x.len()))) };
    }
    let sd = var.sqrt();
    let u = (incumbent - mu) / sd;
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    let cdf = n.cdf(u);
    let pdf = n.pdf(u);
    let value = sd * (u * cdf + pdf);
    let dsd = dvar / (2.0 * sd);
    let grad = -dmu * cdf + dsd * pdf;
    Ok((value, grad))
}

/// Upper confidence bound `mean + sqrt(beta * variance)` in raw units.
pub fn ucb(gp: &GaussianProcess, x: &[f64], beta: f64) -> Result<f64> {
    ucb_with_grad(gp, x, beta).map(|(v, _)| v)
}

/// [`ucb`] together with its gradient.
pub fn ucb_with_grad(gp: &GaussianProcess, x: &[f64], beta: f64) -> Result<(f64, DVector<f64>)> {
    if !(beta >= 0.0) {
        return Err(Error::invalid("the confidence weight must be nonnegative"));
    }
    let (mu, var, dmu, dvar) = point_posterior_std(gp, x)?;
    let out = gp.outcome();
    let s = out.std;
    let scale = gp.hyperparameters().outputscale;
    let mu_raw = out.destandardize(mu);
    let dmu_raw = dmu * s;
    if beta == 0.0 || var <= DEGENERATE_VARIANCE_REL * scale {
        let width = (beta * var.max(0.0)).sqrt() * s;
        return Ok((mu_raw + width, dmu_raw));
    }
    let width_std = (beta * var).sqrt();
    let value = mu_raw + width_std * s;
    let dwidth = dvar * (beta / (2.0 * width_std)) * s;
    Ok((value, dmu_raw + dwidth))
}

/// Lower confidence bound `mean - sqrt(beta * variance)` in raw units — the
/// optimistic bound when minimizing.
pub fn lcb(gp: &GaussianProcess, x: &[f64], beta: f64) -> Result<f64> {
    lcb_with_grad(gp, x, beta).map(|(v, _)| v)
}

/// [`lcb`] together with its gradient.
pub fn lcb_with_grad(gp: &GaussianProcess, x: &[f64], beta: f64) -> Result<(f64, DVector<f64>)> {
    let (mu, dmu) = ucb_with_grad(gp, x, 0.0)?;
    let (u, du) = ucb_with_grad(gp, x, beta)?;
    Ok((2.0 * mu - u, dmu * 2.0 - du))
}

/// Base samples for [`kg_plain`]: `k` fantasy draws, one empty environment
/// point, and all-zero inner paths so each fantasy risk estimate is exactly
/// the fantasy posterior mean.
pub fn kg_base_samples(k: usize, seed: u64) -> Result<BaseSampleSet> {
    if k == 0 {
        return Err(Error::invalid("base samples need K >= 1"));
    }
    let z0u = sobol_points(1, k, split_seed(seed, 1))?;
    let z0 = DVector::from_fn(k, |i, _| inverse_normal_cdf(z0u[(i, 0)]));
    let zl = vec![DMatrix::zeros(1, 1); k + 1];
    let wset = WSet::uniform(DMatrix::zeros(1, 0), WSetSource::Full)?;
    BaseSampleSet::from_parts(z0, zl, wset, seed)
}

/// Knowledge gradient of the expectation objective on a decision-only model:
/// the risk machinery applied with a single empty environment point, the
/// mean as risk measure, and zero inner paths (see [`kg_base_samples`]).
/// Inner problems are re-solved on every call.
pub fn kg_plain(
    gp: &GaussianProcess,
    x: &[f64],
    base: &BaseSampleSet,
    inner: &InnerSolveConfig,
) -> Result<AcqValue> {
    if base.wset().dim() != 0 {
        return Err(Error::invalid(
            "the expectation knowledge gradient expects an empty environment point",
        ));
    }
    let spec = RiskSpec::cvar(0.0)?;
    let mut ctx = AcqContext::new(gp, spec, base, inner.clone())?;
    rho_kg(&mut ctx, x, true)
}

// ---------------------------------------------------------------------------
// Random strategies
// ---------------------------------------------------------------------------

/// The two random baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomKind {
    /// Uniform joint `(x, w)` draw; the harness observes one function value.
    RhoRandom,
    /// Uniform `x` draw; the harness evaluates the risk over the whole
    /// environment set there.
    PlainRandom,
}

/// Draws a random candidate in raw problem coordinates.
pub fn random_strategy<R: Rng>(
    kind: RandomKind,
    x_bounds: &[(f64, f64)],
    wdomain: &WDomain,
    rng: &mut R,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    if x_bounds.is_empty() || x_bounds.iter().any(|(lo, hi)| !(hi > lo) || !lo.is_finite()) {
        return Err(Error::invalid("decision bounds must be nonempty finite intervals"));
    }
    let x: Vec<f64> = x_bounds.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect();
    match kind {
        RandomKind::PlainRandom => Ok((x, None)),
        RandomKind::RhoRandom => {
            let w = match wdomain {
                WDomain::Finite(set) => {
                    let i = rng.gen_range(0..set.len());
                    (0..set.dim()).map(|c| set.points()[(i, c)]).collect()
                }
                WDomain::Box(bounds) => {
                    bounds.iter().map(|(lo, hi)| rng.gen_range(*lo..*hi)).collect()
                }
            };
            Ok((x, Some(w)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{Hyperparameters, InputTransform};
    use crate::qmc::{make_base_samples, rng_from_seed, WSource};

    fn joint_gp(noise: f64) -> GaussianProcess {
        let inputs = DMatrix::from_row_slice(
            6,
            2,
            &[0.1, 0.2, 0.8, 0.3, 0.4, 0.9, 0.6, 0.6, 0.25, 0.75, 0.9, 0.1],
        );
        let targets = DVector::from_column_slice(&[0.5, -1.2, 0.7, 0.1, -0.4, 1.1]);
        let hyper =
            Hyperparameters::new(DVector::from_column_slice(&[0.4, 0.5]), 1.2, noise).unwrap();
        GaussianProcess::with_hyperparameters(
            inputs,
            &targets,
            hyper,
            InputTransform::identity(2),
            crate::gp::OutcomeTransform::from_data(&targets),
        )
        .unwrap()
    }

    fn toy_wset() -> WSet {
        let pts = DMatrix::from_column_slice(4, 1, &[0.1, 0.4, 0.7, 0.95]);
        WSet::uniform(pts, WSetSource::Full).unwrap()
    }

    fn small_inner() -> InnerSolveConfig {
        InnerSolveConfig {
            restarts: 2,
            raw_samples: 8,
            eta: 1.0,
            lbfgs: LbfgsConfig { max_iters: 25, ..LbfgsConfig::default() },
        }
    }

    fn make_ctx<'a>(
        gp: &'a GaussianProcess,
        base: &'a BaseSampleSet,
        alpha: f64,
    ) -> AcqContext<'a> {
        AcqContext::new(gp, RiskSpec::cvar(alpha).unwrap(), base, small_inner()).unwrap()
    }

    #[test]
    fn duplicate_candidate_gives_zero_value_and_gradient() {
        let gp = joint_gp(0.0);
        let wset = toy_wset();
        let base = make_base_samples(3, 4, WSource::Full(&wset), 11).unwrap();
        let mut ctx = make_ctx(&gp, &base, 0.7);
        let v = rho_kg(&mut ctx, &[0.4, 0.9], true).unwrap();
        assert!(v.value.abs() <= 1e-6, "value {}", v.value);
        assert!(v.gradient.norm() <= 1e-4, "gradient norm {}", v.gradient.norm());
    }

    #[test]
    fn values_are_nonnegative_at_random_candidates() {
        let gp = joint_gp(0.05);
        let wset = toy_wset();
        let base = make_base_samples(3, 4, WSource::Full(&wset), 5).unwrap();
        let mut rng = rng_from_seed(2024);
        for _ in 0..10 {
            let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let mut ctx = make_ctx(&gp, &base, 0.7);
            let v = rho_kg(&mut ctx, &c, true).unwrap();
            assert!(v.value >= -1e-9, "negative value {} at {c:?}", v.value);
        }
    }

    #[test]
    fn evaluations_are_deterministic() {
        let gp = joint_gp(0.02);
        let wset = toy_wset();
        let base = make_base_samples(2, 3, WSource::Full(&wset), 7).unwrap();
        let c = [0.33, 0.58];
        let mut ctx1 = make_ctx(&gp, &base, 0.7);
        let v1 = rho_kg(&mut ctx1, &c, true).unwrap();
        let mut ctx2 = make_ctx(&gp, &base, 0.7);
        let v2 = rho_kg(&mut ctx2, &c, true).unwrap();
        assert_eq!(v1.value.to_bits(), v2.value.to_bits());
        assert_eq!(ctx1.inner_solutions, ctx2.inner_solutions);
        for (a, b) in v1.gradient.iter().zip(v2.gradient.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn envelope_gradient_matches_finite_differences() {
        let gp = joint_gp(0.05);
        let wset = toy_wset();
        let base = make_base_samples(2, 3, WSource::Full(&wset), 13).unwrap();
        let c = [0.35, 0.55];
        let spec = RiskSpec::cvar(0.7).unwrap();

        // The gradient holds the cached inner points fixed, so the finite
        // differences must too. Generic interior points stay clear of the
        // scenario-crossing kinks that sit at actual inner minimizers of a
        // few-sample tail estimate (where the value is only subdifferentiable
        // and a symmetric difference straddles the kink).
        let fixed: Vec<Vec<f64>> = vec![vec![0.31], vec![0.57], vec![0.83]];
        let v = kg_assemble(&gp, spec, &base, 2, &fixed, &c, true).unwrap();
        let h = 1e-5;
        for g in 0..2 {
            let value_at = |cv: &[f64]| -> f64 {
                kg_assemble(&gp, spec, &base, 2, &fixed, cv, false).unwrap().value
            };
            let mut cp = c;
            cp[g] += h;
            let mut cm = c;
            cm[g] -= h;
            let fd = (value_at(&cp) - value_at(&cm)) / (2.0 * h);
            let an = v.gradient[g];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                (an - fd).abs() / denom < 1e-3,
                "coordinate {g}: analytic {an} vs fd {fd}"
            );
        }
    }

    /// Plain enumeration over the public fantasy/risk API, for comparison
    /// with the cached discrete path.
    fn apx_by_enumeration(ctx: &AcqContext<'_>, candidate: &[f64]) -> f64 {
        let k = ctx.base.k();
        let z0 = ctx.base.z0().rows(0, k).into_owned();
        let fants = fantasize(ctx.gp, candidate, &z0).unwrap();
        let wset = ctx.base.wset();
        let z = ctx.base.z_row(0);
        let dx = ctx.dx();
        let inputs = ctx.gp.train_inputs();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        for r in 0..inputs.nrows() {
            let x: Vec<f64> = (0..dx).map(|c| inputs[(r, c)]).collect();
            if !xs.contains(&x) {
                xs.push(x);
            }
        }
        xs.push(candidate[..dx].to_vec());
        let risks: Vec<Vec<f64>> = fants
            .iter()
            .map(|fm| {
                xs.iter()
                    .map(|x| posterior_risk(fm, x, wset, ctx.spec, z).unwrap().0)
                    .collect()
            })
            .collect();
        let kf = k as f64;
        let best = (0..xs.len())
            .map(|t| risks.iter().map(|r| r[t]).sum::<f64>() / kf)
            .fold(f64::INFINITY, f64::min);
        let inner =
            risks.iter().map(|r| r.iter().copied().fold(f64::INFINITY, f64::min)).sum::<f64>() / kf;
        best - inner
    }

    #[test]
    fn discretized_value_matches_enumeration() {
        let gp = joint_gp(0.05);
        let wset = toy_wset();
        let base = make_base_samples(3, 4, WSource::Full(&wset), 21).unwrap();
        let mut rng = rng_from_seed(99);
        for _ in 0..5 {
            let c = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let ctx = make_ctx(&gp, &base, 0.7);
            let v = rho_kg_apx(&ctx, &c).unwrap();
            let oracle = apx_by_enumeration(&ctx, &c);
            assert!(
                (v.value - oracle).abs() <= 1e-12,
                "cached {} vs enumerated {oracle}",
                v.value
            );
            assert!(v.value >= -1e-9);
        }
    }

    #[test]
    fn discretized_duplicate_candidate_is_zero() {
        let gp = joint_gp(0.0);
        let wset = toy_wset();
        let base = make_base_samples(3, 4, WSource::Full(&wset), 31).unwrap();
        let ctx = make_ctx(&gp, &base, 0.7);
        let v = rho_kg_apx(&ctx, &[0.6, 0.6]).unwrap();
        assert!(v.value.abs() <= 1e-6, "value {}", v.value);
        assert!(v.gradient.norm() <= 1e-4, "gradient norm {}", v.gradient.norm());
    }

    #[test]
    fn discretized_gradient_matches_finite_differences() {
        let gp = joint_gp(0.05);
        let wset = toy_wset();
        let base = make_base_samples(2, 3, WSource::Full(&wset), 41).unwrap();
        let ctx = make_ctx(&gp, &base, 0.7);
        let c = [0.37, 0.52];
        let blocks = ApxBlocks::build(&gp, base.wset()).unwrap();
        let entries = apx_enumerate(&gp, ctx.spec, &base, &blocks, 2, &c).unwrap();
        let v = apx_eval_at(&gp, ctx.spec, &base, &blocks, 2, &entries, &c, true).unwrap();
        let h = 1e-6;
        for g in 0..2 {
            let mut cp = c;
            cp[g] += h;
            let mut cm = c;
            cm[g] -= h;
            let vp = apx_eval_at(&gp, ctx.spec, &base, &blocks, 2, &entries, &cp, false).unwrap();
            let vm = apx_eval_at(&gp, ctx.spec, &base, &blocks, 2, &entries, &cm, false).unwrap();
            let fd = (vp.value - vm.value) / (2.0 * h);
            let an = v.gradient[g];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                (an - fd).abs() / denom < 1e-2,
                "coordinate {g}: analytic {an} vs fd {fd}"
            );
        }
    }

    fn x_only_gp() -> GaussianProcess {
        let inputs = DMatrix::from_row_slice(4, 1, &[0.1, 0.35, 0.6, 0.9]);
        let targets = DVector::from_column_slice(&[0.8, -0.2, 0.4, 1.5]);
        let hyper = Hyperparameters::new(DVector::from_element(1, 0.3), 1.0, 0.0).unwrap();
        GaussianProcess::with_hyperparameters(
            inputs,
            &targets,
            hyper,
            InputTransform::identity(1),
            crate::gp::OutcomeTransform::from_data(&targets),
        )
        .unwrap()
    }

    #[test]
    fn ei_is_zero_at_the_noise_free_incumbent() {
        let gp = x_only_gp();
        let v = ei(&gp, &[0.35]).unwrap();
        assert!(v.abs() < 1e-9, "EI at incumbent {v}");
    }

    #[test]
    fn ei_is_positive_away_from_data_and_gradient_matches_fd() {
        let gp = x_only_gp();
        let x = [0.48];
        let (v, g) = ei_with_grad(&gp, &x).unwrap();
        assert!(v > 0.0);
        let h = 1e-6;
        let vp = ei(&gp, &[x[0] + h]).unwrap();
        let vm = ei(&gp, &[x[0] - h]).unwrap();
        let fd = (vp - vm) / (2.0 * h);
        assert!((g[0] - fd).abs() / fd.abs().max(1e-8) < 1e-4, "analytic {} vs fd {fd}", g[0]);
    }

    #[test]
    fn ucb_with_zero_beta_is_the_posterior_mean() {
        let gp = x_only_gp();
        let x = [0.5];
        let v = ucb(&gp, &x, 0.0).unwrap();
        let w = DMatrix::zeros(1, 0);
        let (mean, _) = gp.block_posterior(&x, &w).unwrap();
        assert!((v - mean[0]).abs() < 1e-12);
        let v2 = ucb(&gp, &x, 0.2).unwrap();
        assert!(v2 > v);
        let l = lcb(&gp, &x, 0.2).unwrap();
        assert!((l - (2.0 * v - v2)).abs() < 1e-12);
        assert!(l < v);
    }

    #[test]
    fn plain_kg_is_nonnegative_and_zero_on_duplicates() {
        let gp = x_only_gp();
        let base = kg_base_samples(4, 17).unwrap();
        let inner = small_inner();
        let v = kg_plain(&gp, &[0.5], &base, &inner).unwrap();
        assert!(v.value >= -1e-9, "value {}", v.value);
        let dup = kg_plain(&gp, &[0.35], &base, &inner).unwrap();
        assert!(dup.value.abs() <= 1e-6, "duplicate value {}", dup.value);
    }

    #[test]
    fn random_draws_respect_bounds_and_seed() {
        let xb = [(0.0, 1.0), (2.0, 3.0)];
        let wdom = WDomain::Finite(toy_wset());
        let mut rng = rng_from_seed(5);
        let (x, w) = random_strategy(RandomKind::RhoRandom, &xb, &wdom, &mut rng).unwrap();
        assert!(x[0] >= 0.0 && x[0] < 1.0 && x[1] >= 2.0 && x[1] < 3.0);
        let w = w.unwrap();
        assert!(toy_wset().points().column(0).iter().any(|p| *p == w[0]));

        let mut rng2 = rng_from_seed(5);
        let (x2, w2) = random_strategy(RandomKind::RhoRandom, &xb, &wdom, &mut rng2).unwrap();
        assert_eq!(x, x2);
        assert_eq!(w, w2.unwrap());

        let (_, none) = random_strategy(RandomKind::PlainRandom, &xb, &wdom, &mut rng).unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn random_draw_means_are_near_the_box_center() {
        let xb = [(0.0, 1.0)];
        let wdom = WDomain::Box(vec![(0.0, 2.0)]);
        let mut rng = rng_from_seed(77);
        let (mut sx, mut sw) = (0.0, 0.0);
        let n = 10_000;
        for _ in 0..n {
            let (x, w) = random_strategy(RandomKind::RhoRandom, &xb, &wdom, &mut rng).unwrap();
            sx += x[0];
            sw += w.unwrap()[0];
        }
        assert!((sx / n as f64 - 0.5).abs() < 0.02);
        assert!((sw / n as f64 - 1.0).abs() < 0.02);
    }
}
