//! Experiment harness: runs one optimization loop end to end.
//!
//! A run is specified by an [`ExperimentConfig`] (problem, algorithm, budget,
//! seed, and tuning knobs, loadable from TOML through [`ConfigFile`]). The
//! harness draws an initial design, then alternates candidate selection,
//! objective observation, model refitting, and recommendation until the
//! evaluation budget is spent. Everything is driven by named substreams of
//! the run seed, so a (config, seed) pair reproduces the same run except for
//! wall-clock fields.
//!
//! Two observation styles exist, chosen by the algorithm:
//!
//! * joint style (`rho_kg`, `rho_kg_apx`, `rho_random`): the model is fit on
//!   `(x, w)` inputs and each iteration observes a single function value,
//!   costing 1 evaluation;
//! * risk-direct style (`ei`, `ucb`, `kg_plain`, `random`): the model is fit
//!   on `x` inputs against empirical-risk observations, and each iteration
//!   evaluates the function over a whole environment round, costing `L`
//!   evaluations.
//!
//! Results and observation histories are persisted as CSV with a
//! `# generated_at_unix=...` comment line; [`read_history`] and
//! [`read_results`] parse them back, and [`suggest`]/[`recommend_from`]
//! replay a run from its history without evaluating the objective.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rand::distributions::Distribution;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use statrs::distribution::Normal;

use crate::acquisition::{
    ei_with_grad, kg_base_samples, kg_plain, lcb_with_grad, random_strategy, AcqContext,
    InnerSolveConfig, RandomKind, RhoKgApxObjective, RhoKgObjective,
};
use crate::error::{Error, Result};
use crate::gp::{
    fit_map, FitConfig, GaussianProcess, Hyperparameters, InputTransform, OutcomeTransform,
    Surrogate, Wrt,
};
use crate::optimize::{
    multistart_maximize, multistart_minimize, tts_optimize, MultistartConfig, OptimizerConfig,
    TtsConfig,
};
use crate::problems::{
    brute_force_risk, oracle_wset, ObjectiveKind, ProblemSpec, SimulatorConfig, SimulatorHandle,
    WDomain,
};
use crate::qmc::{
    make_base_samples, realize_wset, rng_from_seed, split_seed, BaseSampleSet, WSource,
};
use crate::risk::{empirical_risk, posterior_risk_gradient, RiskGradient, RiskMeasure, RiskSpec, WSet};

// Named substreams of the run seed. Every random decision in a run draws
// from `split_seed(split_seed(seed, STREAM), index)` for one of these
// streams, so runs replay exactly and paired algorithms share their common
// draws (initial design, environment rounds, observation noise).
const STREAM_INIT: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_ACQ_BASE: u64 = 3;
const STREAM_RECOMMEND: u64 = 4;
const STREAM_EVAL_WSET: u64 = 5;
const STREAM_FIT: u64 = 6;
const STREAM_ACQ_OPT: u64 = 7;
const STREAM_RANDOM: u64 = 8;

// ---------------------------------------------------------------------------
// Algorithms
// ---------------------------------------------------------------------------

/// Candidate-selection strategy for one experiment run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Risk knowledge gradient with continuous inner optimization.
    RhoKg,
    /// Risk knowledge gradient with the inner problem restricted to the
    /// observed decision points plus the candidate.
    RhoKgApx,
    /// Expected improvement on direct risk observations.
    Ei,
    /// Lower confidence bound on direct risk observations.
    Ucb,
    /// Knowledge gradient of the posterior mean on direct risk observations.
    KgPlain,
    /// Uniform random decision, risk observed over a full environment round.
    Random,
    /// Uniform random joint `(x, w)` draw, single observation.
    RhoRandom,
}

/// How an algorithm models the objective and pays for observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelStyle {
    /// Model over `(x, w)`; one function value per iteration.
    Joint,
    /// Model over `x` against empirical-risk observations; one environment
    /// round per iteration.
    RiskDirect,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::RhoKg,
        Algorithm::RhoKgApx,
        Algorithm::Ei,
        Algorithm::Ucb,
        Algorithm::KgPlain,
        Algorithm::Random,
        Algorithm::RhoRandom,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == name)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|a| a.as_str()).collect();
                Error::Config(format!(
                    "unknown algorithm '{name}' (known: {})",
                    known.join(", ")
                ))
            })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::RhoKg => "rho_kg",
            Algorithm::RhoKgApx => "rho_kg_apx",
            Algorithm::Ei => "ei",
            Algorithm::Ucb => "ucb",
            Algorithm::KgPlain => "kg_plain",
            Algorithm::Random => "random",
            Algorithm::RhoRandom => "rho_random",
        }
    }

    pub fn style(self) -> ModelStyle {
        match self {
            Algorithm::RhoKg | Algorithm::RhoKgApx | Algorithm::RhoRandom => ModelStyle::Joint,
            Algorithm::Ei | Algorithm::Ucb | Algorithm::KgPlain | Algorithm::Random => {
                ModelStyle::RiskDirect
            }
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Fully resolved description of one experiment run.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub algorithm: Algorithm,
    /// Total number of objective evaluations, including the initial design.
    pub budget: usize,
    pub seed: u64,
    /// Fantasy count K of the knowledge-gradient estimators.
    pub fantasies: usize,
    /// Sample-path count M of the posterior risk estimator.
    pub sample_paths: usize,
    /// Environment subsample size for acquisition inner computations;
    /// `None` falls back to the problem default.
    pub inner_l: Option<usize>,
    /// Environment round size for risk-direct evaluations; `None` falls back
    /// to the problem default (the full support for finite distributions).
    pub eval_l: Option<usize>,
    pub optimizer: OptimizerConfig,
    /// Width multiplier of the confidence-bound baseline.
    pub ucb_beta: f64,
    /// Multistart restarts of each model refit.
    pub fit_restarts: usize,
    /// Iteration cap of each refit restart.
    pub fit_iters: usize,
    /// External objective process; replaces the built-in objective when set.
    pub simulator: Option<SimulatorConfig>,
    /// Result CSV path; the observation history lands next to it.
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, algorithm: Algorithm, budget: usize, seed: u64) -> Self {
        let (dx, dw) = (problem.dx(), problem.dw());
        let optimizer = match algorithm.style() {
            ModelStyle::Joint => OptimizerConfig::for_dims(dx, dw),
            ModelStyle::RiskDirect => OptimizerConfig::for_dims(dx, 0),
        };
        Self {
            problem,
            algorithm,
            budget,
            seed,
            fantasies: 10,
            sample_paths: 10,
            inner_l: None,
            eval_l: None,
            optimizer,
            ucb_beta: 0.2,
            fit_restarts: 3,
            fit_iters: 50,
            simulator: None,
            output: None,
        }
    }

    /// Stable identifier used in result files: `problem-algorithm-seedN`.
    pub fn run_id(&self) -> String {
        format!("{}-{}-seed{}", self.problem.name, self.algorithm, self.seed)
    }

    /// Evaluations consumed by one risk-direct environment round.
    pub fn eval_round_cost(&self) -> Result<usize> {
        let l = self.eval_l.or(self.problem.eval_l);
        match &self.problem.w_domain {
            WDomain::Finite(set) => Ok(l.map_or(set.len(), |l| l.min(set.len()))),
            WDomain::Box(_) => l.ok_or_else(|| {
                Error::Config("a continuous environment domain needs an evaluation round size".into())
            }),
        }
    }

    /// Evaluations consumed by the initial design (both styles draw the
    /// same total: `2 dx + 2` decision points times the round cost).
    pub fn init_evals(&self) -> Result<usize> {
        Ok((2 * self.problem.dx() + 2) * self.eval_round_cost()?)
    }

    /// Evaluations consumed by one iteration after the initial design.
    pub fn step_cost(&self) -> Result<usize> {
        match self.algorithm.style() {
            ModelStyle::Joint => Ok(1),
            ModelStyle::RiskDirect => self.eval_round_cost(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fantasies == 0 || self.sample_paths == 0 {
            return Err(Error::Config("fantasies and sample paths must be at least 1".into()));
        }
        if !(self.ucb_beta.is_finite() && self.ucb_beta >= 0.0) {
            return Err(Error::Config(format!(
                "confidence-bound width must be nonnegative, got {}",
                self.ucb_beta
            )));
        }
        if self.fit_restarts == 0 || self.fit_iters == 0 {
            return Err(Error::Config("model fitting needs at least 1 restart and 1 iteration".into()));
        }
        if matches!(self.inner_l, Some(0)) || matches!(self.eval_l, Some(0)) {
            return Err(Error::Config("environment subsample sizes must be at least 1".into()));
        }
        if matches!(self.problem.objective, ObjectiveKind::External) && self.simulator.is_none() {
            return Err(Error::Config(
                "an external-objective problem needs a simulator command".into(),
            ));
        }
        self.optimizer.validate()?;
        let init = self.init_evals()?;
        if self.budget < init {
            return Err(Error::Config(format!(
                "budget {} cannot cover the initial design ({init} evaluations)",
                self.budget
            )));
        }
        if matches!(&self.problem.w_domain, WDomain::Box(_))
            && self.inner_l.or(self.problem.inner_l).is_none()
        {
            return Err(Error::Config(
                "a continuous environment domain needs an acquisition subsample size".into(),
            ));
        }
        Ok(())
    }
}

/// TOML experiment file. All keys are optional so that command-line
/// overrides can fill the gaps; [`ConfigFile::resolve`] checks that the
/// merged result is complete.
///
/// ```toml
/// [problem]
/// name = "branin_williams"
/// risk = "var"
/// alpha = 0.7
///
/// algorithm = "rho_kg_apx"
/// budget = 240
/// seed = 3
/// output = "results/bw-var-seed3.csv"
///
/// [acq]
/// K = 10
/// M = 10
///
/// [opt]
/// T = 10
/// restarts = 40
/// raw_samples = 2000
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<ProblemTable>,
    pub algorithm: Option<String>,
    pub budget: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub acq: Option<AcqTable>,
    pub opt: Option<OptTable>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemTable {
    pub name: Option<String>,
    pub alpha: Option<f64>,
    /// `"var"` or `"cvar"`.
    pub risk: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcqTable {
    #[serde(rename = "K")]
    pub fantasies: Option<usize>,
    #[serde(rename = "M")]
    pub sample_paths: Option<usize>,
    #[serde(rename = "L")]
    pub inner_l: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptTable {
    /// Inner re-solve period of the two-time-scale outer optimizer.
    #[serde(rename = "T")]
    pub period: Option<usize>,
    pub restarts: Option<usize>,
    pub raw_samples: Option<usize>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Field-wise merge where `overrides` wins whenever it sets a value.
    pub fn merge(mut self, overrides: &ConfigFile) -> ConfigFile {
        if let Some(p) = &overrides.problem {
            let base = self.problem.get_or_insert_with(ProblemTable::default);
            if p.name.is_some() {
                base.name = p.name.clone();
            }
            if p.alpha.is_some() {
                base.alpha = p.alpha;
            }
            if p.risk.is_some() {
                base.risk = p.risk.clone();
            }
        }
        if overrides.algorithm.is_some() {
            self.algorithm = overrides.algorithm.clone();
        }
        if overrides.budget.is_some() {
            self.budget = overrides.budget;
        }
        if overrides.seed.is_some() {
            self.seed = overrides.seed;
        }
        if overrides.output.is_some() {
            self.output = overrides.output.clone();
        }
        if let Some(a) = &overrides.acq {
            let base = self.acq.get_or_insert_with(AcqTable::default);
            if a.fantasies.is_some() {
                base.fantasies = a.fantasies;
            }
            if a.sample_paths.is_some() {
                base.sample_paths = a.sample_paths;
            }
            if a.inner_l.is_some() {
                base.inner_l = a.inner_l;
            }
        }
        if let Some(o) = &overrides.opt {
            let base = self.opt.get_or_insert_with(OptTable::default);
            if o.period.is_some() {
                base.period = o.period;
            }
            if o.restarts.is_some() {
                base.restarts = o.restarts;
            }
            if o.raw_samples.is_some() {
                base.raw_samples = o.raw_samples;
            }
        }
        self
    }

    /// Builds the full experiment configuration, applying defaults and
    /// validating the result.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let ptable = self
            .problem
            .as_ref()
            .ok_or_else(|| Error::Config("config needs a problem name".into()))?;
        let name = ptable
            .name
            .as_deref()
            .ok_or_else(|| Error::Config("config needs a problem name".into()))?;
        let problem = resolve_problem(name, ptable.alpha, ptable.risk.as_deref())?;

        let algorithm = Algorithm::parse(
            self.algorithm
                .as_deref()
                .ok_or_else(|| Error::Config("config needs an algorithm".into()))?,
        )?;
        let budget = self
            .budget
            .ok_or_else(|| Error::Config("config needs an evaluation budget".into()))?;
        let seed = self.seed.unwrap_or(0);

        let mut config = ExperimentConfig::new(problem, algorithm, budget, seed);
        if let Some(acq) = &self.acq {
            if let Some(k) = acq.fantasies {
                config.fantasies = k;
            }
            if let Some(m) = acq.sample_paths {
                config.sample_paths = m;
            }
            if acq.inner_l.is_some() {
                config.inner_l = acq.inner_l;
            }
        }
        if let Some(opt) = &self.opt {
            if let Some(t) = opt.period {
                config.optimizer.tts_period = t;
            }
            if let Some(r) = opt.restarts {
                config.optimizer.restarts = r;
            }
            if let Some(r) = opt.raw_samples {
                config.optimizer.raw_samples = r;
            }
        }
        config.output = self.output.as_ref().map(PathBuf::from);
        config.validate()?;
        Ok(config)
    }
}

/// Looks up a problem by name, optionally overriding its risk level and
/// measure (`"var"` or `"cvar"`).
pub fn resolve_problem(name: &str, alpha: Option<f64>, risk: Option<&str>) -> Result<ProblemSpec> {
    let defaults = ProblemSpec::by_name(name, None)?;
    let measure = match risk {
        None => defaults.risk.measure,
        Some("var") => RiskMeasure::Var,
        Some("cvar") => RiskMeasure::Cvar,
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown risk measure '{other}' (known: var, cvar)"
            )))
        }
    };
    let alpha = alpha.unwrap_or(defaults.risk.alpha);
    let spec = match measure {
        RiskMeasure::Var => RiskSpec::var(alpha)?,
        RiskMeasure::Cvar => RiskSpec::cvar(alpha)?,
    };
    ProblemSpec::by_name(name, Some(spec))
}

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

/// One objective observation. Joint-style rows carry the environment point
/// and cost 1; risk-direct rows aggregate a whole environment round.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// 0 for the initial design, then the 1-based iteration index.
    pub iteration: usize,
    /// Decision point in raw coordinates.
    pub x: Vec<f64>,
    /// Environment point in raw coordinates (joint style only).
    pub w: Option<Vec<f64>>,
    /// Observed value: a noisy function value (joint) or an empirical risk
    /// over one environment round (risk-direct).
    pub y: f64,
    /// Objective evaluations this observation consumed.
    pub eval_cost: usize,
}

/// The decision the optimizer would hand over if stopped at this point.
#[derive(Debug, Clone)]
pub struct Recommendation {
    pub iteration: usize,
    pub evals_used: usize,
    /// Recommended decision in raw coordinates.
    pub x: Vec<f64>,
    /// Model-based risk estimate at the recommendation.
    pub posterior_risk_estimate: f64,
    /// Ground-truth risk on the frozen oracle grid (built-in problems only).
    pub true_risk: Option<f64>,
    /// `true_risk` minus the recorded optimum, when both are known.
    pub gap: Option<f64>,
    /// Wall-clock seconds since the run started.
    pub wall_time_s: f64,
}

/// Next candidate proposed by [`suggest`].
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    /// Decision point in raw coordinates.
    pub x: Vec<f64>,
    /// Environment point in raw coordinates (joint style only).
    pub w: Option<Vec<f64>>,
    /// True when the acquisition failed and a random draw was substituted.
    pub fallback: bool,
}

enum Evaluator {
    Builtin,
    Simulator(SimulatorHandle),
}

/// Per-round observation randomness: a noise stream for built-in objectives
/// and a seed sequence for external simulators.
struct RoundNoise {
    rng: ChaCha8Rng,
    base: u64,
    next: u64,
}

impl RoundNoise {
    fn new(seed: u64) -> Self {
        Self { rng: rng_from_seed(seed), base: seed, next: 0 }
    }

    fn normal(&mut self) -> f64 {
        Normal::new(0.0, 1.0).expect("unit normal").sample(&mut self.rng)
    }

    fn sim_seed(&mut self) -> u64 {
        let s = split_seed(self.base, self.next);
        self.next += 1;
        s
    }
}

// ---------------------------------------------------------------------------
// Experiment state
// ---------------------------------------------------------------------------

/// Live state of one run: the model, the observation history, and the
/// recommendation trace.
pub struct ExperimentState {
    pub config: ExperimentConfig,
    pub gp: GaussianProcess,
    pub history: Vec<Observation>,
    pub recommendations: Vec<Recommendation>,
    pub evals_used: usize,
    /// Iterations completed after the initial design.
    pub iteration: usize,
    /// Iterations where the acquisition failed and fell back to random.
    pub fallbacks: usize,
    eval_rounds: usize,
    /// Frozen paths and environment set for recommendation risk estimates
    /// (joint style only).
    rec_base: Option<BaseSampleSet>,
    /// Frozen ground-truth environment grid (built-in problems only).
    oracle: Option<WSet>,
    /// Finite environment support mapped to the unit cube, for acquisition.
    unit_wfinite: Option<WSet>,
    unit_wbox: Vec<(f64, f64)>,
    warm_hyper: Option<Hyperparameters>,
    last_rec_unit: Option<Vec<f64>>,
    evaluator: Evaluator,
    started: Instant,
}

/// Draws the initial design, fits the first model, and records the first
/// recommendation. Consumes `(2 dx + 2) * round_cost` evaluations.
pub fn initialize(config: ExperimentConfig) -> Result<ExperimentState> {
    let mut state = ExperimentState::new(config, true)?;
    state.run_init_design()?;
    state.refit(0)?;
    state.build_rec_base()?;
    state.push_recommendation()?;
    Ok(state)
}

/// Runs a full experiment and writes result files when an output path is
/// configured.
pub fn run(config: ExperimentConfig) -> Result<ExperimentState> {
    let output = config.output.clone();
    let mut state = initialize(config)?;
    let cost = state.config.step_cost()?;
    while state.config.budget - state.evals_used >= cost {
        state.step()?;
    }
    if let Some(path) = output {
        write_result_csv(&state, &path)?;
        write_history_csv(&state, &history_path(&path))?;
    }
    Ok(state)
}

impl ExperimentState {
    fn new(config: ExperimentConfig, spawn_simulator: bool) -> Result<Self> {
        config.validate()?;
        let evaluator = match (&config.simulator, spawn_simulator) {
            (Some(sim), true) => Evaluator::Simulator(SimulatorHandle::spawn(sim)?),
            _ => Evaluator::Builtin,
        };
        let oracle = match config.problem.objective {
            ObjectiveKind::External => None,
            _ => Some(oracle_wset(&config.problem)?),
        };
        let style = config.algorithm.style();
        let dim = match style {
            ModelStyle::Joint => config.problem.dx() + config.problem.dw(),
            ModelStyle::RiskDirect => config.problem.dx(),
        };
        let hyper = Hyperparameters::new(DVector::from_element(dim, 0.3), 1.0, 1e-4)?;
        let gp = GaussianProcess::prior(
            hyper,
            InputTransform::identity(dim),
            OutcomeTransform::identity(),
        )?;
        let unit_wfinite = match &config.problem.w_domain {
            WDomain::Finite(set) => {
                Some(unit_finite_wset(set, &config.problem.w_domain.bounds())?)
            }
            WDomain::Box(_) => None,
        };
        let unit_wbox = vec![(0.0, 1.0); config.problem.dw()];
        Ok(Self {
            config,
            gp,
            history: Vec::new(),
            recommendations: Vec::new(),
            evals_used: 0,
            iteration: 0,
            fallbacks: 0,
            eval_rounds: 0,
            rec_base: None,
            oracle,
            unit_wfinite,
            unit_wbox,
            warm_hyper: None,
            last_rec_unit: None,
            evaluator,
            started: Instant::now(),
        })
    }

    fn stream_seed(&self, stream: u64, index: usize) -> u64 {
        split_seed(split_seed(self.config.seed, stream), index as u64)
    }

    fn style(&self) -> ModelStyle {
        self.config.algorithm.style()
    }

    /// Environment evaluations left in the budget.
    pub fn remaining_budget(&self) -> usize {
        self.config.budget.saturating_sub(self.evals_used)
    }

    /// Latest recommendation.
    pub fn recommendation(&self) -> &Recommendation {
        self.recommendations.last().expect("state always holds a recommendation")
    }

    // -- observation ------------------------------------------------------

    fn observe_value(
        &mut self,
        x_raw: &[f64],
        w_raw: &[f64],
        noise: &mut RoundNoise,
    ) -> Result<f64> {
        match &mut self.evaluator {
            Evaluator::Builtin => {
                let f = self.config.problem.evaluate_noiseless(x_raw, w_raw)?;
                let sd = self.config.problem.noise_std;
                Ok(if sd > 0.0 { f + sd * noise.normal() } else { f })
            }
            Evaluator::Simulator(handle) => {
                let seed = noise.sim_seed();
                handle.query(x_raw, w_raw, seed)
            }
        }
    }

    fn observe_risk(&mut self, x_raw: &[f64], wt: &WSet, noise: &mut RoundNoise) -> Result<f64> {
        let mut samples = Vec::with_capacity(wt.len());
        for r in 0..wt.len() {
            let w: Vec<f64> = wt.points().row(r).iter().copied().collect();
            samples.push(self.observe_value(x_raw, &w, noise)?);
        }
        let weights: Vec<f64> = wt.weights().iter().copied().collect();
        Ok(empirical_risk(&samples, &weights, self.config.problem.risk)?.value)
    }

    /// Draws the next evaluation environment round in raw coordinates.
    fn next_eval_wset(&mut self) -> Result<WSet> {
        let seed = self.stream_seed(STREAM_EVAL_WSET, self.eval_rounds);
        self.eval_rounds += 1;
        let l = self.config.eval_l.or(self.config.problem.eval_l);
        match &self.config.problem.w_domain {
            WDomain::Finite(set) => match l {
                Some(l) if l < set.len() => realize_wset(WSource::SubsampleFinite { set, l }, seed),
                _ => Ok(set.clone()),
            },
            WDomain::Box(bounds) => {
                let l = l.ok_or_else(|| {
                    Error::Config(
                        "a continuous environment domain needs an evaluation round size".into(),
                    )
                })?;
                realize_wset(WSource::SubsampleBox { bounds, l }, seed)
            }
        }
    }

    fn run_init_design(&mut self) -> Result<()> {
        let n0 = 2 * self.config.problem.dx() + 2;
        let mut init_rng = rng_from_seed(split_seed(self.config.seed, STREAM_INIT));
        let mut noise = RoundNoise::new(self.stream_seed(STREAM_NOISE, 0));
        let x_bounds = self.config.problem.x_bounds.clone();
        let w_domain = self.config.problem.w_domain.clone();
        match self.style() {
            ModelStyle::RiskDirect => {
                for _ in 0..n0 {
                    let (x, _) =
                        random_strategy(RandomKind::PlainRandom, &x_bounds, &w_domain, &mut init_rng)?;
                    let wt = self.next_eval_wset()?;
                    let y = self.observe_risk(&x, &wt, &mut noise)?;
                    let cost = wt.len();
                    self.history.push(Observation { iteration: 0, x, w: None, y, eval_cost: cost });
                    self.evals_used += cost;
                }
            }
            ModelStyle::Joint => {
                let total = n0 * self.config.eval_round_cost()?;
                for _ in 0..total {
                    let (x, w) =
                        random_strategy(RandomKind::RhoRandom, &x_bounds, &w_domain, &mut init_rng)?;
                    let w = w.expect("joint draws carry an environment point");
                    let y = self.observe_value(&x, &w, &mut noise)?;
                    self.history.push(Observation { iteration: 0, x, w: Some(w), y, eval_cost: 1 });
                    self.evals_used += 1;
                }
            }
        }
        Ok(())
    }

    // -- model ------------------------------------------------------------

    fn training_data(&self) -> (DMatrix<f64>, DVector<f64>, InputTransform) {
        let problem = &self.config.problem;
        let transform = match self.style() {
            ModelStyle::Joint => problem.joint_transform(),
            ModelStyle::RiskDirect => problem.x_transform(),
        };
        let n = self.history.len();
        let d = transform.dim();
        let mut inputs = DMatrix::zeros(n, d);
        let mut targets = DVector::zeros(n);
        for (i, obs) in self.history.iter().enumerate() {
            let mut raw = obs.x.clone();
            if matches!(self.style(), ModelStyle::Joint) {
                raw.extend(obs.w.iter().flatten().copied());
            }
            for (j, u) in transform.to_unit(&raw).into_iter().enumerate() {
                inputs[(i, j)] = u.clamp(0.0, 1.0);
            }
            targets[i] = obs.y;
        }
        (inputs, targets, transform)
    }

    /// Observations are noise-free when the objective is noise-free and, in
    /// the risk-direct style, each round covers the full finite support (a
    /// subsampled risk estimate varies from round to round).
    fn fixed_noise(&self) -> Result<Option<f64>> {
        if self.config.problem.noise_std > 0.0 || self.config.simulator.is_some() {
            return Ok(None);
        }
        Ok(match self.style() {
            ModelStyle::Joint => Some(0.0),
            ModelStyle::RiskDirect => {
                let full = matches!(&self.config.problem.w_domain, WDomain::Finite(set)
                    if self.config.eval_round_cost()? == set.len());
                full.then_some(0.0)
            }
        })
    }

    fn refit(&mut self, iter: usize) -> Result<()> {
        let (inputs, targets, transform) = self.training_data();
        let cfg = FitConfig {
            q1: self.config.fit_iters,
            restarts: self.config.fit_restarts,
            seed: self.stream_seed(STREAM_FIT, iter),
            fixed_noise: self.fixed_noise()?,
            warm_start: self.warm_hyper.clone(),
        };
        self.gp = fit_map(inputs, &targets, transform, &cfg)?;
        self.warm_hyper = Some(self.gp.hyperparameters().clone());
        Ok(())
    }

    // -- acquisition ------------------------------------------------------

    /// Environment source for acquisition computations, in unit coordinates
    /// (the joint model lives on the unit cube).
    fn acq_wsource(&self) -> Result<WSource<'_>> {
        let l = self.config.inner_l.or(self.config.problem.inner_l);
        match (&self.unit_wfinite, &self.config.problem.w_domain) {
            (Some(set), _) => Ok(match l {
                Some(l) if l < set.len() => WSource::SubsampleFinite { set, l },
                _ => WSource::Full(set),
            }),
            (None, WDomain::Box(_)) => {
                let l = l.ok_or_else(|| {
                    Error::Config(
                        "a continuous environment domain needs an acquisition subsample size"
                            .into(),
                    )
                })?;
                Ok(WSource::SubsampleBox { bounds: &self.unit_wbox, l })
            }
            (None, WDomain::Finite(_)) => unreachable!("finite supports are cached at startup"),
        }
    }

    fn random_candidate(&self, iter: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let mut rng = rng_from_seed(self.stream_seed(STREAM_RANDOM, iter));
        let kind = match self.style() {
            ModelStyle::Joint => RandomKind::RhoRandom,
            ModelStyle::RiskDirect => RandomKind::PlainRandom,
        };
        random_strategy(kind, &self.config.problem.x_bounds, &self.config.problem.w_domain, &mut rng)
    }

    fn joint_acquisition(&self, iter: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let problem = &self.config.problem;
        let dx = problem.dx();
        let base = make_base_samples(
            self.config.fantasies,
            self.config.sample_paths,
            self.acq_wsource()?,
            self.stream_seed(STREAM_ACQ_BASE, iter),
        )?;
        let bounds = vec![(0.0, 1.0); dx + problem.dw()];
        let tts = TtsConfig::from_optimizer(&self.config.optimizer);
        let seed = self.stream_seed(STREAM_ACQ_OPT, iter);
        let result = match self.config.algorithm {
            Algorithm::RhoKg => {
                let inner = InnerSolveConfig::from_optimizer(&self.config.optimizer);
                let ctx = AcqContext::new(&self.gp, problem.risk, &base, inner)?;
                let mut obj = RhoKgObjective::new(ctx);
                tts_optimize(&mut obj, &bounds, &tts, seed)?.0
            }
            Algorithm::RhoKgApx => {
                let mut obj = RhoKgApxObjective::new(&self.gp, problem.risk, &base)?;
                tts_optimize(&mut obj, &bounds, &tts, seed)?.0
            }
            other => unreachable!("{other} is not a joint-model acquisition"),
        };
        let joint = problem.joint_transform().from_unit(&result.x);
        let (x, w) = joint.split_at(dx);
        Ok((x.to_vec(), Some(w.to_vec())))
    }

    fn direct_acquisition(&self, iter: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        let problem = &self.config.problem;
        let bounds = vec![(0.0, 1.0); problem.dx()];
        let opt = &self.config.optimizer;
        let ms = MultistartConfig {
            restarts: opt.restarts,
            raw_samples: opt.raw_samples,
            eta: 1.0,
            lbfgs: opt.outer_lbfgs(),
        };
        let seed = self.stream_seed(STREAM_ACQ_OPT, iter);
        let gp = &self.gp;
        let result = match self.config.algorithm {
            Algorithm::Ei => {
                let mut f =
                    |x: &[f64], _: bool| ei_with_grad(gp, x).map(|(v, g)| (v, dvec_to_vec(&g)));
                multistart_maximize(&mut f, &bounds, &ms, seed, &[])?
            }
            Algorithm::Ucb => {
                let beta = self.config.ucb_beta;
                let mut f = |x: &[f64], _: bool| {
                    lcb_with_grad(gp, x, beta).map(|(v, g)| (v, dvec_to_vec(&g)))
                };
                multistart_minimize(&mut f, &bounds, &ms, seed, &[])?
            }
            Algorithm::KgPlain => {
                let base =
                    kg_base_samples(self.config.fantasies, self.stream_seed(STREAM_ACQ_BASE, iter))?;
                let inner = InnerSolveConfig::from_optimizer(opt);
                let mut f = |x: &[f64], _: bool| {
                    kg_plain(gp, x, &base, &inner).map(|a| (a.value, dvec_to_vec(&a.gradient)))
                };
                multistart_maximize(&mut f, &bounds, &ms, seed, &[])?
            }
            other => unreachable!("{other} is not a direct-model acquisition"),
        };
        Ok((problem.x_transform().from_unit(&result.x), None))
    }

    fn select_candidate(&self, iter: usize) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        match self.config.algorithm {
            Algorithm::Random | Algorithm::RhoRandom => self.random_candidate(iter),
            Algorithm::RhoKg | Algorithm::RhoKgApx => self.joint_acquisition(iter),
            Algorithm::Ei | Algorithm::Ucb | Algorithm::KgPlain => self.direct_acquisition(iter),
        }
    }

    /// Candidate for iteration `iter`, substituting a random draw when the
    /// acquisition fails.
    fn choose(&self, iter: usize) -> Result<(Vec<f64>, Option<Vec<f64>>, bool)> {
        match self.select_candidate(iter) {
            Ok((x, w)) => Ok((x, w, false)),
            Err(err) => {
                eprintln!(
                    "[{}] iteration {iter}: acquisition failed ({err}); using a random candidate",
                    self.config.run_id()
                );
                let (x, w) = self.random_candidate(iter)?;
                Ok((x, w, true))
            }
        }
    }

    /// Runs one iteration: select a candidate, observe the objective, refit
    /// the model, and record a recommendation. Fails without consuming
    /// budget when the remaining budget cannot cover the iteration.
    pub fn step(&mut self) -> Result<()> {
        let cost = self.config.step_cost()?;
        let remaining = self.remaining_budget();
        if remaining < cost {
            return Err(Error::Config(format!(
                "budget exhausted: {remaining} evaluations remain but one iteration needs {cost}"
            )));
        }
        let iter = self.iteration + 1;
        let (x_raw, w_raw, fell_back) = self.choose(iter)?;
        if fell_back {
            self.fallbacks += 1;
        }
        let mut noise = RoundNoise::new(self.stream_seed(STREAM_NOISE, iter));
        match self.style() {
            ModelStyle::Joint => {
                let w = w_raw.expect("joint candidates carry an environment point");
                let y = self.observe_value(&x_raw, &w, &mut noise)?;
                self.history.push(Observation {
                    iteration: iter,
                    x: x_raw,
                    w: Some(w),
                    y,
                    eval_cost: 1,
                });
                self.evals_used += 1;
            }
            ModelStyle::RiskDirect => {
                let wt = self.next_eval_wset()?;
                let y = self.observe_risk(&x_raw, &wt, &mut noise)?;
                let cost = wt.len();
                self.history.push(Observation {
                    iteration: iter,
                    x: x_raw,
                    w: None,
                    y,
                    eval_cost: cost,
                });
                self.evals_used += cost;
            }
        }
        self.iteration = iter;
        self.refit(iter)?;
        self.push_recommendation()?;
        Ok(())
    }

    // -- recommendation ---------------------------------------------------

    fn build_rec_base(&mut self) -> Result<()> {
        if matches!(self.style(), ModelStyle::Joint) {
            let seed = split_seed(self.config.seed, STREAM_RECOMMEND);
            self.rec_base =
                Some(make_base_samples(1, self.config.sample_paths, self.acq_wsource()?, seed)?);
        }
        Ok(())
    }

    /// Recommends the decision minimizing the model's risk estimate. Does
    /// not consume budget and does not change the state.
    pub fn recommend(&self) -> Result<Recommendation> {
        let problem = &self.config.problem;
        let dx = problem.dx();
        let bounds = vec![(0.0, 1.0); dx];
        let opt = &self.config.optimizer;
        let ms = MultistartConfig {
            restarts: opt.inner_restarts,
            raw_samples: opt.inner_raw,
            eta: 1.0,
            lbfgs: opt.inner_lbfgs(),
        };
        let seed = self.stream_seed(STREAM_RECOMMEND, self.iteration);
        let extra: Vec<Vec<f64>> = self.last_rec_unit.iter().cloned().collect();
        let gp = &self.gp;
        let result = match self.style() {
            ModelStyle::Joint => {
                let base = self
                    .rec_base
                    .as_ref()
                    .ok_or_else(|| Error::invalid("recommendation base samples missing"))?;
                let mut f = |x: &[f64], _: bool| {
                    posterior_risk_gradient(
                        gp,
                        x,
                        base.wset(),
                        problem.risk,
                        base.z_row(0),
                        RiskGradient::Query,
                    )
                    .map(|(v, g)| (v, dvec_to_vec(&g)))
                };
                multistart_minimize(&mut f, &bounds, &ms, seed, &extra)?
            }
            ModelStyle::RiskDirect => {
                let empty = DMatrix::zeros(1, 0);
                let mut f = |x: &[f64], _: bool| {
                    let grads = gp.block_posterior_grad(x, &empty, Wrt::Query)?;
                    let g: Vec<f64> = (0..dx).map(|j| grads.dmean[j][0]).collect();
                    Ok((grads.mean[0], g))
                };
                multistart_minimize(&mut f, &bounds, &ms, seed, &extra)?
            }
        };
        let x_rec = problem.x_transform().from_unit(&result.x);
        let (true_risk, gap) = match &self.oracle {
            Some(grid) => {
                let tr = brute_force_risk(problem, &x_rec, grid)?;
                (Some(tr), problem.true_optimum.map(|opt| tr - opt))
            }
            None => (None, None),
        };
        Ok(Recommendation {
            iteration: self.iteration,
            evals_used: self.evals_used,
            x: x_rec,
            posterior_risk_estimate: result.value,
            true_risk,
            gap,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        })
    }

    fn push_recommendation(&mut self) -> Result<()> {
        let rec = self.recommend()?;
        self.last_rec_unit = Some(self.config.problem.x_transform().to_unit(&rec.x));
        self.recommendations.push(rec);
        Ok(())
    }
}

fn dvec_to_vec(g: &DVector<f64>) -> Vec<f64> {
    g.iter().copied().collect()
}

/// Maps a finite environment support into the unit cube using the same
/// per-coordinate bounds as the joint model's input transform.
fn unit_finite_wset(set: &WSet, bounds: &[(f64, f64)]) -> Result<WSet> {
    let mut pts = set.points().clone();
    for c in 0..pts.ncols() {
        let (lo, hi) = bounds[c];
        for r in 0..pts.nrows() {
            pts[(r, c)] = if hi > lo { (pts[(r, c)] - lo) / (hi - lo) } else { 0.5 };
        }
    }
    WSet::new(pts, set.weights().clone(), set.source())
}

// ---------------------------------------------------------------------------
// Replay from persisted histories
// ---------------------------------------------------------------------------

/// Rebuilds run state from a persisted observation history without touching
/// the objective (the returned state must not be stepped against an external
/// simulator; it evaluates built-in objectives only).
pub fn rebuild_state(config: ExperimentConfig, history: Vec<Observation>) -> Result<ExperimentState> {
    if history.is_empty() {
        return Err(Error::invalid("history must contain the initial design"));
    }
    let style = config.algorithm.style();
    let dw = config.problem.dw();
    for (i, obs) in history.iter().enumerate() {
        if obs.x.len() != config.problem.dx() {
            return Err(Error::invalid(format!(
                "history row {i} has {} decision coordinates, expected {}",
                obs.x.len(),
                config.problem.dx()
            )));
        }
        match (style, &obs.w) {
            (ModelStyle::Joint, Some(w)) if w.len() == dw => {}
            (ModelStyle::RiskDirect, None) => {}
            _ => {
                return Err(Error::invalid(format!(
                    "history row {i} does not match the algorithm's observation style"
                )))
            }
        }
    }
    let mut state = ExperimentState::new(config, false)?;
    state.evals_used = history.iter().map(|o| o.eval_cost).sum();
    state.iteration = history.iter().map(|o| o.iteration).max().unwrap_or(0);
    state.eval_rounds = match style {
        ModelStyle::RiskDirect => history.len(),
        ModelStyle::Joint => 0,
    };
    state.history = history;
    state.refit(state.iteration)?;
    state.build_rec_base()?;
    Ok(state)
}

/// Proposes the next candidate for a run persisted as (config, history).
/// Deterministic: the same inputs always yield the same suggestion.
pub fn suggest(config: &ExperimentConfig, history: Vec<Observation>) -> Result<Suggestion> {
    let state = rebuild_state(config.clone(), history)?;
    let (x, w, fallback) = state.choose(state.iteration + 1)?;
    Ok(Suggestion { x, w, fallback })
}

/// Recomputes the recommendation for a run persisted as (config, history).
pub fn recommend_from(config: &ExperimentConfig, history: Vec<Observation>) -> Result<Recommendation> {
    let state = rebuild_state(config.clone(), history)?;
    state.recommend()
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

/// Shortest decimal form that round-trips an `f64` exactly.
fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn timestamp_header() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    format!("# generated_at_unix={secs}\n")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn write_csv_with_header(path: &Path, body: Vec<u8>) -> Result<()> {
    let mut out = timestamp_header().into_bytes();
    out.extend_from_slice(&body);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Companion history file of a result file: `runs/a.csv` -> `runs/a.history.csv`.
pub fn history_path(result: &Path) -> PathBuf {
    let stem = result.file_stem().and_then(|s| s.to_str()).unwrap_or("result");
    result.with_file_name(format!("{stem}.history.csv"))
}

/// Writes the recommendation trace: one row per recommendation with the
/// run identity, budget position, recommended decision, and risk metrics.
pub fn write_result_csv(state: &ExperimentState, path: &Path) -> Result<()> {
    let dx = state.config.problem.dx();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "run_id".to_string(),
        "seed".to_string(),
        "algorithm".to_string(),
        "iteration".to_string(),
        "evals_used".to_string(),
    ];
    header.extend((1..=dx).map(|j| format!("x_rec_{j}")));
    header.extend(
        ["posterior_risk_estimate", "true_risk", "gap", "wall_time_s"]
            .iter()
            .map(|s| s.to_string()),
    );
    wtr.write_record(&header).map_err(csv_err)?;
    for rec in &state.recommendations {
        let mut row = vec![
            state.config.run_id(),
            state.config.seed.to_string(),
            state.config.algorithm.to_string(),
            rec.iteration.to_string(),
            rec.evals_used.to_string(),
        ];
        row.extend(rec.x.iter().map(|v| fmt_real(*v)));
        row.push(fmt_real(rec.posterior_risk_estimate));
        row.push(rec.true_risk.map(fmt_real).unwrap_or_default());
        row.push(rec.gap.map(fmt_real).unwrap_or_default());
        row.push(fmt_real(rec.wall_time_s));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    let body = wtr.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    write_csv_with_header(path, body)
}

/// Writes the observation history: one row per observation with raw-space
/// inputs (environment columns are empty for risk-direct rows).
pub fn write_history_csv(state: &ExperimentState, path: &Path) -> Result<()> {
    let dx = state.config.problem.dx();
    let dw = state.config.problem.dw();
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "run_id".to_string(),
        "seed".to_string(),
        "algorithm".to_string(),
        "iteration".to_string(),
        "eval_cost".to_string(),
    ];
    header.extend((1..=dx).map(|j| format!("x_{j}")));
    header.extend((1..=dw).map(|j| format!("w_{j}")));
    header.push("y".to_string());
    wtr.write_record(&header).map_err(csv_err)?;
    for obs in &state.history {
        let mut row = vec![
            state.config.run_id(),
            state.config.seed.to_string(),
            state.config.algorithm.to_string(),
            obs.iteration.to_string(),
            obs.eval_cost.to_string(),
        ];
        row.extend(obs.x.iter().map(|v| fmt_real(*v)));
        match &obs.w {
            Some(w) => row.extend(w.iter().map(|v| fmt_real(*v))),
            None => row.extend(std::iter::repeat(String::new()).take(dw)),
        }
        row.push(fmt_real(obs.y));
        wtr.write_record(&row).map_err(csv_err)?;
    }
    let body = wtr.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    write_csv_with_header(path, body)
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn col(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column '{name}'") })
}

fn field<'r>(rec: &'r csv::StringRecord, idx: usize, name: &str) -> Result<&'r str> {
    rec.get(idx).ok_or_else(|| Error::Parse {
        line: record_line(rec),
        msg: format!("missing value in column '{name}'"),
    })
}

fn parse_num<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = field(rec, idx, name)?;
    raw.trim().parse().map_err(|e| Error::Parse {
        line: record_line(rec),
        msg: format!("column '{name}': {e}"),
    })
}

fn parse_opt_num(rec: &csv::StringRecord, idx: usize, name: &str) -> Result<Option<f64>> {
    let raw = field(rec, idx, name)?.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse().map(Some).map_err(|e| Error::Parse {
        line: record_line(rec),
        msg: format!("column '{name}': {e}"),
    })
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))
}

/// Numbered columns `prefix1..prefixD`, in order, from a header record.
fn numbered_cols(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(rest) = h.strip_prefix(prefix) {
            if let Ok(j) = rest.parse::<usize>() {
                found.push((j, i));
            }
        }
    }
    found.sort_unstable();
    for (expect, (j, _)) in found.iter().enumerate() {
        if *j != expect + 1 {
            return Err(Error::Parse {
                line: 1,
                msg: format!("columns '{prefix}*' must be numbered 1..{}", found.len()),
            });
        }
    }
    Ok(found.into_iter().map(|(_, i)| i).collect())
}

/// Reads an observation history written by [`write_history_csv`].
pub fn read_history(path: &Path) -> Result<Vec<Observation>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let xcols = numbered_cols(&headers, "x_")?;
    let wcols = numbered_cols(&headers, "w_")?;
    if xcols.is_empty() {
        return Err(Error::Parse { line: 1, msg: "history needs at least one 'x_*' column".into() });
    }
    let c_iter = col(&headers, "iteration")?;
    let c_cost = col(&headers, "eval_cost")?;
    let c_y = col(&headers, "y")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse { line: 0, msg: format!("{e}") })?;
        let mut x = Vec::with_capacity(xcols.len());
        for (j, idx) in xcols.iter().enumerate() {
            x.push(parse_num(&rec, *idx, &format!("x_{}", j + 1))?);
        }
        let mut w = Vec::with_capacity(wcols.len());
        let mut blanks = 0usize;
        for (j, idx) in wcols.iter().enumerate() {
            match parse_opt_num(&rec, *idx, &format!("w_{}", j + 1))? {
                Some(v) => w.push(v),
                None => blanks += 1,
            }
        }
        let w = match (blanks, w.len()) {
            (_, 0) => None,
            (0, _) => Some(w),
            _ => {
                return Err(Error::Parse {
                    line: record_line(&rec),
                    msg: "environment columns must be all set or all empty".into(),
                })
            }
        };
        out.push(Observation {
            iteration: parse_num(&rec, c_iter, "iteration")?,
            x,
            w,
            y: parse_num(&rec, c_y, "y")?,
            eval_cost: parse_num(&rec, c_cost, "eval_cost")?,
        });
    }
    Ok(out)
}

/// One parsed row of a result file.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub run_id: String,
    pub seed: u64,
    pub algorithm: String,
    pub iteration: usize,
    pub evals_used: usize,
    pub x: Vec<f64>,
    pub posterior_risk_estimate: f64,
    pub true_risk: Option<f64>,
    pub gap: Option<f64>,
    pub wall_time_s: f64,
}

/// Reads a recommendation trace written by [`write_result_csv`].
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let xcols = numbered_cols(&headers, "x_rec_")?;
    let c_run = col(&headers, "run_id")?;
    let c_seed = col(&headers, "seed")?;
    let c_alg = col(&headers, "algorithm")?;
    let c_iter = col(&headers, "iteration")?;
    let c_evals = col(&headers, "evals_used")?;
    let c_est = col(&headers, "posterior_risk_estimate")?;
    let c_true = col(&headers, "true_risk")?;
    let c_gap = col(&headers, "gap")?;
    let c_wall = col(&headers, "wall_time_s")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse { line: 0, msg: format!("{e}") })?;
        let mut x = Vec::with_capacity(xcols.len());
        for (j, idx) in xcols.iter().enumerate() {
            x.push(parse_num(&rec, *idx, &format!("x_rec_{}", j + 1))?);
        }
        out.push(ResultRow {
            run_id: field(&rec, c_run, "run_id")?.to_string(),
            seed: parse_num(&rec, c_seed, "seed")?,
            algorithm: field(&rec, c_alg, "algorithm")?.to_string(),
            iteration: parse_num(&rec, c_iter, "iteration")?,
            evals_used: parse_num(&rec, c_evals, "evals_used")?,
            x,
            posterior_risk_estimate: parse_num(&rec, c_est, "posterior_risk_estimate")?,
            true_risk: parse_opt_num(&rec, c_true, "true_risk")?,
            gap: parse_opt_num(&rec, c_gap, "gap")?,
            wall_time_s: parse_num(&rec, c_wall, "wall_time_s")?,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Cross-run summary at one budget position of one algorithm.
#[derive(Debug, Clone)]
pub struct AggregatePoint {
    pub algorithm: String,
    pub evals_used: usize,
    /// Number of runs aggregated.
    pub runs: usize,
    /// `"gap"` when every run knows its optimality gap, otherwise
    /// `"posterior_risk"`.
    pub metric: String,
    pub mean: f64,
    /// Standard error of the mean (0 for a single run).
    pub se: f64,
    /// Mean and standard error of `log10(max(gap, 1e-12))`; present only for
    /// the gap metric.
    pub mean_log10: Option<f64>,
    pub se_log10: Option<f64>,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    // Identical replicates have exactly zero spread; summing first would
    // manufacture rounding noise.
    if n < 2 || values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Groups result rows by algorithm and budget position and summarizes the
/// optimality gap (or, when no ground truth is recorded, the model's own
/// risk estimate) across runs.
pub fn aggregate_results(rows: &[ResultRow]) -> Vec<AggregatePoint> {
    let mut gap_ok: BTreeMap<&str, bool> = BTreeMap::new();
    for row in rows {
        let e = gap_ok.entry(row.algorithm.as_str()).or_insert(true);
        *e &= row.gap.is_some();
    }
    let mut groups: BTreeMap<(&str, usize), Vec<&ResultRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.algorithm.as_str(), row.evals_used)).or_default().push(row);
    }
    let mut out = Vec::with_capacity(groups.len());
    for ((alg, evals), members) in groups {
        let use_gap = gap_ok[alg];
        let values: Vec<f64> = members
            .iter()
            .map(|r| if use_gap { r.gap.expect("checked per algorithm") } else { r.posterior_risk_estimate })
            .collect();
        let (mean, se) = mean_se(&values);
        let (mean_log10, se_log10) = if use_gap {
            let logs: Vec<f64> = values.iter().map(|g| g.max(1e-12).log10()).collect();
            let (m, s) = mean_se(&logs);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        out.push(AggregatePoint {
            algorithm: alg.to_string(),
            evals_used: evals,
            runs: members.len(),
            metric: if use_gap { "gap".into() } else { "posterior_risk".into() },
            mean,
            se,
            mean_log10,
            se_log10,
        });
    }
    out
}

/// Smooths each algorithm's aggregate sequence with a trailing moving
/// average over at most 3 budget positions (plot-friendly curves).
pub fn smooth_aggregate(points: &[AggregatePoint]) -> Vec<AggregatePoint> {
    let mut out: Vec<AggregatePoint> = Vec::with_capacity(points.len());
    let mut by_alg: BTreeMap<&str, Vec<&AggregatePoint>> = BTreeMap::new();
    for p in points {
        by_alg.entry(p.algorithm.as_str()).or_default().push(p);
    }
    for (_, mut series) in by_alg {
        series.sort_by_key(|p| p.evals_used);
        for i in 0..series.len() {
            let lo = i.saturating_sub(2);
            let window = &series[lo..=i];
            let avg = |f: &dyn Fn(&AggregatePoint) -> f64| {
                window.iter().map(|p| f(p)).sum::<f64>() / window.len() as f64
            };
            let mut p = series[i].clone();
            p.mean = avg(&|p| p.mean);
            p.se = avg(&|p| p.se);
            if window.iter().all(|p| p.mean_log10.is_some()) {
                p.mean_log10 = Some(avg(&|p| p.mean_log10.unwrap()));
                p.se_log10 = Some(avg(&|p| p.se_log10.unwrap()));
            } else {
                p.mean_log10 = None;
                p.se_log10 = None;
            }
            out.push(p);
        }
    }
    out
}

/// Writes aggregate points as CSV (used by both plain reports and smoothed
/// plot data).
pub fn write_aggregate_csv(points: &[AggregatePoint], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "algorithm",
        "evals_used",
        "runs",
        "metric",
        "mean",
        "se",
        "mean_log10",
        "se_log10",
    ])
    .map_err(csv_err)?;
    for p in points {
        wtr.write_record(&[
            p.algorithm.clone(),
            p.evals_used.to_string(),
            p.runs.to_string(),
            p.metric.clone(),
            fmt_real(p.mean),
            fmt_real(p.se),
            p.mean_log10.map(fmt_real).unwrap_or_default(),
            p.se_log10.map(fmt_real).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let body = wtr.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    write_csv_with_header(path, body)
}
