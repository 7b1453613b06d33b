//! Benchmark objectives, environment distributions, a brute-force risk
//! oracle, and an adapter for external simulator processes.
//!
//! Benchmark functions are pure and noise-free; observation noise is applied
//! by the experiment harness (or by the external simulator itself).

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::gp::InputTransform;
use crate::qmc::sobol_points;
use crate::risk::{empirical_risk, RiskSpec, WSet, WSetSource};

/// Seed of the frozen quasi-MC environment grid behind [`oracle_wset`]; the
/// recorded true optima are minima of exactly this grid's risk surface, so
/// optimality gaps stay nonnegative.
pub const ORACLE_WSET_SEED: u64 = 0x0AC1E;

/// Size of the quasi-MC environment grid used by [`oracle_wset`] for
/// continuous environment distributions.
pub const ORACLE_WSET_SIZE: usize = 10_000;

// ---------------------------------------------------------------------------
// Pure benchmark functions
// ---------------------------------------------------------------------------

fn check_box(v: &[f64], bounds: &[(f64, f64)], what: &str) -> Result<()> {
    ensure_finite(v, what)?;
    if v.len() != bounds.len() {
        return Err(Error::invalid(format!(
            "{what} has dimension {}, expected {}",
            v.len(),
            bounds.len()
        )));
    }
    const SLACK: f64 = 1e-9;
    for (i, (x, (lo, hi))) in v.iter().zip(bounds.iter()).enumerate() {
        if *x < lo - SLACK || *x > hi + SLACK {
            return Err(Error::invalid(format!(
                "{what} coordinate {i} = {x} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// The two-dimensional Branin function `y_b(u, v)`.
pub fn branin(u: f64, v: f64) -> f64 {
    use std::f64::consts::PI;
    let a = v - 5.1 / (4.0 * PI * PI) * u * u + 5.0 / PI * u - 6.0;
    a * a + 10.0 * (1.0 - 1.0 / (8.0 * PI)) * u.cos() + 10.0
}

/// Product-of-Branins objective on the unit 4-cube:
/// `y(x) = y_b(15 x1 - 5, 15 x2) * y_b(15 x3 - 5, 15 x4)`.
///
/// Coordinates follow the natural order `(x1, x2, x3, x4)`; the decision
/// variables are `(x1, x4)` and the environmental ones `(x2, x3)`.
pub fn branin_williams(x: &[f64]) -> Result<f64> {
    check_box(x, &[(0.0, 1.0); 4], "branin_williams input")?;
    Ok(branin(15.0 * x[0] - 5.0, 15.0 * x[1]) * branin(15.0 * x[2] - 5.0, 15.0 * x[3]))
}

/// Polynomial benchmark with four decision variables `xc` in `[-5, 5]^4` and
/// three environmental variables `xe` in `[-2, 2]^3`.
pub fn f6(xc: &[f64], xe: &[f64]) -> Result<f64> {
    check_box(xc, &[(-5.0, 5.0); 4], "f6 decision input")?;
    check_box(xe, &[(-2.0, 2.0); 3], "f6 environment input")?;
    let (c1, c2, c3, c4) = (xc[0], xc[1], xc[2], xc[3]);
    let (e1, e2, e3) = (xe[0], xe[1], xe[2]);
    Ok(e1 * (c1 * c1 - c2 + c3 - c4 + 2.0)
        + e2 * (-c1 + 2.0 * c2 * c2 - c3 * c3 + 2.0 * c4 + 1.0)
        + e3 * (2.0 * c1 - c2 + 2.0 * c3 - c4 * c4 + 5.0)
        + 5.0 * c1 * c1
        + 4.0 * c2 * c2
        + 3.0 * c3 * c3
        + 2.0 * c4 * c4
        - e1 * e1
        - e2 * e2)
}

/// One-dimensional-decision toy objective: a rescaled Branin slice
/// `y(x, w) = y_b(15 x - 5, 15 w) / 50` on the unit square.
pub fn scaled_branin(x: f64, w: f64) -> Result<f64> {
    check_box(&[x, w], &[(0.0, 1.0); 2], "scaled_branin input")?;
    Ok(branin(15.0 * x - 5.0, 15.0 * w) / 50.0)
}

/// The 12-point environment distribution of the product-of-Branins problem:
/// support `{0.25, 0.5, 0.75} x {0.2, 0.4, 0.6, 0.8}` over `(x2, x3)`.
pub fn bw_distribution() -> WSet {
    let x2 = [0.25, 0.5, 0.75];
    let x3 = [0.2, 0.4, 0.6, 0.8];
    let mass = [
        [0.0375, 0.0875, 0.0875, 0.0375],
        [0.0750, 0.1750, 0.1750, 0.0750],
        [0.0375, 0.0875, 0.0875, 0.0375],
    ];
    let mut points = Vec::with_capacity(24);
    let mut weights = Vec::with_capacity(12);
    for (i, a) in x2.iter().enumerate() {
        for (j, b) in x3.iter().enumerate() {
            points.push(*a);
            points.push(*b);
            weights.push(mass[i][j]);
        }
    }
    WSet::new(
        DMatrix::from_row_slice(12, 2, &points),
        DVector::from_column_slice(&weights),
        WSetSource::Full,
    )
    .expect("table masses sum to one")
}

/// The toy problem's 10-point uniform environment support `{0, 1/9, ..., 1}`.
pub fn toy_distribution() -> WSet {
    let points = DMatrix::from_fn(10, 1, |i, _| i as f64 / 9.0);
    WSet::uniform(points, WSetSource::Full).expect("uniform weights")
}

// ---------------------------------------------------------------------------
// Problem specifications
// ---------------------------------------------------------------------------

/// Environment domain: a finite weighted support or a continuous uniform box,
/// both in raw (untransformed) coordinates.
#[derive(Debug, Clone)]
pub enum WDomain {
    Finite(WSet),
    Box(Vec<(f64, f64)>),
}

impl WDomain {
    pub fn dim(&self) -> usize {
        match self {
            WDomain::Finite(set) => set.dim(),
            WDomain::Box(b) => b.len(),
        }
    }

    /// Enclosing box, used for candidate optimization over the environment
    /// coordinates and for raw-to-unit scaling.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self {
            WDomain::Finite(set) => (0..set.dim())
                .map(|c| {
                    let col = set.points().column(c);
                    (col.min(), col.max())
                })
                .collect(),
            WDomain::Box(b) => b.clone(),
        }
    }
}

/// Which built-in objective (if any) backs a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    BraninWilliams,
    F6,
    ScaledBranin,
    /// The objective lives in an external simulator process; see
    /// [`SimulatorHandle`].
    External,
}

/// Static description of one benchmark problem.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub name: String,
    /// Decision-variable bounds in raw coordinates.
    pub x_bounds: Vec<(f64, f64)>,
    pub w_domain: WDomain,
    /// Observation noise standard deviation applied by the harness.
    pub noise_std: f64,
    pub risk: RiskSpec,
    /// Minimal true risk, when a brute-force oracle value is recorded.
    pub true_optimum: Option<f64>,
    /// Environment subsample size for acquisition inner computations
    /// (`None`: use the full finite support).
    pub inner_l: Option<usize>,
    /// Environment subsample size for baseline risk evaluations
    /// (`None`: use the full finite support).
    pub eval_l: Option<usize>,
    pub objective: ObjectiveKind,
}

impl ProblemSpec {
    pub fn dx(&self) -> usize {
        self.x_bounds.len()
    }

    pub fn dw(&self) -> usize {
        self.w_domain.dim()
    }

    /// Raw-to-unit map over the decision coordinates only.
    pub fn x_transform(&self) -> InputTransform {
        InputTransform::new(&self.x_bounds).expect("validated bounds")
    }

    /// Raw-to-unit map over the joint `(x, w)` coordinates.
    pub fn joint_transform(&self) -> InputTransform {
        let mut bounds = self.x_bounds.clone();
        bounds.extend(self.w_domain.bounds());
        InputTransform::new(&bounds).expect("validated bounds")
    }

    /// Noise-free objective value at raw-coordinate inputs. Fails for
    /// external-simulator problems, which expose no noise-free access.
    pub fn evaluate_noiseless(&self, x_raw: &[f64], w_raw: &[f64]) -> Result<f64> {
        match self.objective {
            ObjectiveKind::BraninWilliams => {
                if x_raw.len() != 2 || w_raw.len() != 2 {
                    return Err(Error::invalid("expected 2 decision and 2 environment coordinates"));
                }
                branin_williams(&[x_raw[0], w_raw[0], w_raw[1], x_raw[1]])
            }
            ObjectiveKind::F6 => f6(x_raw, w_raw),
            ObjectiveKind::ScaledBranin => {
                if x_raw.len() != 1 || w_raw.len() != 1 {
                    return Err(Error::invalid("expected 1 decision and 1 environment coordinate"));
                }
                scaled_branin(x_raw[0], w_raw[0])
            }
            ObjectiveKind::External => Err(Error::invalid(
                "external-simulator problems have no noise-free objective",
            )),
        }
    }

    /// Product-of-Branins problem: 2 decision dims, 12-point environment
    /// support, observation noise std 10.
    pub fn branin_williams(risk: RiskSpec) -> Self {
        let name = format!("branin_williams_{}", risk_tag(&risk));
        let mut spec = Self {
            name,
            x_bounds: vec![(0.0, 1.0); 2],
            w_domain: WDomain::Finite(bw_distribution()),
            noise_std: 10.0,
            risk,
            true_optimum: None,
            inner_l: None,
            eval_l: None,
            objective: ObjectiveKind::BraninWilliams,
        };
        spec.true_optimum = recorded_true_optimum(&spec.name).map(|o| o.value);
        spec
    }

    /// Seven-dimensional polynomial problem: CVaR over a continuous uniform
    /// environment box, subsampled environments (40 inner / 8 evaluation).
    pub fn f6(risk: RiskSpec) -> Self {
        let name = format!("f6_{}", risk_tag(&risk));
        let mut spec = Self {
            name,
            x_bounds: vec![(-5.0, 5.0); 4],
            w_domain: WDomain::Box(vec![(-2.0, 2.0); 3]),
            noise_std: 1.0,
            risk,
            true_optimum: None,
            inner_l: Some(40),
            eval_l: Some(8),
            objective: ObjectiveKind::F6,
        };
        spec.true_optimum = recorded_true_optimum(&spec.name).map(|o| o.value);
        spec
    }

    /// One-dimensional noise-free toy problem used by fast end-to-end tests.
    pub fn toy(risk: RiskSpec) -> Self {
        let name = format!("toy_{}", risk_tag(&risk));
        let mut spec = Self {
            name,
            x_bounds: vec![(0.0, 1.0)],
            w_domain: WDomain::Finite(toy_distribution()),
            noise_std: 0.0,
            risk,
            true_optimum: None,
            inner_l: None,
            eval_l: None,
            objective: ObjectiveKind::ScaledBranin,
        };
        spec.true_optimum = recorded_true_optimum(&spec.name).map(|o| o.value);
        spec
    }

    /// Looks a problem up by its configuration name. `alpha` overrides the
    /// default risk level when given.
    pub fn by_name(name: &str, risk: Option<RiskSpec>) -> Result<Self> {
        match name {
            "branin_williams" | "branin_williams_var0.70" => {
                Ok(Self::branin_williams(risk.map_or(RiskSpec::var(0.7), Ok)?))
            }
            "branin_williams_cvar0.70" => {
                Ok(Self::branin_williams(risk.map_or(RiskSpec::cvar(0.7), Ok)?))
            }
            "f6" | "f6_cvar0.75" => Ok(Self::f6(risk.map_or(RiskSpec::cvar(0.75), Ok)?)),
            "toy" | "toy_cvar0.70" => Ok(Self::toy(risk.map_or(RiskSpec::cvar(0.7), Ok)?)),
            other => Err(Error::Config(format!("unknown problem '{other}'"))),
        }
    }
}

fn risk_tag(risk: &RiskSpec) -> String {
    use crate::risk::RiskMeasure;
    let m = match risk.measure {
        RiskMeasure::Var => "var",
        RiskMeasure::Cvar => "cvar",
    };
    format!("{m}{:.2}", risk.alpha)
}

// ---------------------------------------------------------------------------
// Brute-force risk oracle and recorded optima
// ---------------------------------------------------------------------------

/// The frozen environment grid a problem's ground-truth risk is computed on:
/// the full support for finite distributions, otherwise a fixed
/// `ORACLE_WSET_SIZE`-point quasi-MC grid over the box.
pub fn oracle_wset(spec: &ProblemSpec) -> Result<WSet> {
    match &spec.w_domain {
        WDomain::Finite(set) => Ok(set.clone()),
        WDomain::Box(bounds) => {
            let u = sobol_points(bounds.len(), ORACLE_WSET_SIZE, ORACLE_WSET_SEED)?;
            let points = DMatrix::from_fn(ORACLE_WSET_SIZE, bounds.len(), |i, c| {
                let (lo, hi) = bounds[c];
                lo + u[(i, c)] * (hi - lo)
            });
            WSet::uniform(points, WSetSource::Subsampled)
        }
    }
}

/// Noise-free risk of the objective at raw decision point `x`, evaluated on
/// `wset` with the problem's risk specification.
pub fn brute_force_risk(spec: &ProblemSpec, x_raw: &[f64], wset: &WSet) -> Result<f64> {
    let mut samples = Vec::with_capacity(wset.len());
    let mut w = vec![0.0; wset.dim()];
    for i in 0..wset.len() {
        for c in 0..wset.dim() {
            w[c] = wset.points()[(i, c)];
        }
        samples.push(spec.evaluate_noiseless(x_raw, &w)?);
    }
    Ok(empirical_risk(&samples, wset.weights().as_slice(), spec.risk)?.value)
}

/// One recorded brute-force optimum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedOptimum {
    pub problem: String,
    /// Raw-coordinate minimizer found by the grid search.
    pub x_star: Vec<f64>,
    /// Minimal risk over the oracle environment grid.
    pub value: f64,
    /// How the value was produced (grid sizes, refinement rounds).
    pub method: String,
}

/// All optima bundled with the crate (see `data/true_optima.json`).
pub fn recorded_optima() -> Vec<RecordedOptimum> {
    serde_json::from_str(include_str!("../data/true_optima.json"))
        .expect("bundled optima file is well-formed")
}

/// Recorded optimum for `problem_name`, if any.
pub fn recorded_true_optimum(problem_name: &str) -> Option<RecordedOptimum> {
    recorded_optima().into_iter().find(|o| o.problem == problem_name)
}

/// Brute-force minimization of the oracle risk surface: a coordinate grid of
/// `grid + 1` points per decision dimension, followed by `refinements` rounds
/// of shrinking local grids around the incumbent. Returns `(x_star, value)`.
pub fn grid_minimize_risk(
    spec: &ProblemSpec,
    wset: &WSet,
    grid: usize,
    refinements: usize,
) -> Result<(Vec<f64>, f64)> {
    let dx = spec.dx();
    let mut lo: Vec<f64> = spec.x_bounds.iter().map(|b| b.0).collect();
    let mut hi: Vec<f64> = spec.x_bounds.iter().map(|b| b.1).collect();
    let mut best_x = vec![0.0; dx];
    let mut best_v = f64::INFINITY;
    for round in 0..=refinements {
        let mut idx = vec![0usize; dx];
        let mut x = vec![0.0; dx];
        loop {
            for c in 0..dx {
                x[c] = lo[c] + (hi[c] - lo[c]) * idx[c] as f64 / grid as f64;
            }
            let v = brute_force_risk(spec, &x, wset)?;
            if v < best_v {
                best_v = v;
                best_x.copy_from_slice(&x);
            }
            // Odometer increment over the grid indices.
            let mut c = 0;
            loop {
                if c == dx {
                    break;
                }
                idx[c] += 1;
                if idx[c] <= grid {
                    break;
                }
                idx[c] = 0;
                c += 1;
            }
            if c == dx {
                break;
            }
        }
        if round < refinements {
            // Shrink to a 2-cell neighborhood of the incumbent per dimension.
            for c in 0..dx {
                let step = (hi[c] - lo[c]) / grid as f64;
                let (blo, bhi) = spec.x_bounds[c];
                lo[c] = (best_x[c] - 2.0 * step).max(blo);
                hi[c] = (best_x[c] + 2.0 * step).min(bhi);
            }
        }
    }
    Ok((best_x, best_v))
}

/// Local coordinate-descent polish of a brute-force risk minimum: tries
/// per-coordinate steps, halving the step whenever no move improves, until
/// `final_step`. Robust at the kinks a VaR surface can have at its minimum.
pub fn polish_risk_minimum(
    spec: &ProblemSpec,
    wset: &WSet,
    start: &[f64],
    initial_step: f64,
    final_step: f64,
) -> Result<(Vec<f64>, f64)> {
    let mut x = start.to_vec();
    let mut v = brute_force_risk(spec, &x, wset)?;
    let mut step = initial_step;
    while step > final_step {
        let mut improved = false;
        for d in 0..spec.dx() {
            for s in [step, -step] {
                let mut xt = x.clone();
                let (lo, hi) = spec.x_bounds[d];
                xt[d] = (xt[d] + s).clamp(lo, hi);
                let vt = brute_force_risk(spec, &xt, wset)?;
                if vt < v {
                    x = xt;
                    v = vt;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((x, v))
}

// ---------------------------------------------------------------------------
// External simulator adapter
// ---------------------------------------------------------------------------

/// How to launch and talk to an external simulator process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatorConfig {
    /// Executable and arguments.
    pub command: Vec<String>,
    /// Per-query timeout in seconds (default 600).
    pub timeout_s: f64,
}

impl SimulatorConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self { command, timeout_s: 600.0 }
    }
}

#[derive(Serialize)]
struct SimRequest<'a> {
    id: u64,
    x: &'a [f64],
    w: &'a [f64],
    seed: u64,
}

#[derive(Deserialize)]
struct SimResponse {
    id: u64,
    y: f64,
}

/// A running simulator child process speaking the line-delimited JSON
/// protocol: one request object per line on stdin, one response object per
/// line on stdout, flushed per line.
pub struct SimulatorHandle {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
    stderr: mpsc::Receiver<String>,
    timeout: Duration,
    next_id: u64,
}

impl std::fmt::Debug for SimulatorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimulatorHandle").field("next_id", &self.next_id).finish()
    }
}

impl SimulatorHandle {
    /// Spawns the simulator process and wires up reader threads for its
    /// stdout and stderr.
    pub fn spawn(config: &SimulatorConfig) -> Result<Self> {
        if config.command.is_empty() {
            return Err(Error::invalid("simulator command is empty"));
        }
        if !(config.timeout_s > 0.0) {
            return Err(Error::invalid("simulator timeout must be positive"));
        }
        let mut child = Command::new(&config.command[0])
            .args(&config.command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Simulator(format!("failed to spawn {:?}: {e}", config.command[0])))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let stderr = child.stderr.take().expect("piped stderr");

        let (line_tx, line_rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stdout);
            for line in reader.lines() {
                if line_tx.send(line).is_err() {
                    break;
                }
            }
        });
        let (err_tx, err_rx) = mpsc::channel();
        std::thread::spawn(move || {
            let reader = BufReader::new(stderr);
            for line in reader.lines().map_while(std::io::Result::ok) {
                if err_tx.send(line).is_err() {
                    break;
                }
            }
        });

        Ok(Self {
            child,
            stdin,
            lines: line_rx,
            stderr: err_rx,
            timeout: Duration::from_secs_f64(config.timeout_s),
            next_id: 0,
        })
    }

    fn drain_stderr(&self) -> String {
        let mut out = String::new();
        while let Ok(line) = self.stderr.try_recv() {
            if !out.is_empty() {
                out.push('\n');
            }
            out.push_str(&line);
        }
        out
    }

    fn protocol_error(&self, msg: String) -> Error {
        let err = self.drain_stderr();
        if err.is_empty() {
            Error::Simulator(msg)
        } else {
            Error::Simulator(format!("{msg}; simulator stderr: {err}"))
        }
    }

    /// Sends one `(x, w, seed)` query and waits for the matching response.
    pub fn query(&mut self, x_raw: &[f64], w_raw: &[f64], seed: u64) -> Result<f64> {
        let id = self.next_id;
        self.next_id += 1;
        let req = serde_json::to_string(&SimRequest { id, x: x_raw, w: w_raw, seed })
            .expect("serializable request");
        writeln!(self.stdin, "{req}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| self.protocol_error(format!("failed to write request: {e}")))?;

        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(self.protocol_error(format!("failed to read response: {e}"))),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                return Err(self.protocol_error(format!(
                    "timed out after {:.0} s waiting for response {id}",
                    self.timeout.as_secs_f64()
                )));
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return Err(self.protocol_error("simulator closed its stdout".into()));
            }
        };
        let resp: SimResponse = serde_json::from_str(&line)
            .map_err(|e| self.protocol_error(format!("malformed response line {line:?}: {e}")))?;
        if resp.id != id {
            return Err(self.protocol_error(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        if !resp.y.is_finite() {
            return Err(self.protocol_error(format!("non-finite response y = {}", resp.y)));
        }
        Ok(resp.y)
    }
}

impl Drop for SimulatorHandle {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inner_branin_minimum_value() {
        // A known minimizer of the two-dimensional Branin function.
        let v = branin(std::f64::consts::PI, 2.275);
        assert_abs_diff_eq!(v, 0.397887, epsilon = 1e-5);
    }

    #[test]
    fn product_at_paired_minimizers() {
        // x chosen so both factors sit at Branin minimizers:
        // 15 x1 - 5 = pi, 15 x2 = 2.275 and likewise for the second factor.
        let x1 = (std::f64::consts::PI + 5.0) / 15.0;
        let x2 = 2.275 / 15.0;
        let y = branin_williams(&[x1, x2, x1, x2]).unwrap();
        assert_abs_diff_eq!(y, 0.158316, epsilon = 1e-4);
    }

    #[test]
    fn product_is_commutative_in_factors() {
        let a = branin_williams(&[0.3, 0.6, 0.8, 0.2]).unwrap();
        let b = branin_williams(&[0.8, 0.2, 0.3, 0.6]).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn branin_williams_rejects_out_of_box() {
        assert!(branin_williams(&[1.2, 0.5, 0.5, 0.5]).is_err());
        assert!(branin_williams(&[0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn f6_known_values() {
        assert_abs_diff_eq!(f6(&[0.0; 4], &[0.0; 3]).unwrap(), 0.0, epsilon = 1e-14);
        // xe = 0 kills every environmental term; only 5 xc1^2 survives.
        assert_abs_diff_eq!(f6(&[1.0, 0.0, 0.0, 0.0], &[0.0; 3]).unwrap(), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            f6(&[1.0, 2.0, 3.0, 4.0], &[1.0, -1.0, 2.0]).unwrap(),
            61.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            f6(&[0.5, -0.5, 1.0, -1.0], &[0.5, 0.5, -0.5]).unwrap(),
            4.375,
            epsilon = 1e-12
        );
    }

    #[test]
    fn f6_second_difference_in_third_environment_coordinate_is_zero() {
        // The objective is affine in xe3 (no quadratic term), so the second
        // difference along that coordinate vanishes.
        let xc = [1.0, -2.0, 0.5, 3.0];
        let h = 0.25;
        let f = |e3: f64| f6(&xc, &[0.5, -1.0, e3]).unwrap();
        let second = f(1.0 + h) - 2.0 * f(1.0) + f(1.0 - h);
        assert_abs_diff_eq!(second, 0.0, epsilon = 1e-10);
        // ... while the same probe along xe1 picks up the -xe1^2 curvature.
        let g = |e1: f64| f6(&xc, &[e1, -1.0, 1.0]).unwrap();
        let second1 = g(1.0 + h) - 2.0 * g(1.0) + g(1.0 - h);
        assert_abs_diff_eq!(second1, -2.0 * h * h, epsilon = 1e-10);
    }

    #[test]
    fn f6_rejects_out_of_box() {
        assert!(f6(&[5.5, 0.0, 0.0, 0.0], &[0.0; 3]).is_err());
        assert!(f6(&[0.0; 4], &[2.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn bw_distribution_matches_table() {
        let set = bw_distribution();
        assert_eq!(set.len(), 12);
        let mass_at = |x2: f64, x3: f64| -> f64 {
            for i in 0..set.len() {
                if set.points()[(i, 0)] == x2 && set.points()[(i, 1)] == x3 {
                    return set.weights()[i];
                }
            }
            panic!("support point ({x2}, {x3}) missing");
        };
        assert_eq!(mass_at(0.5, 0.4), 0.1750);
        assert_eq!(mass_at(0.25, 0.2), 0.0375);
        assert_eq!(mass_at(0.75, 0.8), 0.0375);
        assert_eq!(mass_at(0.5, 0.2), 0.0750);
        let total: f64 = set.weights().iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn brute_force_constant_function_returns_constant() {
        // A risk measure of a constant is that constant; probe via the toy
        // problem at a point where the objective is flat in w? No such point
        // exists, so check the invariant directly on empirical_risk instead
        // with a synthetic constant sample over the same support.
        let set = toy_distribution();
        let samples = vec![3.25; set.len()];
        let est = empirical_risk(&samples, set.weights().as_slice(), RiskSpec::cvar(0.7).unwrap())
            .unwrap();
        assert_abs_diff_eq!(est.value, 3.25, epsilon = 1e-15);
    }

    #[test]
    fn brute_force_cvar_dominates_var_on_grid() {
        let spec_var = ProblemSpec::branin_williams(RiskSpec::var(0.7).unwrap());
        let spec_cvar = ProblemSpec::branin_williams(RiskSpec::cvar(0.7).unwrap());
        let wset = oracle_wset(&spec_var).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let x = [i as f64 / 4.0, j as f64 / 4.0];
                let var = brute_force_risk(&spec_var, &x, &wset).unwrap();
                let cvar = brute_force_risk(&spec_cvar, &x, &wset).unwrap();
                assert!(cvar >= var - 1e-12, "CVaR {cvar} < VaR {var} at {x:?}");
            }
        }
    }

    #[test]
    fn transforms_round_trip_raw_domain() {
        let spec = ProblemSpec::f6(RiskSpec::cvar(0.75).unwrap());
        let t = spec.joint_transform();
        let raw = [3.2, -4.9, 0.1, 5.0, -1.5, 0.0, 2.0];
        let back = t.from_unit(&t.to_unit(&raw));
        for (a, b) in raw.iter().zip(back.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn recorded_optima_cover_benchmarks() {
        let spec = ProblemSpec::branin_williams(RiskSpec::var(0.7).unwrap());
        assert!(spec.true_optimum.is_some(), "product-of-Branins optimum missing");
        let toy = ProblemSpec::toy(RiskSpec::cvar(0.7).unwrap());
        assert!(toy.true_optimum.is_some(), "toy optimum missing");
        let f6p = ProblemSpec::f6(RiskSpec::cvar(0.75).unwrap());
        assert!(f6p.true_optimum.is_some(), "polynomial benchmark optimum missing");
    }

    #[test]
    fn recorded_bw_optimum_agrees_with_coarse_grid_within_one_percent() {
        let spec = ProblemSpec::branin_williams(RiskSpec::var(0.7).unwrap());
        let wset = oracle_wset(&spec).unwrap();
        let (_, coarse) = grid_minimize_risk(&spec, &wset, 60, 1).unwrap();
        let recorded = spec.true_optimum.unwrap();
        let rel = (coarse - recorded).abs() / recorded.abs().max(1e-12);
        assert!(rel < 0.01, "coarse grid {coarse} vs recorded {recorded} (rel {rel})");
        // The recorded value is a deeper search's minimum, so the coarse grid
        // cannot beat it.
        assert!(coarse >= recorded - 1e-9);
    }

    #[test]
    fn recorded_toy_optimum_agrees_with_dense_grid() {
        let spec = ProblemSpec::toy(RiskSpec::cvar(0.7).unwrap());
        let wset = oracle_wset(&spec).unwrap();
        let (_, dense) = grid_minimize_risk(&spec, &wset, 2000, 2).unwrap();
        let recorded = spec.true_optimum.unwrap();
        assert_abs_diff_eq!(dense, recorded, epsilon = 1e-6);
    }

    /// Regenerates `data/true_optima.json`. Run with
    /// `cargo test -p riskbo --release regenerate_true_optima -- --ignored --nocapture`
    /// and paste the printed JSON into the data file.
    #[test]
    #[ignore = "expensive; regenerates the bundled optima file"]
    fn regenerate_true_optima() {
        let mut out = Vec::new();
        let cases = [
            (ProblemSpec::branin_williams(RiskSpec::var(0.7).unwrap()), 100usize, 3usize),
            (ProblemSpec::branin_williams(RiskSpec::cvar(0.7).unwrap()), 100, 3),
            (ProblemSpec::toy(RiskSpec::cvar(0.7).unwrap()), 4000, 3),
            (ProblemSpec::f6(RiskSpec::cvar(0.75).unwrap()), 12, 5),
        ];
        for (spec, grid, refinements) in cases {
            let wset = oracle_wset(&spec).unwrap();
            let (x_grid, _) = grid_minimize_risk(&spec, &wset, grid, refinements).unwrap();
            let (x_star, value) =
                polish_risk_minimum(&spec, &wset, &x_grid, 0.05, 1e-10).unwrap();
            out.push(RecordedOptimum {
                problem: spec.name.clone(),
                x_star,
                value,
                method: format!(
                    "grid_minimize_risk(grid={grid}, refinements={refinements}) plus \
                     coordinate-descent polish to step 1e-10 on the {}-point oracle \
                     environment grid",
                    wset.len()
                ),
            });
        }
        println!("{}", serde_json::to_string_pretty(&out).unwrap());
    }

    #[test]
    fn by_name_resolves_and_rejects() {
        assert!(ProblemSpec::by_name("branin_williams", None).is_ok());
        assert!(ProblemSpec::by_name("f6", None).is_ok());
        assert!(ProblemSpec::by_name("toy", None).is_ok());
        assert!(ProblemSpec::by_name("nope", None).is_err());
    }

    /// Writes a one-shot python stub simulator and returns its config.
    fn stub_simulator(tag: &str, body: &str) -> SimulatorConfig {
        let path = std::env::temp_dir().join(format!("sim_stub_{}_{tag}.py", std::process::id()));
        std::fs::write(&path, body).unwrap();
        SimulatorConfig {
            command: vec!["python3".into(), path.to_string_lossy().into_owned()],
            timeout_s: 30.0,
        }
    }

    #[test]
    fn simulator_round_trip_sums_coordinates() {
        let cfg = stub_simulator(
            "sum",
            concat!(
                "import sys, json\n",
                "for line in sys.stdin:\n",
                "    r = json.loads(line)\n",
                "    print(json.dumps({'id': r['id'], 'y': r['x'][0] + r['w'][0]}), flush=True)\n",
            ),
        );
        let mut sim = SimulatorHandle::spawn(&cfg).unwrap();
        let y = sim.query(&[0.4], &[0.3], 7).unwrap();
        assert!((y - 0.7).abs() < 1e-12, "y = {y}");
        // Sequential queries stay matched to their requests.
        for k in 0..20 {
            let xk = k as f64 * 0.01;
            let y = sim.query(&[xk], &[1.0], k).unwrap();
            assert!((y - (xk + 1.0)).abs() < 1e-12, "query {k} returned {y}");
        }
    }

    #[test]
    fn simulator_malformed_response_is_a_protocol_error() {
        let cfg = stub_simulator(
            "garbage",
            "import sys\n\
             sys.stdin.readline()\n\
             print('not json', flush=True)\n",
        );
        let mut sim = SimulatorHandle::spawn(&cfg).unwrap();
        let err = sim.query(&[0.0], &[0.0], 0).unwrap_err();
        assert!(matches!(err, Error::Simulator(_)), "unexpected error: {err:?}");
    }

    #[test]
    fn simulator_mismatched_id_is_rejected() {
        let cfg = stub_simulator(
            "badid",
            "import sys, json\n\
             sys.stdin.readline()\n\
             print(json.dumps({'id': 999, 'y': 0.0}), flush=True)\n",
        );
        let mut sim = SimulatorHandle::spawn(&cfg).unwrap();
        let err = sim.query(&[0.0], &[0.0], 0).unwrap_err();
        assert!(matches!(err, Error::Simulator(_)), "unexpected error: {err:?}");
    }
}

