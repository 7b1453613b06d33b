//! Command-line front end for risk-measure Bayesian optimization.
//!
//! Subcommands: `run` one experiment, `suggest`/`recommend` from a persisted
//! history, `oracle` for brute-force risk surfaces, and `report`/`plot-data`
//! to aggregate result files across seeds.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use riskbo::harness::{
    self, aggregate_results, history_path, read_history, read_results, resolve_problem,
    smooth_aggregate, write_aggregate_csv, ConfigFile, ExperimentConfig, ProblemTable,
    Recommendation, ResultRow,
};
use riskbo::problems::{brute_force_risk, oracle_wset, ProblemSpec};

#[derive(Parser)]
#[command(
    name = "riskbo",
    about = "Bayesian optimization of value-at-risk and conditional value-at-risk objectives",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Experiment selection flags, shared by `run`, `suggest`, and `recommend`.
/// Command-line values override the config file.
#[derive(Args)]
struct RunFlags {
    /// TOML experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Problem name (e.g. branin_williams, f6, toy).
    #[arg(long)]
    problem: Option<String>,
    /// Risk level in [0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Risk measure: var or cvar.
    #[arg(long)]
    risk: Option<String>,
    /// Algorithm: rho_kg, rho_kg_apx, ei, ucb, kg_plain, random, rho_random.
    #[arg(long)]
    algorithm: Option<String>,
    /// Total objective-evaluation budget, including the initial design.
    #[arg(long)]
    budget: Option<usize>,
    /// Run seed; fully determines the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Result CSV path (the observation history lands next to it).
    #[arg(long)]
    output: Option<PathBuf>,
}

impl RunFlags {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ConfigFile::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ConfigFile::default(),
        };
        let problem = (self.problem.is_some() || self.alpha.is_some() || self.risk.is_some())
            .then(|| ProblemTable {
                name: self.problem.clone(),
                alpha: self.alpha,
                risk: self.risk.clone(),
            });
        let overrides = ConfigFile {
            problem,
            algorithm: self.algorithm.clone(),
            budget: self.budget,
            seed: self.seed,
            output: self.output.as_ref().map(|p| p.display().to_string()),
            acq: None,
            opt: None,
        };
        Ok(base.merge(&overrides).resolve()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute one experiment run and write its result files.
    Run(RunFlags),
    /// Propose the next candidate for a run persisted as a history CSV.
    Suggest {
        #[command(flatten)]
        flags: RunFlags,
        /// History CSV written by a previous `run`.
        #[arg(long)]
        history: PathBuf,
    },
    /// Recompute the recommended decision from a history CSV.
    Recommend {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        history: PathBuf,
    },
    /// Write the brute-force risk surface of a problem on a decision grid.
    Oracle {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        risk: Option<String>,
        /// Grid points per decision dimension.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Aggregate result files into mean +/- standard error per algorithm
    /// and budget position.
    Report {
        /// Result CSV files (one per run).
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Like report, smoothed with a window-3 moving average for plotting.
    PlotData {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run(flags) => cmd_run(&flags),
        Command::Suggest { flags, history } => cmd_suggest(&flags, &history),
        Command::Recommend { flags, history } => cmd_recommend(&flags, &history),
        Command::Oracle { problem, alpha, risk, grid, output } => {
            cmd_oracle(&problem, alpha, risk.as_deref(), grid, &output)
        }
        Command::Report { files, output } => cmd_aggregate(&files, &output, false),
        Command::PlotData { files, output } => cmd_aggregate(&files, &output, true),
    }
}

fn cmd_run(flags: &RunFlags) -> anyhow::Result<()> {
    let config = flags.resolve()?;
    let run_id = config.run_id();
    let output = config.output.clone();
    let state = harness::run(config)?;
    let rec = state.recommendation();
    eprintln!(
        "{run_id}: {} evaluations, {} iterations, {} fallback(s)",
        state.evals_used, state.iteration, state.fallbacks
    );
    println!("{}", recommendation_json(rec));
    if let Some(path) = output {
        eprintln!("results: {}", path.display());
        eprintln!("history: {}", history_path(&path).display());
    }
    Ok(())
}

fn load_run(flags: &RunFlags, history: &Path) -> anyhow::Result<(ExperimentConfig, Vec<harness::Observation>)> {
    let config = flags.resolve()?;
    let observations = read_history(history)
        .with_context(|| format!("loading history {}", history.display()))?;
    Ok((config, observations))
}

fn cmd_suggest(flags: &RunFlags, history: &Path) -> anyhow::Result<()> {
    let (config, observations) = load_run(flags, history)?;
    let suggestion = harness::suggest(&config, observations)?;
    println!(
        "{}",
        serde_json::json!({
            "x": suggestion.x,
            "w": suggestion.w,
            "fallback": suggestion.fallback,
        })
    );
    Ok(())
}

fn cmd_recommend(flags: &RunFlags, history: &Path) -> anyhow::Result<()> {
    let (config, observations) = load_run(flags, history)?;
    let rec = harness::recommend_from(&config, observations)?;
    println!("{}", recommendation_json(&rec));
    Ok(())
}

fn recommendation_json(rec: &Recommendation) -> String {
    serde_json::json!({
        "iteration": rec.iteration,
        "evals_used": rec.evals_used,
        "x": rec.x,
        "posterior_risk_estimate": rec.posterior_risk_estimate,
        "true_risk": rec.true_risk,
        "gap": rec.gap,
    })
    .to_string()
}

fn cmd_oracle(
    name: &str,
    alpha: Option<f64>,
    risk: Option<&str>,
    grid: usize,
    output: &Path,
) -> anyhow::Result<()> {
    let problem = resolve_problem(name, alpha, risk)?;
    let surface = risk_surface_csv(&problem, grid)?;
    if let Some(dir) = output.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(output, surface)?;
    eprintln!("risk surface of {}: {}", problem.name, output.display());
    Ok(())
}

/// Brute-force risk on an inclusive lattice with `grid` points per decision
/// dimension, as CSV `x_1,...,x_d,risk`.
fn risk_surface_csv(problem: &ProblemSpec, grid: usize) -> anyhow::Result<String> {
    let dx = problem.dx();
    if grid < 2 {
        bail!("the grid needs at least 2 points per dimension");
    }
    let total = grid.checked_pow(dx as u32).filter(|t| *t <= 2_000_000);
    let Some(total) = total else {
        bail!("a {grid}^{dx} grid is too large; pass a smaller --grid");
    };
    let wset = oracle_wset(problem)?;
    let mut out = String::new();
    out.push_str(&(1..=dx).map(|j| format!("x_{j}")).collect::<Vec<_>>().join(","));
    out.push_str(",risk\n");
    let mut x = vec![0.0; dx];
    for flat in 0..total {
        let mut rem = flat;
        for (j, (lo, hi)) in problem.x_bounds.iter().enumerate() {
            let idx = rem % grid;
            rem /= grid;
            x[j] = lo + (hi - lo) * idx as f64 / (grid - 1) as f64;
        }
        let risk = brute_force_risk(problem, &x, &wset)?;
        for v in &x {
            out.push_str(&format!("{v:.16e},"));
        }
        out.push_str(&format!("{risk:.16e}\n"));
    }
    Ok(out)
}

fn cmd_aggregate(files: &[PathBuf], output: &Path, smooth: bool) -> anyhow::Result<()> {
    let mut rows: Vec<ResultRow> = Vec::new();
    for file in files {
        rows.extend(
            read_results(file).with_context(|| format!("loading results {}", file.display()))?,
        );
    }
    if rows.is_empty() {
        bail!("the result files contain no rows");
    }
    let mut points = aggregate_results(&rows);
    if smooth {
        points = smooth_aggregate(&points);
    }
    write_aggregate_csv(&points, output)?;
    eprintln!(
        "aggregated {} rows from {} file(s) into {} points: {}",
        rows.len(),
        files.len(),
        points.len(),
        output.display()
    );
    Ok(())
}
