use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use edgetune_bench::sweep::{run_sweep, trace_rows, write_sweep, write_traces, SweepSpec};
use edgetune_bench::{run_method, BenchError, Method};
use edgetune_core::model::Scenario;
use edgetune_core::orchestrator::SolveConfig;
use edgetune_core::scenario_io::{self, generate, load_json, load_scenario, save_scenario, write_atomic, GenParams};
use edgetune_core::stability_lab::{self, LabConfig};

/// Layer-split fine-tuning planner for edge networks.
///
/// The results CSV `delay_s` column is the objective's compute-delay total.
/// The status sidecar's `avg_delay_s` is the mean over users of the
/// end-to-end delay: local compute, uplink transfer and edge compute.
#[derive(Parser)]
#[command(name = "edgetune", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a scenario and save it as JSON.
    Generate(GenerateArgs),
    /// Run one method on one scenario.
    Solve(SolveArgs),
    /// Run a sweep and write the results CSV plus a status sidecar.
    Sweep(SweepArgs),
    /// Replace-one stability experiments.
    Stability(StabilityArgs),
    /// Per-iteration convergence trace of the proposed method.
    Trace(TraceArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; generated from --n/--m/--seed when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    /// Objective weights as `wt,we,ws`.
    #[arg(long, value_parser = parse_weights)]
    weights: Option<[f64; 3]>,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long)]
    restarts: Option<usize>,
    /// Relative AO stopping tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Cap on AO iterations.
    #[arg(long = "max-iter")]
    max_iter: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator parameters JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = parse_weights)]
    weights: Option<[f64; 3]>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "proposed")]
    method: String,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep spec JSON; defaults to every method on seeds 0..5 at N=50, M=10.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Run a single seed instead of the spec's list.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, value_parser = parse_weights)]
    weights: Option<[f64; 3]>,
    /// Restrict to one method.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args)]
struct StabilityArgs {
    /// Lab grid JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_weights(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if parts.iter().all(|w| w.is_finite() && *w >= 0.0) => Ok([a, b, c]),
        _ => Err("expected three non-negative numbers `wt,we,ws`".into()),
    }
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(anyhow::Error),
    NotConverged(String),
    Other(anyhow::Error),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        if e.is_validation() {
            Failure::Validation(e.into())
        } else {
            Failure::Other(e.into())
        }
    }
}

impl From<scenario_io::IoError> for Failure {
    fn from(e: scenario_io::IoError) -> Self {
        match e {
            scenario_io::IoError::Io { .. } => Failure::Other(e.into()),
            _ => Failure::Validation(e.into()),
        }
    }
}

fn apply_solver(cfg: &mut SolveConfig, a: &SolverArgs) {
    if let Some(r) = a.restarts {
        cfg.penalty.restarts = r;
    }
    if let Some(t) = a.tol {
        cfg.inner.ao_tol = t;
    }
    if let Some(i) = a.max_iter {
        cfg.inner.max_ao_iters = i;
    }
}

fn check_solver(cfg: &SolveConfig) -> Result<(), Failure> {
    cfg.inner.validate().map_err(|e| Failure::Validation(e.into()))?;
    cfg.penalty.validate().map_err(|e| Failure::Validation(e.into()))
}

fn scenario_from(a: &ScenarioArgs) -> Result<Scenario, Failure> {
    let mut s = match &a.config {
        Some(path) => load_scenario(path)?,
        None => {
            let gp = GenParams::with_size(a.n.unwrap_or(50), a.m.unwrap_or(10), a.seed);
            generate(&gp)?
        }
    };
    if let Some([wt, we, ws]) = a.weights {
        s.weights.omega_t = wt;
        s.weights.omega_e = we;
        s.weights.omega_s = ws;
    }
    s.validate().map_err(|e| Failure::Validation(e.into()))?;
    Ok(s)
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, bytes).map_err(|e| Failure::Other(e.into())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes).map_err(|e| Failure::Other(e.into()))
        }
    }
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let mut gp: GenParams = match &a.config {
        Some(p) => load_json(p)?,
        None => GenParams::default(),
    };
    if let Some(seed) = a.seed {
        gp.seed = seed;
    }
    if let Some(n) = a.n {
        gp.num_users = n;
    }
    if let Some(m) = a.m {
        gp.num_servers = m;
    }
    if let Some([wt, we, ws]) = a.weights {
        (gp.omega_t, gp.omega_e, gp.omega_s) = (wt, we, ws);
    }
    let s = generate(&gp)?;
    save_scenario(&a.out, &s)?;
    Ok(())
}

fn cmd_solve(a: SolveArgs) -> Result<(), Failure> {
    let method: Method = a.method.parse().map_err(|e: BenchError| Failure::Validation(e.into()))?;
    let s = scenario_from(&a.scenario)?;
    let mut cfg = SolveConfig::default();
    apply_solver(&mut cfg, &a.solver);
    check_solver(&cfg)?;
    let run = run_method(&s, method, &cfg, a.scenario.seed)?;
    let bytes = match a.format {
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(&run).map_err(|e| Failure::Other(e.into()))?;
            v.push(b'\n');
            v
        }
        Format::Csv => {
            let mut v = Vec::new();
            scenario_io::write_results(&mut v, &[run.row(a.scenario.seed, &s)])?;
            v
        }
    };
    emit(a.out.as_deref(), &bytes)?;
    if !run.converged {
        return Err(Failure::NotConverged(format!("{method} did not reach its tolerance")));
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let mut spec: SweepSpec = match &a.config {
        Some(p) => load_json(p)?,
        None => SweepSpec::default(),
    };
    apply_solver(&mut spec.solver, &a.solver);
    if let Some(seed) = a.seed {
        spec.seeds = vec![seed];
    }
    if let Some(n) = a.n {
        spec.base.num_users = n;
    }
    if let Some(m) = a.m {
        spec.base.num_servers = m;
    }
    if let Some([wt, we, ws]) = a.weights {
        (spec.base.omega_t, spec.base.omega_e, spec.base.omega_s) = (wt, we, ws);
    }
    if let Some(name) = &a.method {
        spec.methods = vec![name.parse().map_err(|e: BenchError| Failure::Validation(e.into()))?];
    }
    let out = run_sweep(&spec, a.jobs)?;
    write_sweep(&a.out, &out)?;
    let bad: Vec<String> = out
        .status
        .iter()
        .filter(|s| s.status != edgetune_bench::sweep::Status::Ok)
        .map(|s| format!("point {} seed {} {}: {:?} {}", s.point, s.seed, s.method, s.status, s.message))
        .collect();
    if !bad.is_empty() {
        return Err(Failure::NotConverged(bad.join("\n")));
    }
    Ok(())
}

fn cmd_stability(a: StabilityArgs) -> Result<(), Failure> {
    let mut cfg: LabConfig = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(Failure::Other)?;
            serde_json::from_str(&text).map_err(|e| Failure::Validation(anyhow!("{}: {e}", p.display())))?
        }
        None => LabConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let cells = stability_lab::verify_as_bound(&cfg).map_err(|e| match e {
        stability_lab::LabError::Alpha(_) | stability_lab::LabError::Task(_) => Failure::Validation(e.into()),
        _ => Failure::Other(e.into()),
    })?;
    let mut buf = Vec::new();
    stability_lab::write_report(&mut buf, &cells).map_err(|e| Failure::Other(e.into()))?;
    emit(Some(&a.out), &buf)?;
    for c in &cells {
        eprintln!(
            "k={:<4} alpha={:<5} L={:<4} max_gap={:.3e} bound={:.3e}",
            c.k, c.alpha, c.lipschitz, c.max_gap, c.bound
        );
    }
    Ok(())
}

fn cmd_trace(a: TraceArgs) -> Result<(), Failure> {
    let s = scenario_from(&a.scenario)?;
    let mut cfg = SolveConfig::default();
    apply_solver(&mut cfg, &a.solver);
    check_solver(&cfg)?;
    let run = run_method(&s, Method::Proposed, &cfg, a.scenario.seed)?;
    let rows = trace_rows(0, a.scenario.seed, &s, &run);
    let mut buf = Vec::new();
    write_traces(&mut buf, &rows)?;
    emit(a.out.as_deref(), &buf)?;
    if !run.converged {
        return Err(Failure::NotConverged("proposed method did not reach its tolerance".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Stability(a) => cmd_stability(a),
        Cmd::Trace(a) => cmd_trace(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("not converged (partial output written):\n{msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
