//! Experiment sweeps: every (point, seed, method) task runs independently in
//! a worker pool; the tables are assembled afterwards in a fixed order.

use std::io::Write;
use std::path::{Path, PathBuf};

use edgetune_core::model::Scenario;
use edgetune_core::orchestrator::SolveConfig;
use edgetune_core::scenario_io::{generate, write_atomic, write_results, GenParams, ResultRow};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{run_method, BenchError, Method, MethodRun};

/// The parameter varied across sweep points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "param", content = "values", rename_all = "snake_case")]
pub enum Axis {
    Fixed,
    OmegaT(Vec<f64>),
    OmegaE(Vec<f64>),
    OmegaS(Vec<f64>),
    Users(Vec<usize>),
    Servers(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub base: GenParams,
    pub axis: Axis,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub solver: SolveConfig,
    /// Also collect per-iteration traces of the proposed method.
    pub traces: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            base: GenParams::default(),
            axis: Axis::Fixed,
            seeds: (0..5).collect(),
            methods: Method::ALL.to_vec(),
            solver: SolveConfig::default(),
            traces: false,
        }
    }
}

impl SweepSpec {
    /// Generator parameters of every sweep point (seed not yet applied).
    pub fn points(&self) -> Vec<GenParams> {
        let with = |edit: &dyn Fn(&mut GenParams)| {
            let mut gp = self.base.clone();
            edit(&mut gp);
            gp
        };
        match &self.axis {
            Axis::Fixed => vec![self.base.clone()],
            Axis::OmegaT(v) => v.iter().map(|&x| with(&|g| g.omega_t = x)).collect(),
            Axis::OmegaE(v) => v.iter().map(|&x| with(&|g| g.omega_e = x)).collect(),
            Axis::OmegaS(v) => v.iter().map(|&x| with(&|g| g.omega_s = x)).collect(),
            Axis::Users(v) => v.iter().map(|&x| with(&|g| g.num_users = x)).collect(),
            Axis::Servers(v) => v.iter().map(|&x| with(&|g| g.num_servers = x)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.seeds.is_empty() || self.methods.is_empty() {
            return Err(BenchError::Sweep("seeds and methods must be nonempty".into()));
        }
        let points = self.points();
        if points.is_empty() {
            return Err(BenchError::Sweep("axis has no values".into()));
        }
        for gp in &points {
            gp.validate()?;
        }
        self.solver.inner.validate()?;
        self.solver
            .penalty
            .validate()
            .map_err(|e| BenchError::Solve(edgetune_core::orchestrator::SolveError::Association(e)))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    NotConverged,
    Failed,
}

/// Sidecar row: status of every task, plus the mean end-to-end delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusRow {
    pub point: usize,
    pub seed: u64,
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub status: Status,
    pub avg_delay_s: f64,
    pub message: String,
}

/// Per-iteration convergence record of the proposed method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub point: usize,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    /// `ao` rows carry `K`; `cccp` rows carry the penalized association objective.
    pub stage: String,
    pub round: usize,
    pub iteration: usize,
    pub value: f64,
    pub rho: f64,
    pub binarity_gap: f64,
}

#[derive(Debug, Clone)]
pub struct TaskResult {
    pub point: usize,
    pub seed: u64,
    pub method: Method,
    pub scenario_size: (usize, usize),
    pub outcome: Result<(ResultRow, MethodRun), String>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutput {
    /// One row per successful task, sorted by point, seed, method.
    pub rows: Vec<ResultRow>,
    pub status: Vec<StatusRow>,
    pub traces: Vec<TraceRow>,
    pub tasks: Vec<TaskResult>,
}

impl SweepOutput {
    pub fn all_ok(&self) -> bool {
        self.status.iter().all(|s| s.status == Status::Ok)
    }
}

/// Convergence records of one run.
pub fn trace_rows(point: usize, seed: u64, s: &Scenario, run: &MethodRun) -> Vec<TraceRow> {
    let (n, m) = (s.num_users(), s.num_servers());
    let mut out = Vec::new();
    for (round, t) in run.ao_traces.iter().enumerate() {
        for (iteration, &value) in t.k_values.iter().enumerate() {
            out.push(TraceRow {
                point,
                seed,
                n,
                m,
                stage: "ao".into(),
                round,
                iteration,
                value,
                rho: f64::NAN,
                binarity_gap: f64::NAN,
            });
        }
    }
    for (round, c) in run.cccp_rounds.iter().enumerate() {
        for (i, &value) in c.trace.penalized.iter().enumerate() {
            out.push(TraceRow {
                point,
                seed,
                n,
                m,
                stage: "cccp".into(),
                round,
                iteration: i + 1,
                value,
                rho: c.trace.rho[i],
                binarity_gap: c.trace.gap[i],
            });
        }
    }
    out
}

/// Runs the sweep on `jobs` worker threads (0 = all cores). Scenario
/// generation errors fail the whole sweep; solver failures are recorded and
/// the run continues.
pub fn run_sweep(spec: &SweepSpec, jobs: usize) -> Result<SweepOutput, BenchError> {
    spec.validate()?;
    let points = spec.points();
    let mut scenarios = Vec::new();
    for (p, gp) in points.iter().enumerate() {
        for &seed in &spec.seeds {
            let gp = GenParams { seed, ..gp.clone() };
            scenarios.push((p, seed, generate(&gp)?));
        }
    }
    let tasks: Vec<(usize, Method)> = (0..scenarios.len())
        .flat_map(|i| spec.methods.iter().map(move |&m| (i, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| BenchError::Sweep(format!("worker pool: {e}")))?;
    let mut results: Vec<TaskResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(i, method)| {
                let (point, seed, ref s) = scenarios[i];
                let outcome = run_method(s, method, &spec.solver, seed)
                    .map(|run| (run.row(seed, s), run))
                    .map_err(|e| e.to_string());
                TaskResult {
                    point,
                    seed,
                    method,
                    scenario_size: (s.num_users(), s.num_servers()),
                    outcome,
                }
            })
            .collect()
    });
    results.sort_by_key(|t| (t.point, t.seed, t.method));
    let mut out = SweepOutput::default();
    for t in &results {
        let (n, m) = t.scenario_size;
        let (status, avg, message) = match &t.outcome {
            Ok((row, run)) => {
                out.rows.push(row.clone());
                if spec.traces && t.method == Method::Proposed {
                    let s = &scenarios.iter().find(|(p, seed, _)| *p == t.point && *seed == t.seed).unwrap().2;
                    out.traces.extend(trace_rows(t.point, t.seed, s, run));
                }
                let status = if run.converged { Status::Ok } else { Status::NotConverged };
                (status, run.avg_delay_s, String::new())
            }
            Err(e) => (Status::Failed, f64::NAN, e.clone()),
        };
        out.status.push(StatusRow {
            point: t.point,
            seed: t.seed,
            method: t.method.name().into(),
            n,
            m,
            status,
            avg_delay_s: avg,
            message,
        });
    }
    out.tasks = results;
    Ok(out)
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(edgetune_core::scenario_io::IoError::from)?;
    }
    w.into_inner().map_err(|e| BenchError::Sweep(format!("csv buffer: {e}")))
}

/// `results.csv` → `results.<suffix>.csv`.
pub fn sidecar_path(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

/// Writes the results table, the status sidecar and (when collected) traces.
pub fn write_sweep(out: &Path, sweep: &SweepOutput) -> Result<(), BenchError> {
    let mut buf = Vec::new();
    write_results(&mut buf, &sweep.rows)?;
    write_atomic(out, &buf)?;
    write_atomic(&sidecar_path(out, "status"), &csv_bytes(&sweep.status)?)?;
    if !sweep.traces.is_empty() {
        write_atomic(&sidecar_path(out, "trace"), &csv_bytes(&sweep.traces)?)?;
    }
    Ok(())
}

/// Writes trace rows as CSV to any sink.
pub fn write_traces<W: Write>(out: W, rows: &[TraceRow]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(edgetune_core::scenario_io::IoError::from)?;
    }
    w.flush().map_err(|e| BenchError::Sweep(format!("trace output: {e}")))?;
    Ok(())
}
