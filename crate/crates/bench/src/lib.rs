//! Baselines, sweeps and trace dumps around the edgetune planner.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use edgetune_core::assoc_solver::{greedy_association, random_association};
use edgetune_core::fpcore::{objective_h, CostModel};
use edgetune_core::inner_solver::{ao_solve_p3, AoTrace, InnerConfig};
use edgetune_core::model::{self, Decision, ObjectiveBreakdown, Scenario};
use edgetune_core::orchestrator::{self, CccpRound, SolveConfig, SolveError};
use edgetune_core::scenario_io::ResultRow;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod sweep;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    AlternatingOpt,
    AlphaOnly,
    ResourceOnly,
    GreedyAssoc,
    RandomAssoc,
    LocalOnly,
    EdgeOnly,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Proposed,
        Method::AlternatingOpt,
        Method::AlphaOnly,
        Method::ResourceOnly,
        Method::GreedyAssoc,
        Method::RandomAssoc,
        Method::LocalOnly,
        Method::EdgeOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::AlternatingOpt => "alternating_opt",
            Method::AlphaOnly => "alpha_only",
            Method::ResourceOnly => "resource_only",
            Method::GreedyAssoc => "greedy_assoc",
            Method::RandomAssoc => "random_assoc",
            Method::LocalOnly => "local_only",
            Method::EdgeOnly => "edge_only",
        }
    }

    fn index(self) -> u64 {
        Method::ALL.iter().position(|&m| m == self).unwrap_or(0) as u64
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| BenchError::UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Io(#[from] edgetune_core::scenario_io::IoError),
    #[error("invalid sweep: {0}")]
    Sweep(String),
}

impl From<edgetune_core::inner_solver::SolverError> for BenchError {
    fn from(e: edgetune_core::inner_solver::SolverError) -> Self {
        BenchError::Solve(SolveError::Continuous(e))
    }
}

impl BenchError {
    /// Whether the error comes from invalid input rather than the solver.
    pub fn is_validation(&self) -> bool {
        use edgetune_core::inner_solver::SolverError;
        match self {
            BenchError::UnknownMethod(_) | BenchError::Sweep(_) | BenchError::Model(_) | BenchError::Io(_) => true,
            BenchError::Solve(SolveError::Scenario(_)) => true,
            BenchError::Solve(SolveError::Continuous(SolverError::Config(_) | SolverError::Model(_))) => true,
            BenchError::Solve(SolveError::Association(edgetune_core::assoc_solver::AssocError::Config(_))) => true,
            _ => false,
        }
    }
}

/// Outcome of one method on one scenario.
#[derive(Debug, Clone, Serialize)]
pub struct MethodRun {
    pub method: Method,
    pub decision: Decision,
    /// Objective under the weights the method was evaluated with.
    pub breakdown: ObjectiveBreakdown,
    /// Weights used for evaluation (`local_only` drops the stability weight).
    pub omega: [f64; 3],
    /// Mean over users of local compute + uplink + edge compute delay.
    pub avg_delay_s: f64,
    /// Sum of the users' stability bounds; infinite when a user trains all
    /// layers locally.
    pub stability_bound: f64,
    pub outer_rounds: usize,
    pub ao_iters: usize,
    pub cccp_iters: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    pub ao_traces: Vec<AoTrace>,
    pub cccp_rounds: Vec<CccpRound>,
    #[serde(skip)]
    pub runtime: Duration,
}

impl MethodRun {
    pub fn objective(&self) -> f64 {
        self.breakdown.total
    }

    pub fn row(&self, seed: u64, s: &Scenario) -> ResultRow {
        ResultRow {
            seed,
            method: self.method.name().into(),
            n: s.num_users(),
            m: s.num_servers(),
            omega_t: self.omega[0],
            omega_e: self.omega[1],
            omega_s: self.omega[2],
            energy_j: self.breakdown.energy_j,
            delay_s: self.breakdown.delay_s,
            stability_bound: self.stability_bound,
            objective: self.breakdown.total,
            outer_rounds: self.outer_rounds,
            ao_iters: self.ao_iters,
            cccp_iters: self.cccp_iters,
            kkt_residual: self.kkt_residual,
            runtime_ms: self.runtime.as_secs_f64() * 1e3,
        }
    }
}

/// RNG of the random baselines: the scenario seed, on a stream reserved for
/// the method.
pub fn baseline_rng(seed: u64, method: Method) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1000 + method.index());
    rng
}

struct Raw {
    decision: Decision,
    outer_rounds: usize,
    ao_traces: Vec<AoTrace>,
    cccp_rounds: Vec<CccpRound>,
    kkt_residual: f64,
    converged: bool,
}

impl From<orchestrator::Solution> for Raw {
    fn from(s: orchestrator::Solution) -> Self {
        Raw {
            decision: s.decision,
            outer_rounds: s.outer_rounds,
            ao_traces: s.ao_traces,
            cccp_rounds: s.cccp_rounds,
            kkt_residual: s.kkt_residual,
            converged: s.converged,
        }
    }
}

/// Runs `method` on `scenario`; `seed` drives the random baselines.
pub fn run_method(scenario: &Scenario, method: Method, cfg: &SolveConfig, seed: u64) -> Result<MethodRun, BenchError> {
    scenario.validate()?;
    let start = Instant::now();
    let mut eval_scenario = scenario.clone();
    let fixed = SolveConfig {
        associate: false,
        ..*cfg
    };
    let raw: Raw = match method {
        Method::Proposed => orchestrator::solve(scenario, cfg)?.into(),
        Method::GreedyAssoc => orchestrator::solve(scenario, &fixed)?.into(),
        Method::RandomAssoc => {
            let mut rng = baseline_rng(seed, method);
            let assoc = random_association(scenario.num_users(), scenario.num_servers(), &mut rng);
            orchestrator::solve_from(scenario, &model::midpoint_decision(scenario, &assoc), &fixed)?.into()
        }
        Method::AlternatingOpt => alternating_opt(scenario, &cfg.inner),
        Method::AlphaOnly => alpha_only(scenario, &mut baseline_rng(seed, method)),
        Method::ResourceOnly => {
            let mut rng = baseline_rng(seed, method);
            let hi = top_alpha(scenario);
            let mut init = model::midpoint_decision(scenario, &greedy_association(scenario));
            for a in &mut init.alpha {
                *a = f64::from(rng.random_range(1..=hi));
            }
            fixed_alpha(scenario, init, &cfg.inner)?
        }
        Method::EdgeOnly => {
            let mut init = model::midpoint_decision(scenario, &greedy_association(scenario));
            init.alpha.fill(1.0);
            fixed_alpha(scenario, init, &cfg.inner)?
        }
        Method::LocalOnly => {
            // Training every layer locally puts the stability bound on its
            // pole, so the method is evaluated without the stability weight.
            eval_scenario.weights.omega_s = 0.0;
            let mut init = model::midpoint_decision(&eval_scenario, &greedy_association(&eval_scenario));
            init.alpha.fill(eval_scenario.llm.layers());
            fixed_alpha(&eval_scenario, init, &cfg.inner)?
        }
    };
    model::check_feasibility(&eval_scenario, &raw.decision, 1e-8).map_err(SolveError::Infeasible)?;
    let breakdown = model::evaluate(&eval_scenario, &raw.decision)?;
    let metrics = model::user_metrics(&eval_scenario, &raw.decision)?;
    let avg_delay_s = metrics.iter().map(|m| m.end_to_end_delay).sum::<f64>() / metrics.len() as f64;
    let stability_bound = metrics.iter().map(|m| m.bound).sum();
    let w = &eval_scenario.weights;
    Ok(MethodRun {
        method,
        omega: [w.omega_t, w.omega_e, w.omega_s],
        avg_delay_s,
        stability_bound,
        outer_rounds: raw.outer_rounds,
        ao_iters: raw.ao_traces.iter().map(AoTrace::iterations).sum(),
        cccp_iters: raw.cccp_rounds.iter().map(|r| r.iterations.iter().sum::<usize>()).sum(),
        kkt_residual: raw.kkt_residual,
        converged: raw.converged,
        ao_traces: raw.ao_traces,
        cccp_rounds: raw.cccp_rounds,
        decision: raw.decision,
        breakdown,
        runtime: start.elapsed(),
    })
}

/// Largest integer split point allowed under the scenario's weights.
fn top_alpha(s: &Scenario) -> u32 {
    if s.weights.omega_s > 0.0 {
        s.llm.total_layers - 1
    } else {
        s.llm.total_layers
    }
}

/// Resources by AO with the split points held at those of `init`.
fn fixed_alpha(s: &Scenario, init: Decision, inner: &InnerConfig) -> Result<Raw, BenchError> {
    let cfg = InnerConfig {
        freeze_alpha: true,
        ..*inner
    };
    let out = ao_solve_p3(s, &init, &cfg)?;
    Ok(Raw {
        decision: out.decision,
        outer_rounds: 0,
        ao_traces: vec![out.trace],
        cccp_rounds: Vec::new(),
        kkt_residual: out.kkt_residual,
        converged: out.converged,
    })
}

/// User `n`'s share of `H`.
fn user_term(model: &CostModel, dec: &Decision, n: usize) -> f64 {
    let alpha = dec.alpha[n];
    let mut h = alpha * model.local[n].value(dec.freq_user[n]) + model.stability_term(n, alpha);
    for m in dec.servers_of(n) {
        let chi = dec.assoc[(n, m)];
        if model.layers > alpha {
            h += chi * (model.layers - alpha) * model.edge(n, m).value(dec.freq_edge[(n, m)]);
        }
        if model.energy_weight > 0.0 {
            let r = model.rate(n, m, dec.power[n], dec.bandwidth[(n, m)]);
            h += model.energy_weight * chi * model.bits[n] * dec.power[n] / r;
        }
    }
    h
}

/// Best integer split point per user for the resources in `dec`.
fn best_integer_alpha(s: &Scenario, model: &CostModel, dec: &mut Decision) {
    for n in 0..s.num_users() {
        let mut best = (f64::INFINITY, dec.alpha[n]);
        for a in 1..=top_alpha(s) {
            dec.alpha[n] = f64::from(a);
            let v = user_term(model, dec, n);
            if v < best.0 {
                best = (v, f64::from(a));
            }
        }
        dec.alpha[n] = best.1;
    }
}

/// Random feasible resources, greedy association, split points optimized.
fn alpha_only(s: &Scenario, rng: &mut ChaCha8Rng) -> Raw {
    let model = CostModel::new(s);
    let mut dec = model::midpoint_decision(s, &greedy_association(s));
    for (n, user) in s.users.iter().enumerate() {
        dec.power[n] = user.p_max * rng.random_range(0.01..=1.0);
        dec.freq_user[n] = user.f_max * rng.random_range(0.01..=1.0);
    }
    for (m, server) in s.servers.iter().enumerate() {
        let users = dec.users_of(m);
        let wb: Vec<f64> = users.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let wf: Vec<f64> = users.iter().map(|_| rng.random_range(0.05..1.0)).collect();
        let (sb, sf): (f64, f64) = (wb.iter().sum(), wf.iter().sum());
        for (i, &n) in users.iter().enumerate() {
            dec.bandwidth[(n, m)] = server.b_max * wb[i] / sb;
            dec.freq_edge[(n, m)] = server.f_max * wf[i] / sf;
        }
    }
    best_integer_alpha(s, &model, &mut dec);
    Raw {
        decision: dec,
        outer_rounds: 0,
        ao_traces: Vec::new(),
        cccp_rounds: Vec::new(),
        kkt_residual: f64::NAN,
        converged: true,
    }
}

/// Golden-section minimizer of a unimodal `f` on `[lo, hi]`.
fn golden(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(lo, f(lo)), (mid, f(mid)), (hi, f(hi))]
        .into_iter()
        .fold((mid, f64::INFINITY), |best, (x, v)| if v < best.1 { (x, v) } else { best })
        .0
}

/// One coordinate pass over the pairwise splits of a server's capacity.
fn pairwise_splits(
    model: &CostModel,
    dec: &mut Decision,
    users: &[usize],
    m: usize,
    get: fn(&Decision, usize, usize) -> f64,
    set: fn(&mut Decision, usize, usize, f64),
) {
    for w in users.windows(2) {
        let (i, j) = (w[0], w[1]);
        let old = get(dec, i, m);
        let total = old + get(dec, j, m);
        let mut pair = |x: f64| {
            set(dec, i, m, x);
            set(dec, j, m, total - x);
            user_term(model, dec, i) + user_term(model, dec, j)
        };
        let before = pair(old);
        let x = golden(&mut pair, 1e-6 * total, (1.0 - 1e-6) * total, 60);
        let keep = if pair(x) < before { x } else { old };
        set(dec, i, m, keep);
        set(dec, j, m, total - keep);
    }
}

/// Plain block coordinate descent on `H` at the greedy association: the
/// split points, then the resources one coordinate at a time. No surrogate.
fn alternating_opt(s: &Scenario, inner: &InnerConfig) -> Raw {
    let model = CostModel::new(s);
    let mut dec = model::midpoint_decision(s, &greedy_association(s));
    let mut h = objective_h(&model, &dec);
    let mut trace = AoTrace {
        h_values: vec![h],
        ..AoTrace::default()
    };
    let mut converged = false;
    let sweep = |dec: &mut Decision, with_alpha: bool| {
        for n in 0..s.num_users() {
            if with_alpha {
                let a = golden(
                    |a| {
                        dec.alpha[n] = a;
                        user_term(&model, dec, n)
                    },
                    1.0,
                    model.alpha_max,
                    60,
                );
                dec.alpha[n] = a;
            }
            let hi = model.f_max_user[n];
            let f = golden(
                |f| {
                    dec.freq_user[n] = f;
                    user_term(&model, dec, n)
                },
                model::FREQ_FLOOR_FRACTION * hi,
                hi,
                60,
            );
            dec.freq_user[n] = f;
            let hi = model.p_max[n];
            let p = golden(
                |p| {
                    dec.power[n] = p;
                    user_term(&model, dec, n)
                },
                model::POWER_FLOOR_FRACTION * hi,
                hi,
                60,
            );
            dec.power[n] = p;
        }
        for m in 0..s.num_servers() {
            let users = dec.users_of(m);
            pairwise_splits(&model, dec, &users, m, |d, n, m| d.bandwidth[(n, m)], |d, n, m, x| d.bandwidth[(n, m)] = x);
            pairwise_splits(&model, dec, &users, m, |d, n, m| d.freq_edge[(n, m)], |d, n, m, x| d.freq_edge[(n, m)] = x);
        }
    };
    for _ in 0..inner.max_ao_iters {
        sweep(&mut dec, true);
        let next = objective_h(&model, &dec);
        trace.h_values.push(next);
        trace.block_sweeps.push(1);
        let done = (h - next).abs() < inner.ao_tol * (1.0 + h.abs());
        h = next;
        if done {
            converged = true;
            break;
        }
    }
    let mut rounded = orchestrator::round_alpha(s, &dec);
    best_integer_alpha(s, &model, &mut rounded);
    sweep(&mut rounded, false);
    Raw {
        decision: rounded,
        outer_rounds: 0,
        ao_traces: vec![trace],
        cccp_rounds: Vec::new(),
        kkt_residual: f64::NAN,
        converged,
    }
}
