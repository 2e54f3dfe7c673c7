//! Full planner: alternate continuous allocation and association, then round
//! the split points and polish.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assoc_solver::{self, AssocError, AssocLp, CccpTrace, PenaltyConfig};
use crate::fpcore::{objective_h, CostModel};
use crate::inner_solver::{self, AoTrace, InnerConfig, SolverError};
use crate::matrix::Matrix;
use crate::model::{self, Decision, ModelError, ObjectiveBreakdown, Scenario, ViolationReport};

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("scenario: {0}")]
    Scenario(#[from] ModelError),
    #[error("continuous stage: {0}")]
    Continuous(#[from] SolverError),
    #[error("association stage: {0}")]
    Association(#[from] AssocError),
    #[error("final decision is infeasible:\n{0}")]
    Infeasible(ViolationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveConfig {
    pub inner: InnerConfig,
    pub penalty: PenaltyConfig,
    pub max_outer_rounds: usize,
    pub outer_tol: f64,
    /// Run the association step; off means the initial association is kept.
    pub associate: bool,
    /// Round `α` to integers and polish; off leaves `α` continuous.
    pub round: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            inner: InnerConfig::default(),
            penalty: PenaltyConfig::default(),
            max_outer_rounds: 20,
            outer_tol: 1e-5,
            associate: true,
            round: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CccpRound {
    pub best_restart: usize,
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
    pub trace: CccpTrace,
    pub binary: bool,
    /// Whether the re-solved allocation for the new association was kept.
    pub accepted: bool,
    /// Number of user moves in the accepted step (0 when rejected).
    pub applied_moves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub decision: Decision,
    pub breakdown: ObjectiveBreakdown,
    /// Objective after the initial solve and after every accepted round.
    pub round_objectives: Vec<f64>,
    pub ao_traces: Vec<AoTrace>,
    pub cccp_rounds: Vec<CccpRound>,
    pub outer_rounds: usize,
    /// Stationarity of the continuous problem before rounding.
    pub continuous_kkt_residual: f64,
    /// Stationarity of the polish step (with `α` fixed).
    pub kkt_residual: f64,
    pub binarity_gap: f64,
    pub converged: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl Solution {
    pub fn ao_iterations(&self) -> usize {
        self.ao_traces.iter().map(AoTrace::iterations).sum()
    }

    pub fn cccp_iterations(&self) -> usize {
        self.cccp_rounds.iter().map(|r| r.iterations.iter().sum::<usize>()).sum()
    }
}

/// Starting from the greedy association.
pub fn solve(scenario: &Scenario, cfg: &SolveConfig) -> Result<Solution, SolveError> {
    scenario.validate()?;
    let assoc = assoc_solver::greedy_association(scenario);
    solve_from(scenario, &model::midpoint_decision(scenario, &assoc), cfg)
}

/// Runs the outer loop from a feasible decision.
pub fn solve_from(scenario: &Scenario, init: &Decision, cfg: &SolveConfig) -> Result<Solution, SolveError> {
    let start = Instant::now();
    scenario.validate()?;
    let model = CostModel::new(scenario);
    let first = inner_solver::ao_solve_p3(scenario, init, &cfg.inner)?;
    let mut converged = first.converged;
    let mut best = first.decision;
    let mut best_h = first.objective;
    let mut continuous_kkt = first.kkt_residual;
    let mut ao_traces = vec![first.trace];
    let mut round_objectives = vec![best_h];
    let mut cccp_rounds = Vec::new();
    let mut outer_rounds = 0;
    if cfg.associate && scenario.num_servers() > 1 {
        for round in 0..cfg.max_outer_rounds {
            outer_rounds = round + 1;
            let lp = assoc_solver::assoc_costs_with_model(&model, &best);
            let penalty = PenaltyConfig {
                rng_seed: cfg.penalty.rng_seed.wrapping_add(round as u64),
                ..cfg.penalty
            };
            let ms = assoc_solver::multistart_associate(&lp, &best.assoc, &penalty)?;
            let mut record = CccpRound {
                best_restart: ms.best_restart,
                objectives: ms.objectives,
                iterations: ms.iterations,
                trace: ms.best.trace,
                binary: ms.best.binary,
                accepted: false,
                applied_moves: 0,
            };
            if !ms.best.binary || ms.best.assoc == best.assoc {
                cccp_rounds.push(record);
                break;
            }
            // The LP prices each move at the current loads, so moving many
            // users at once can overshoot. Back off to the moves with the
            // largest predicted savings until one step improves.
            let moves = ranked_moves(&lp, &best.assoc, &ms.best.assoc);
            let mut count = moves.len();
            let mut accepted = None;
            while count > 0 {
                let mut assoc = best.assoc.clone();
                for &(n, from, to) in &moves[..count] {
                    assoc[(n, from)] = 0.0;
                    assoc[(n, to)] = 1.0;
                }
                let out = inner_solver::ao_solve_p3(scenario, &reassign(scenario, &best, &assoc), &cfg.inner)?;
                let improved = out.objective < best_h;
                ao_traces.push(out.trace.clone());
                if improved {
                    accepted = Some(out);
                    break;
                }
                count /= 2;
            }
            record.applied_moves = count;
            let improved = accepted.is_some();
            let mut change = 0.0;
            if let Some(out) = accepted {
                change = (best_h - out.objective) / best_h.abs().max(f64::MIN_POSITIVE);
                record.accepted = true;
                converged &= out.converged;
                continuous_kkt = out.kkt_residual;
                best = out.decision;
                best_h = out.objective;
                round_objectives.push(best_h);
            }
            cccp_rounds.push(record);
            if !improved || change < cfg.outer_tol {
                break;
            }
        }
    }
    let mut kkt = continuous_kkt;
    if cfg.round {
        let rounded = round_alpha(scenario, &best);
        let frozen = InnerConfig {
            freeze_alpha: true,
            ..cfg.inner
        };
        let polish = inner_solver::ao_solve_p3(scenario, &rounded, &frozen)?;
        converged &= polish.converged;
        kkt = polish.kkt_residual;
        best = if polish.objective <= objective_h(&model, &rounded) { polish.decision } else { rounded };
        ao_traces.push(polish.trace);
    }
    model::check_feasibility(scenario, &best, 1e-8).map_err(SolveError::Infeasible)?;
    let breakdown = model::evaluate(scenario, &best)?;
    Ok(Solution {
        binarity_gap: assoc_solver::binarity_gap(&best.assoc),
        decision: best,
        breakdown,
        round_objectives,
        ao_traces,
        cccp_rounds,
        outer_rounds,
        continuous_kkt_residual: continuous_kkt,
        kkt_residual: kkt,
        converged,
        wall_time: start.elapsed(),
    })
}

/// Users whose server differs between `from` and `to`, as
/// `(user, old server, new server)`, largest predicted saving first.
fn ranked_moves(lp: &AssocLp, from: &Matrix, to: &Matrix) -> Vec<(usize, usize, usize)> {
    let server = |a: &Matrix, n: usize| (0..a.cols()).find(|&m| a[(n, m)] == 1.0);
    let mut moves: Vec<(f64, usize, usize, usize)> = (0..from.rows())
        .filter_map(|n| {
            let (old, new) = (server(from, n)?, server(to, n)?);
            (old != new).then(|| (lp.cost[(n, old)] - lp.cost[(n, new)], n, old, new))
        })
        .collect();
    moves.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    moves.into_iter().map(|(_, n, old, new)| (n, old, new)).collect()
}

/// Moves `dec` to association `assoc`: servers whose user set changed split
/// their band and frequency equally, the others keep their shares.
pub fn reassign(scenario: &Scenario, dec: &Decision, assoc: &Matrix) -> Decision {
    let mut out = dec.clone();
    out.assoc = assoc.clone();
    for (m, server) in scenario.servers.iter().enumerate() {
        if assoc.col(m) == dec.assoc.col(m) {
            continue;
        }
        let load: f64 = assoc.col(m).iter().sum();
        for n in 0..scenario.num_users() {
            let (b, f) = if assoc[(n, m)] > 0.0 {
                (server.b_max / load, server.f_max / load)
            } else {
                (0.0, 0.0)
            };
            out.bandwidth[(n, m)] = b;
            out.freq_edge[(n, m)] = f;
        }
    }
    out
}

/// Nearest integer split point, kept off the stability pole when the
/// stability weight is positive.
pub fn round_alpha(scenario: &Scenario, dec: &Decision) -> Decision {
    let layers = scenario.llm.total_layers;
    let hi = if scenario.weights.omega_s > 0.0 { layers - 1 } else { layers };
    let mut out = dec.clone();
    for a in &mut out.alpha {
        *a = a.round().clamp(1.0, f64::from(hi));
    }
    out
}
