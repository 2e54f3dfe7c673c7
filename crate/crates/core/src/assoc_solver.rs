//! User-to-server association for fixed continuous variables.
//!
//! With powers, frequencies and split points fixed, the objective is linear
//! in `χ`. The binary constraint is replaced by the exact penalty
//! `ρ Σ χ(1-χ)`, whose concave part is linearized at the current iterate, so
//! every step is a small LP. Capacities are checked against equal shares that
//! leave room for one more user per server, which lets users migrate while
//! the next continuous step rebalances the actual shares.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpcore::CostModel;
use crate::lp::{LinearProgram, LpError, Row};
use crate::matrix::Matrix;
use crate::model::{Decision, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssocError {
    #[error("invalid penalty configuration: {0}")]
    Config(String),
    #[error("association LP failed: {0}")]
    Lp(#[from] LpError),
    #[error("user {0} has no admissible server")]
    Stranded(usize),
    #[error("starting association violates a capacity row")]
    InfeasibleStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PenaltyConfig {
    /// `ρ_init = rho_scale · max |c|`.
    pub rho_scale: f64,
    pub rho_growth: f64,
    pub binarity_tol: f64,
    pub max_cccp_iters: usize,
    pub move_tol: f64,
    pub restarts: usize,
    pub rng_seed: u64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            rho_scale: 1e-3,
            rho_growth: 2.0,
            binarity_tol: 1e-6,
            max_cccp_iters: 100,
            move_tol: 1e-8,
            restarts: 10,
            rng_seed: 0,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<(), AssocError> {
        let fail = |m: &str| Err(AssocError::Config(m.into()));
        if !(self.rho_scale > 0.0 && self.rho_scale.is_finite()) {
            return fail("rho_scale must be positive");
        }
        if !(self.rho_growth > 1.0 && self.rho_growth.is_finite()) {
            return fail("rho_growth must exceed 1");
        }
        if !(self.binarity_tol > 0.0 && self.binarity_tol < 0.25) {
            return fail("binarity_tol must lie in (0, 0.25)");
        }
        if self.max_cccp_iters == 0 || self.restarts == 0 {
            return fail("max_cccp_iters and restarts must be at least 1");
        }
        if !(self.move_tol > 0.0) {
            return fail("move_tol must be positive");
        }
        Ok(())
    }
}

/// Data of the association subproblem: `G(χ) = Σ c χ + constant` subject to
/// unit row sums and per-server capacity rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AssocLp {
    /// Cost per unit `χ`; `+∞` marks a forbidden pair.
    pub cost: Matrix,
    pub constant: f64,
    pub bandwidth: Matrix,
    pub freq: Matrix,
    pub b_cap: Vec<f64>,
    pub f_cap: Vec<f64>,
}

impl AssocLp {
    pub fn num_users(&self) -> usize {
        self.cost.rows()
    }

    pub fn num_servers(&self) -> usize {
        self.cost.cols()
    }

    pub fn allowed(&self, n: usize, m: usize) -> bool {
        self.cost[(n, m)].is_finite()
    }

    /// `G(χ)`.
    pub fn objective(&self, assoc: &Matrix) -> f64 {
        let mut g = self.constant;
        for (c, x) in self.cost.as_slice().iter().zip(assoc.as_slice()) {
            if *x != 0.0 {
                g += c * x;
            }
        }
        g
    }

    /// Largest capacity-row excess relative to the capacity.
    pub fn capacity_excess(&self, assoc: &Matrix) -> f64 {
        let mut worst: f64 = 0.0;
        for m in 0..self.num_servers() {
            let (mut b, mut f) = (0.0, 0.0);
            for n in 0..self.num_users() {
                b += assoc[(n, m)] * self.bandwidth[(n, m)];
                f += assoc[(n, m)] * self.freq[(n, m)];
            }
            worst = worst.max(b / self.b_cap[m] - 1.0).max(f / self.f_cap[m] - 1.0);
        }
        worst
    }

    pub fn is_feasible(&self, assoc: &Matrix) -> bool {
        let rows_ok = (0..self.num_users()).all(|n| {
            let row = assoc.row(n);
            (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
                && row.iter().enumerate().all(|(m, &x)| x >= -1e-12 && (x == 0.0 || self.allowed(n, m)))
        });
        rows_ok && self.capacity_excess(assoc) <= 1e-9
    }
}

/// Current per-server load `Σ_n χ`.
fn loads(assoc: &Matrix) -> Vec<f64> {
    (0..assoc.cols()).map(|m| assoc.col(m).iter().sum()).collect()
}

/// Builds the association subproblem around `dec`. Every pair is priced at
/// the equal share `cap / (load + 1)` of its server.
pub fn assoc_linear_costs(scenario: &Scenario, dec: &Decision) -> AssocLp {
    assoc_costs_with_model(&CostModel::new(scenario), dec)
}

pub fn assoc_costs_with_model(model: &CostModel, dec: &Decision) -> AssocLp {
    let (n_users, n_servers) = (model.num_users(), model.num_servers());
    let load = loads(&dec.assoc);
    let b_share: Vec<f64> = (0..n_servers).map(|m| model.b_max[m] / (load[m] + 1.0)).collect();
    let f_share: Vec<f64> = (0..n_servers).map(|m| model.f_max_edge[m] / (load[m] + 1.0)).collect();
    let cost = Matrix::from_fn(n_users, n_servers, |n, m| pair_cost(model, dec, n, m, b_share[m], f_share[m]));
    let constant = (0..n_users)
        .map(|n| dec.alpha[n] * model.local[n].value(dec.freq_user[n]) + model.stability_term(n, dec.alpha[n]))
        .sum();
    AssocLp {
        cost,
        constant,
        bandwidth: Matrix::from_fn(n_users, n_servers, |_, m| b_share[m]),
        freq: Matrix::from_fn(n_users, n_servers, |_, m| f_share[m]),
        b_cap: model.b_max.clone(),
        f_cap: model.f_max_edge.clone(),
    }
}

/// `ω_e s p / r + (Υ-α) B(f)` for one pair at the given shares.
fn pair_cost(model: &CostModel, dec: &Decision, n: usize, m: usize, b: f64, f: f64) -> f64 {
    let p = dec.power[n];
    let r = model.rate(n, m, p, b);
    if !(r > 0.0) {
        return f64::INFINITY;
    }
    let uplink = if model.energy_weight > 0.0 {
        model.energy_weight * model.bits[n] * p / r
    } else {
        0.0
    };
    let edge_layers = model.layers - dec.alpha[n];
    let compute = if edge_layers > 0.0 { edge_layers * model.edge(n, m).value(f) } else { 0.0 };
    uplink + compute
}

/// Decision whose edge shares are the ones the association subproblem prices,
/// with association `assoc`. Evaluating it reproduces `G(assoc)`.
pub fn priced_decision(model: &CostModel, dec: &Decision, assoc: &Matrix) -> Decision {
    let load = loads(&dec.assoc);
    let mut out = dec.clone();
    out.assoc = assoc.clone();
    for n in 0..model.num_users() {
        for m in 0..model.num_servers() {
            let (b, f) = if assoc[(n, m)] > 0.0 {
                (model.b_max[m] / (load[m] + 1.0), model.f_max_edge[m] / (load[m] + 1.0))
            } else {
                (0.0, 0.0)
            };
            out.bandwidth[(n, m)] = b;
            out.freq_edge[(n, m)] = f;
        }
    }
    out
}

/// Tangent of `χ(χ-1)` at `χ_prev`: value `constant + slope (χ - χ_prev)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyLinearization {
    pub point: Matrix,
    pub slope: Matrix,
    pub constant: Matrix,
}

impl PenaltyLinearization {
    pub fn value(&self, assoc: &Matrix) -> f64 {
        let mut v = 0.0;
        for i in 0..assoc.as_slice().len() {
            let x = assoc.as_slice()[i];
            v += self.constant.as_slice()[i] + self.slope.as_slice()[i] * (x - self.point.as_slice()[i]);
        }
        v
    }
}

pub fn linearize_penalty(prev: &Matrix) -> PenaltyLinearization {
    let (r, c) = prev.shape();
    PenaltyLinearization {
        point: prev.clone(),
        slope: Matrix::from_fn(r, c, |i, j| 2.0 * prev[(i, j)] - 1.0),
        constant: Matrix::from_fn(r, c, |i, j| prev[(i, j)] * (prev[(i, j)] - 1.0)),
    }
}

/// `max χ(1-χ)`.
pub fn binarity_gap(assoc: &Matrix) -> f64 {
    assoc.as_slice().iter().map(|x| x * (1.0 - x)).fold(0.0, f64::max)
}

/// `Σ χ(1-χ)`.
pub fn penalty(assoc: &Matrix) -> f64 {
    assoc.as_slice().iter().map(|x| x * (1.0 - x)).sum()
}

/// Minimizes `Σ (c + extra) χ` over the relaxed feasible set.
pub fn solve_lp(lp: &AssocLp, extra: Option<&Matrix>) -> Result<Matrix, AssocError> {
    let (n_users, n_servers) = lp.cost.shape();
    let vars: Vec<(usize, usize)> = (0..n_users)
        .flat_map(|n| (0..n_servers).map(move |m| (n, m)))
        .filter(|&(n, m)| lp.allowed(n, m))
        .collect();
    for n in 0..n_users {
        if !(0..n_servers).any(|m| lp.allowed(n, m)) {
            return Err(AssocError::Stranded(n));
        }
    }
    let cost: Vec<f64> = vars
        .iter()
        .map(|&(n, m)| lp.cost[(n, m)] + extra.map_or(0.0, |e| e[(n, m)]))
        .collect();
    let eq = (0..n_users)
        .map(|row| Row {
            coefs: vars.iter().map(|&(n, _)| if n == row { 1.0 } else { 0.0 }).collect(),
            rhs: 1.0,
        })
        .collect();
    let mut le = Vec::with_capacity(2 * n_servers);
    for m in 0..n_servers {
        for (coef, cap) in [(&lp.bandwidth, lp.b_cap[m]), (&lp.freq, lp.f_cap[m])] {
            le.push(Row {
                coefs: vars.iter().map(|&(n, s)| if s == m { coef[(n, m)] } else { 0.0 }).collect(),
                rhs: cap * (1.0 + 1e-10),
            });
        }
    }
    let sol = LinearProgram { cost, eq, le }.solve()?;
    let mut assoc = Matrix::zeros(n_users, n_servers);
    for (&(n, m), &x) in vars.iter().zip(&sol.x) {
        assoc[(n, m)] = clean(x);
    }
    for n in 0..n_users {
        let s: f64 = assoc.row(n).iter().sum();
        for v in assoc.row_mut(n) {
            *v /= s;
        }
    }
    Ok(assoc)
}

fn clean(x: f64) -> f64 {
    if x < 1e-12 {
        0.0
    } else if x > 1.0 - 1e-12 {
        1.0
    } else {
        x
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CccpTrace {
    /// Penalized objective `G + ρ Σ χ(1-χ)` after every LP.
    pub penalized: Vec<f64>,
    pub rho: Vec<f64>,
    pub gap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CccpOutcome {
    /// Binary, row-stochastic association.
    pub assoc: Matrix,
    /// `G` at `assoc`.
    pub objective: f64,
    pub iterations: usize,
    /// Binarity gap before rounding.
    pub binarity_gap: f64,
    /// Whether the iterate reached `binarity_tol` and the rounded point is feasible.
    pub binary: bool,
    pub trace: CccpTrace,
}

/// Convex-concave procedure on the penalized association problem.
pub fn cccp_associate(lp: &AssocLp, start: &Matrix, cfg: &PenaltyConfig) -> Result<CccpOutcome, AssocError> {
    cfg.validate()?;
    let c_max = lp.cost.as_slice().iter().filter(|c| c.is_finite()).fold(0.0f64, |a, c| a.max(c.abs()));
    let mut rho = cfg.rho_scale * if c_max > 0.0 { c_max } else { 1.0 };
    let mut chi = start.clone();
    let mut trace = CccpTrace::default();
    let mut iterations = 0;
    while iterations < cfg.max_cccp_iters {
        let lin = linearize_penalty(&chi);
        // ρ Σ χ(1-χ) linearized: -ρ (constant + slope (χ - χ_prev)).
        let extra = Matrix::from_fn(chi.rows(), chi.cols(), |n, m| -rho * lin.slope[(n, m)]);
        let next = solve_lp(lp, Some(&extra))?;
        iterations += 1;
        let moved = next.max_abs_diff(&chi);
        chi = next;
        let gap = binarity_gap(&chi);
        trace.penalized.push(lp.objective(&chi) + rho * penalty(&chi));
        trace.rho.push(rho);
        trace.gap.push(gap);
        if moved < cfg.move_tol {
            if gap <= cfg.binarity_tol {
                break;
            }
            rho *= cfg.rho_growth;
        }
    }
    let gap = binarity_gap(&chi);
    let (assoc, feasible) = round_assoc(lp, &chi);
    Ok(CccpOutcome {
        objective: lp.objective(&assoc),
        assoc,
        iterations,
        binarity_gap: gap,
        binary: gap <= cfg.binarity_tol && feasible,
        trace,
    })
}

/// Row-wise argmax rounding, then moves users off overfull servers to their
/// cheapest server with room. Returns the rounded matrix and whether it is
/// feasible.
pub fn round_assoc(lp: &AssocLp, chi: &Matrix) -> (Matrix, bool) {
    let (n_users, n_servers) = chi.shape();
    let mut out = Matrix::zeros(n_users, n_servers);
    for n in 0..n_users {
        let best = (0..n_servers)
            .filter(|&m| lp.allowed(n, m))
            .max_by(|&a, &b| chi[(n, a)].total_cmp(&chi[(n, b)]).then(b.cmp(&a)))
            .unwrap_or(0);
        out[(n, best)] = 1.0;
    }
    let room = |out: &Matrix, n: usize, m: usize| {
        let (mut b, mut f) = (lp.bandwidth[(n, m)], lp.freq[(n, m)]);
        for k in 0..n_users {
            b += out[(k, m)] * lp.bandwidth[(k, m)];
            f += out[(k, m)] * lp.freq[(k, m)];
        }
        b <= lp.b_cap[m] * (1.0 + 1e-9) && f <= lp.f_cap[m] * (1.0 + 1e-9)
    };
    for _ in 0..n_users * n_servers {
        if lp.capacity_excess(&out) <= 1e-9 {
            return (out, true);
        }
        let over: Vec<usize> = (0..n_servers)
            .filter(|&m| {
                let (mut b, mut f) = (0.0, 0.0);
                for k in 0..n_users {
                    b += out[(k, m)] * lp.bandwidth[(k, m)];
                    f += out[(k, m)] * lp.freq[(k, m)];
                }
                b > lp.b_cap[m] * (1.0 + 1e-9) || f > lp.f_cap[m] * (1.0 + 1e-9)
            })
            .collect();
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for &m in &over {
            for n in (0..n_users).filter(|&n| out[(n, m)] == 1.0) {
                for to in (0..n_servers).filter(|&to| to != m && lp.allowed(n, to)) {
                    if room(&out, n, to) {
                        let regret = lp.cost[(n, to)] - lp.cost[(n, m)];
                        if best.is_none_or(|b| regret < b.0) {
                            best = Some((regret, n, m, to));
                        }
                    }
                }
            }
        }
        let Some((_, n, from, to)) = best else {
            return (out, false);
        };
        out[(n, from)] = 0.0;
        out[(n, to)] = 1.0;
    }
    let ok = lp.capacity_excess(&out) <= 1e-9;
    (out, ok)
}

/// Random point of the relaxed feasible set: Dirichlet rows pulled toward
/// the feasible `anchor` just enough to respect the capacity rows.
pub fn random_feasible_start(lp: &AssocLp, anchor: &Matrix, rng: &mut impl Rng) -> Matrix {
    let (n_users, n_servers) = anchor.shape();
    let mut draw = Matrix::zeros(n_users, n_servers);
    for n in 0..n_users {
        let mut total = 0.0;
        for m in 0..n_servers {
            if lp.allowed(n, m) {
                let e = -(1.0 - rng.random::<f64>()).ln();
                draw[(n, m)] = e;
                total += e;
            }
        }
        for v in draw.row_mut(n) {
            *v /= total;
        }
    }
    let mut lambda: f64 = 1.0;
    for m in 0..n_servers {
        for (coef, cap) in [(&lp.bandwidth, lp.b_cap[m]), (&lp.freq, lp.f_cap[m])] {
            let (mut a, mut d) = (0.0, 0.0);
            for n in 0..n_users {
                a += anchor[(n, m)] * coef[(n, m)];
                d += draw[(n, m)] * coef[(n, m)];
            }
            if d > a {
                lambda = lambda.min(((cap - a) / (d - a)).max(0.0));
            }
        }
    }
    Matrix::from_fn(n_users, n_servers, |n, m| {
        (1.0 - lambda) * anchor[(n, m)] + lambda * draw[(n, m)]
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultistartOutcome {
    pub best: CccpOutcome,
    pub best_restart: usize,
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
}

/// CCCP from `anchor` (restart 0) and from `restarts - 1` random feasible
/// starts; keeps the binary result with the smallest `G`.
pub fn multistart_associate(lp: &AssocLp, anchor: &Matrix, cfg: &PenaltyConfig) -> Result<MultistartOutcome, AssocError> {
    cfg.validate()?;
    if !lp.is_feasible(anchor) {
        return Err(AssocError::InfeasibleStart);
    }
    let runs: Vec<CccpOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let start = if k == 0 {
                anchor.clone()
            } else {
                let mut rng = restart_rng(cfg.rng_seed, k);
                random_feasible_start(lp, anchor, &mut rng)
            };
            cccp_associate(lp, &start, cfg)
        })
        .collect::<Result<_, _>>()?;
    let best_restart = (0..runs.len())
        .min_by(|&a, &b| {
            let key = |r: &CccpOutcome| (!r.binary, r.objective);
            let (ka, kb) = (key(&runs[a]), key(&runs[b]));
            ka.0.cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(a.cmp(&b))
        })
        .unwrap_or(0);
    Ok(MultistartOutcome {
        objectives: runs.iter().map(|r| r.objective).collect(),
        iterations: runs.iter().map(|r| r.iterations).collect(),
        best: runs[best_restart].clone(),
        best_restart,
    })
}

pub fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64 + 1);
    rng
}

/// Users in index order, each to the server with the best rate at full
/// power and an equal share of the server's band counting users so far.
pub fn greedy_association(scenario: &Scenario) -> Matrix {
    let (n_users, n_servers) = (scenario.num_users(), scenario.num_servers());
    let mut assoc = Matrix::zeros(n_users, n_servers);
    let mut load = vec![0.0; n_servers];
    for (n, user) in scenario.users.iter().enumerate() {
        let rate = |m: usize| {
            let b = scenario.servers[m].b_max / (load[m] + 1.0);
            crate::model::uplink_rate(scenario.channel.gains[(n, m)], user.p_max, b, scenario.channel.noise_power).unwrap_or(0.0)
        };
        let best = (0..n_servers)
            .max_by(|&a, &b| rate(a).total_cmp(&rate(b)).then(b.cmp(&a)))
            .unwrap_or(0);
        assoc[(n, best)] = 1.0;
        load[best] += 1.0;
    }
    assoc
}

/// Each user to a uniformly random server.
pub fn random_association(num_users: usize, num_servers: usize, rng: &mut impl Rng) -> Matrix {
    let mut assoc = Matrix::zeros(num_users, num_servers);
    for n in 0..num_users {
        assoc[(n, rng.random_range(0..num_servers))] = 1.0;
    }
    assoc
}
