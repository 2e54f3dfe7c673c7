//! Continuous resource allocation for a fixed association.
//!
//! The surrogate `K` separates into an `α` block, a user-frequency block, one
//! edge-frequency block per server and a coupled power/bandwidth block. The
//! first three are solved exactly in one pass; power and bandwidth alternate
//! until the decrease stalls. The outer loop alternates this with the
//! auxiliary update.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpcore::{
    self, aux_optimal, objective_h, surrogate_k_unchecked, AuxVars, CostModel, FpError,
};
use crate::model::{self, Decision, ModelError, Scenario, ViolationReport, FREQ_FLOOR_FRACTION, POWER_FLOOR_FRACTION};
use crate::roots::{self, RootError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerConfig {
    pub block_tol: f64,
    pub ao_tol: f64,
    pub max_block_sweeps: usize,
    pub max_ao_iters: usize,
    pub bisect_tol: f64,
    /// Stationarity target; the loop keeps iterating past the `ao_tol`
    /// criterion while the residual is above it and `K` still moves.
    pub kkt_tol: f64,
    pub freeze_alpha: bool,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            block_tol: 1e-8,
            ao_tol: 1e-6,
            max_block_sweeps: 100,
            max_ao_iters: 200,
            bisect_tol: 1e-12,
            kkt_tol: 1e-5,
            freeze_alpha: false,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let tols = [self.block_tol, self.ao_tol, self.bisect_tol, self.kkt_tol];
        if tols.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(SolverError::Config("tolerances must be positive and finite".into()));
        }
        if self.max_block_sweeps == 0 || self.max_ao_iters == 0 {
            return Err(SolverError::Config("iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("initial point is infeasible:\n{0}")]
    Infeasible(ViolationReport),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Fp(#[from] FpError),
    #[error("{block} block at index {index}: {source}")]
    Root {
        block: &'static str,
        index: usize,
        #[source]
        source: RootError,
    },
}

fn root_err(block: &'static str, index: usize) -> impl FnOnce(RootError) -> SolverError {
    move |source| SolverError::Root { block, index, source }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AoTrace {
    /// `K` at the start, then `K(x^{t+1}, aux^t)` after every P4 solve.
    pub k_values: Vec<f64>,
    /// `H` at the start and after every iteration.
    pub h_values: Vec<f64>,
    pub block_sweeps: Vec<usize>,
    #[serde(skip)]
    pub wall_time: Vec<Duration>,
}

impl AoTrace {
    pub fn iterations(&self) -> usize {
        self.block_sweeps.len()
    }

    /// Largest increase between consecutive `K` values (zero for a descent).
    pub fn max_k_increase(&self) -> f64 {
        self.k_values.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct AoOutcome {
    pub decision: Decision,
    pub objective: f64,
    pub trace: AoTrace,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Minimizer of `z α² + Σ χ q (Υ-α)² + S/(1-α/Υ)` over `[1, α_max]`.
pub fn solve_alpha(model: &CostModel, dec: &Decision, aux: &AuxVars, n: usize) -> Result<f64, SolverError> {
    let mut q_sum = 0.0;
    for m in dec.servers_of(n) {
        let q = aux.q[(n, m)];
        if q.is_infinite() {
            return Ok(dec.alpha[n]);
        }
        q_sum += dec.assoc[(n, m)] * q;
    }
    let z = aux.z[n];
    let (lo, hi) = (1.0, model.alpha_max);
    let upsilon = model.layers;
    if model.stability[n] == 0.0 {
        if z + q_sum == 0.0 {
            return Ok(dec.alpha[n]);
        }
        return Ok((q_sum * upsilon / (z + q_sum)).clamp(lo, hi));
    }
    let slope = |a: f64| 2.0 * z * a - 2.0 * q_sum * (upsilon - a) + model.stability_slope(n, a);
    if slope(lo) >= 0.0 {
        return Ok(lo);
    }
    if slope(hi) <= 0.0 {
        return Ok(hi);
    }
    roots::brent(slope, lo, hi, 1e-14 * upsilon, 0.0, 200).map_err(root_err("alpha", n))
}

/// Frequency minimizing `A(f)` over `[floor, f_max]`.
pub fn solve_user_freq(model: &CostModel, dec: &Decision, aux: &AuxVars, n: usize) -> f64 {
    let cost = model.local[n];
    if cost.is_zero() || aux.z[n] == 0.0 {
        return dec.freq_user[n];
    }
    let f_max = model.f_max_user[n];
    cost.minimizer().clamp(FREQ_FLOOR_FRACTION * f_max, f_max)
}

/// Edge frequencies of server `m`'s users, spending the whole capacity.
/// Returns `(user, frequency)` pairs; users whose job is fully local keep
/// their current share.
pub fn solve_edge_freq(
    model: &CostModel,
    dec: &Decision,
    aux: &AuxVars,
    m: usize,
    cfg: &InnerConfig,
) -> Result<Vec<(usize, f64)>, SolverError> {
    let users = dec.users_of(m);
    let mut active = Vec::new();
    let mut capacity = model.f_max_edge[m];
    for &n in &users {
        let q = aux.q[(n, m)];
        if q.is_finite() && q > 0.0 {
            active.push(n);
        } else {
            capacity -= dec.assoc[(n, m)] * dec.freq_edge[(n, m)];
        }
    }
    let current: Vec<(usize, f64)> = users.iter().map(|&n| (n, dec.freq_edge[(n, m)])).collect();
    if active.is_empty() || !(capacity > 0.0) {
        return Ok(current);
    }
    let weights: Vec<f64> = active.iter().map(|&n| dec.assoc[(n, m)]).collect();
    let marginal = |i: usize, f: f64| {
        let n = active[i];
        let b = model.edge(n, m);
        b.value(f) * b.derivative(f) / (2.0 * aux.q[(n, m)])
    };
    let inverse = |i: usize, lam: f64| {
        let n = active[i];
        let b = model.edge(n, m);
        let (t, e, q) = (b.delay_coef, b.energy_coef, aux.q[(n, m)]);
        // f³ solves 2e² u² + (e t - 2 q λ) u - t² = 0.
        let (qa, qb, qc) = (2.0 * e * e, e * t - 2.0 * q * lam, t * t);
        let disc = (qb * qb + 4.0 * qa * qc).sqrt();
        let u = if qb > 0.0 { 2.0 * qc / (qb + disc) } else { (disc - qb) / (2.0 * qa) };
        if u.is_finite() && u > 0.0 {
            Ok(u.cbrt())
        } else {
            Err(RootError::NonFinite { x: lam })
        }
    };
    let alloc = roots::allocate(&weights, capacity, marginal, inverse, cfg.bisect_tol).map_err(root_err("edge frequency", m))?;
    let block = |d: &Decision| -> f64 {
        active.iter().map(|&n| fpcore::edge_freq_term(model, d, aux, n, m, d.freq_edge[(n, m)])).sum()
    };
    let mut trial = dec.clone();
    for (&n, &f) in active.iter().zip(&alloc) {
        trial.freq_edge[(n, m)] = f;
    }
    let used: f64 = active.iter().map(|&n| dec.assoc[(n, m)] * dec.freq_edge[(n, m)]).sum();
    if on_capacity(used, capacity) && block(&trial) > block(dec) {
        return Ok(current);
    }
    Ok(users.iter().map(|&n| (n, trial.freq_edge[(n, m)])).collect())
}

/// Whether the current shares already spend the capacity, so that keeping
/// them is a valid fallback.
fn on_capacity(used: f64, capacity: f64) -> bool {
    (used - capacity).abs() <= 1e-9 * capacity
}

fn uplink_block_user(model: &CostModel, dec: &Decision, aux: &AuxVars, n: usize, p: f64) -> f64 {
    dec.servers_of(n)
        .map(|m| fpcore::uplink_term(model, dec, aux, n, m, p, dec.bandwidth[(n, m)]))
        .sum()
}

/// Transmit power of user `n` minimizing its uplink terms over `[floor, p_max]`.
pub fn solve_power(model: &CostModel, dec: &Decision, aux: &AuxVars, n: usize) -> Result<f64, SolverError> {
    let current = dec.power[n];
    if model.energy_weight == 0.0 || dec.servers_of(n).next().is_none() {
        return Ok(current);
    }
    let s = model.bits[n];
    let slope = |p: f64| -> f64 {
        dec.servers_of(n)
            .map(|m| {
                let chi = dec.assoc[(n, m)];
                let nu = aux.nu[(n, m)];
                let (r, dr_dp, _) = model.rate_with_partials(n, m, p, dec.bandwidth[(n, m)]);
                chi * (2.0 * s * s * nu * p - dr_dp / (2.0 * nu * r * r * r))
            })
            .sum()
    };
    let hi = model.p_max[n];
    let lo = POWER_FLOOR_FRACTION * hi;
    let p = if slope(hi) <= 0.0 {
        hi
    } else if slope(lo) >= 0.0 {
        lo
    } else {
        roots::brent(slope, lo, hi, 0.0, 1e-13, 200).map_err(root_err("power", n))?
    };
    if uplink_block_user(model, dec, aux, n, p) > uplink_block_user(model, dec, aux, n, current) {
        return Ok(current);
    }
    Ok(p)
}

/// Bandwidth shares of server `m`'s users, spending the whole band.
pub fn solve_bandwidth(
    model: &CostModel,
    dec: &Decision,
    aux: &AuxVars,
    m: usize,
    cfg: &InnerConfig,
) -> Result<Vec<(usize, f64)>, SolverError> {
    let users = dec.users_of(m);
    let current: Vec<(usize, f64)> = users.iter().map(|&n| (n, dec.bandwidth[(n, m)])).collect();
    if users.is_empty() || model.energy_weight == 0.0 {
        return Ok(current);
    }
    let weights: Vec<f64> = users.iter().map(|&n| dec.assoc[(n, m)]).collect();
    let marginal = |i: usize, b: f64| {
        let n = users[i];
        let (r, _, dr_db) = model.rate_with_partials(n, m, dec.power[n], b);
        -model.energy_weight * dr_db / (2.0 * aux.nu[(n, m)] * r * r * r)
    };
    let inverse = |i: usize, lam: f64| {
        let guess = dec.bandwidth[(users[i], m)];
        roots::increasing_root_positive(|b| marginal(i, b) - lam, guess, 1e-13)
    };
    let alloc = roots::allocate(&weights, model.b_max[m], marginal, inverse, cfg.bisect_tol).map_err(root_err("bandwidth", m))?;
    let block = |d: &Decision| -> f64 {
        users
            .iter()
            .map(|&n| fpcore::uplink_term(model, d, aux, n, m, d.power[n], d.bandwidth[(n, m)]))
            .sum()
    };
    let mut trial = dec.clone();
    for (&n, &b) in users.iter().zip(&alloc) {
        trial.bandwidth[(n, m)] = b;
    }
    let used: f64 = users.iter().map(|&n| dec.assoc[(n, m)] * dec.bandwidth[(n, m)]).sum();
    if on_capacity(used, model.b_max[m]) && block(&trial) > block(dec) {
        return Ok(current);
    }
    Ok(alloc.into_iter().zip(&users).map(|(b, &n)| (n, b)).collect())
}

/// Minimizes `K(·, aux)` for the association in `init`. Returns the new
/// decision and the number of power/bandwidth sweeps used.
pub fn solve_p4(model: &CostModel, aux: &AuxVars, init: &Decision, cfg: &InnerConfig) -> Result<(Decision, usize), SolverError> {
    let mut dec = init.clone();
    let (n_users, n_servers) = (model.num_users(), model.num_servers());
    if !cfg.freeze_alpha {
        for n in 0..n_users {
            dec.alpha[n] = solve_alpha(model, &dec, aux, n)?;
        }
    }
    for n in 0..n_users {
        dec.freq_user[n] = solve_user_freq(model, &dec, aux, n);
    }
    for m in 0..n_servers {
        for (n, f) in solve_edge_freq(model, &dec, aux, m, cfg)? {
            dec.freq_edge[(n, m)] = f;
        }
    }
    let mut k = surrogate_k_unchecked(model, &dec, aux);
    let mut sweeps = 0;
    while sweeps < cfg.max_block_sweeps {
        sweeps += 1;
        for n in 0..n_users {
            dec.power[n] = solve_power(model, &dec, aux, n)?;
        }
        for m in 0..n_servers {
            for (n, b) in solve_bandwidth(model, &dec, aux, m, cfg)? {
                dec.bandwidth[(n, m)] = b;
            }
        }
        let next = surrogate_k_unchecked(model, &dec, aux);
        let decrease = k - next;
        k = next;
        if decrease <= cfg.block_tol * (1.0 + k.abs()) {
            break;
        }
    }
    Ok((dec, sweeps))
}

/// Alternates the auxiliary update with [`solve_p4`] from a feasible
/// starting point whose association is kept fixed.
pub fn ao_solve_p3(scenario: &Scenario, init: &Decision, cfg: &InnerConfig) -> Result<AoOutcome, SolverError> {
    cfg.validate()?;
    model::check_feasibility(scenario, init, 1e-8).map_err(SolverError::Infeasible)?;
    let model = CostModel::new(scenario);
    ao_solve_with_model(&model, init, cfg)
}

pub(crate) fn ao_solve_with_model(model: &CostModel, init: &Decision, cfg: &InnerConfig) -> Result<AoOutcome, SolverError> {
    let start = Instant::now();
    let mut dec = init.clone();
    let mut aux = aux_optimal(model, &dec)?;
    let h0 = objective_h(model, &dec);
    let mut trace = AoTrace {
        k_values: vec![h0],
        h_values: vec![h0],
        ..AoTrace::default()
    };
    let mut k_prev = h0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_ao_iters {
        let (next, sweeps) = solve_p4(model, &aux, &dec, cfg)?;
        let k = surrogate_k_unchecked(model, &next, &aux);
        dec = next;
        aux = aux_optimal(model, &dec)?;
        let h = objective_h(model, &dec);
        trace.k_values.push(k);
        trace.h_values.push(h);
        trace.block_sweeps.push(sweeps);
        trace.wall_time.push(start.elapsed());
        let change = (k_prev - k).abs();
        k_prev = k;
        if change < cfg.ao_tol * (1.0 + k.abs()) {
            converged = true;
            residual = kkt_residual_with(model, &dec, !cfg.freeze_alpha);
            if residual <= cfg.kkt_tol || change <= 1e-15 * (1.0 + k.abs()) {
                break;
            }
        }
    }
    if !residual.is_finite() || !converged {
        residual = kkt_residual_with(model, &dec, !cfg.freeze_alpha);
    }
    let objective = objective_h(model, &dec);
    Ok(AoOutcome {
        decision: dec,
        objective,
        trace,
        kkt_residual: residual,
        converged,
    })
}

/// Projected-gradient stationarity measure of `H` at `dec` for its
/// association, scaled by variable ranges and `1 + |H|`.
pub fn kkt_residual(scenario: &Scenario, dec: &Decision) -> Result<f64, SolverError> {
    let model = CostModel::new(scenario);
    fpcore::grad_h(&model, dec)?;
    Ok(kkt_residual_with(&model, dec, true))
}

/// Same as [`kkt_residual`] with the option to treat `α` as fixed.
pub fn kkt_residual_with(model: &CostModel, dec: &Decision, include_alpha: bool) -> f64 {
    let g = match fpcore::grad_h(model, dec) {
        Ok(g) => g,
        Err(_) => return f64::INFINITY,
    };
    let box_res = |x: f64, lo: f64, hi: f64, grad: f64| {
        let width = hi - lo;
        let eps = 1e-9 * width.max(hi.abs());
        let r = if x <= lo + eps {
            (-grad).max(0.0)
        } else if x >= hi - eps {
            grad.max(0.0)
        } else {
            grad.abs()
        };
        r * hi
    };
    let mut worst: f64 = 0.0;
    for n in 0..model.num_users() {
        if include_alpha {
            let r = box_res(dec.alpha[n], 1.0, model.alpha_max, g.alpha[n]) * model.layers / model.alpha_max;
            worst = worst.max(r);
        }
        let pm = model.p_max[n];
        worst = worst.max(box_res(dec.power[n], POWER_FLOOR_FRACTION * pm, pm, g.power[n]));
        let fm = model.f_max_user[n];
        worst = worst.max(box_res(dec.freq_user[n], FREQ_FLOOR_FRACTION * fm, fm, g.freq_user[n]));
    }
    for m in 0..model.num_servers() {
        let mut bw = (f64::INFINITY, f64::NEG_INFINITY);
        let mut fe = (f64::INFINITY, f64::NEG_INFINITY);
        for n in dec.users_of(m) {
            let chi = dec.assoc[(n, m)];
            let v = g.bandwidth[(n, m)] / chi;
            bw = (bw.0.min(v), bw.1.max(v));
            if dec.alpha[n] < model.layers {
                let v = g.freq_edge[(n, m)] / chi;
                fe = (fe.0.min(v), fe.1.max(v));
            }
        }
        if bw.1 > bw.0 {
            worst = worst.max(0.5 * (bw.1 - bw.0) * model.b_max[m]);
        }
        if fe.1 > fe.0 {
            worst = worst.max(0.5 * (fe.1 - fe.0) * model.f_max_edge[m]);
        }
    }
    worst / (1.0 + objective_h(model, dec).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpcore::tests::{one_by_one, random_interior, random_small};
    use crate::matrix::Matrix;
    use crate::model::Weights;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_pair_aux(z: f64, q: f64) -> AuxVars {
        AuxVars {
            z: vec![z],
            nu: Matrix::filled(1, 1, 1.0),
            q: Matrix::filled(1, 1, q),
        }
    }

    fn model_with_layers(layers: u32, ws: f64) -> (CostModel, Decision) {
        let mut w = Weights::unit();
        w.omega_s = ws;
        let mut s = one_by_one(w);
        s.llm.total_layers = layers;
        let dec = model::midpoint_decision(&s, &Matrix::filled(1, 1, 1.0));
        (CostModel::new(&s), dec)
    }

    #[test]
    fn alpha_symmetric_quadratic_sits_at_midpoint() {
        let (m, dec) = model_with_layers(32, 0.0);
        assert_relative_eq!(solve_alpha(&m, &dec, &single_pair_aux(1.0, 1.0), 0).unwrap(), 16.0);
    }

    #[test]
    fn alpha_clamps_to_one_when_local_is_expensive() {
        let (m, dec) = model_with_layers(32, 0.0);
        assert_eq!(solve_alpha(&m, &dec, &single_pair_aux(1e6, 1.0), 0).unwrap(), 1.0);
    }

    #[test]
    fn stability_term_pushes_alpha_left() {
        let (m0, dec) = model_with_layers(32, 0.0);
        let (m1, _) = model_with_layers(32, 1.0);
        let aux = single_pair_aux(1.0, 1.0);
        let a0 = solve_alpha(&m0, &dec, &aux, 0).unwrap();
        let a1 = solve_alpha(&m1, &dec, &aux, 0).unwrap();
        assert!(a1 < a0, "{a1} vs {a0}");
    }

    #[test]
    fn user_freq_cube_root_and_projection() {
        let mut w = Weights::unit();
        w.omega_t = 2.0;
        let s = one_by_one(w);
        let m = CostModel::new(&s);
        let dec = model::midpoint_decision(&s, &Matrix::filled(1, 1, 1.0));
        let aux = aux_optimal(&m, &dec).unwrap();
        assert_relative_eq!(solve_user_freq(&m, &dec, &aux, 0), 1.0, max_relative = 1e-14);
        let mut s2 = one_by_one(w);
        s2.users[0].f_max = 0.5;
        let m2 = CostModel::new(&s2);
        assert_eq!(solve_user_freq(&m2, &dec, &aux, 0), 0.5);
        w.omega_e = 0.0;
        let m3 = CostModel::new(&one_by_one(w));
        assert_eq!(solve_user_freq(&m3, &dec, &aux, 0), 10.0);
    }

    #[test]
    fn single_user_takes_whole_edge_capacity() {
        let s = one_by_one(Weights::unit());
        let m = CostModel::new(&s);
        let mut dec = model::midpoint_decision(&s, &Matrix::filled(1, 1, 1.0));
        let aux = aux_optimal(&m, &dec).unwrap();
        dec.freq_edge[(0, 0)] = 3.0;
        let out = solve_edge_freq(&m, &dec, &aux, 0, &InnerConfig::default()).unwrap();
        assert_eq!(out, vec![(0, 10.0)]);
    }

    #[test]
    fn identical_users_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = random_small(&mut rng, 2, 1);
        s.users[1] = s.users[0].clone();
        s.channel.gains[(1, 0)] = s.channel.gains[(0, 0)];
        let model = CostModel::new(&s);
        let mut dec = model::midpoint_decision(&s, &Matrix::filled(2, 1, 1.0));
        let aux = aux_optimal(&model, &dec).unwrap();
        dec.freq_edge[(0, 0)] *= 1.5;
        dec.freq_edge[(1, 0)] *= 0.5;
        dec.bandwidth[(0, 0)] *= 1.5;
        dec.bandwidth[(1, 0)] *= 0.5;
        let cfg = InnerConfig::default();
        let f = solve_edge_freq(&model, &dec, &aux, 0, &cfg).unwrap();
        assert_relative_eq!(f[0].1, f[1].1, max_relative = 1e-9);
        let b = solve_bandwidth(&model, &dec, &aux, 0, &cfg).unwrap();
        assert_relative_eq!(b[0].1, b[1].1, max_relative = 1e-9);
    }

    #[test]
    fn p4_is_a_fixed_point_at_its_own_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_small(&mut rng, 3, 2);
        let model = CostModel::new(&s);
        let dec = random_interior(&mut rng, &s);
        let aux = aux_optimal(&model, &dec).unwrap();
        let cfg = InnerConfig::default();
        let (first, _) = solve_p4(&model, &aux, &dec, &cfg).unwrap();
        let (second, sweeps) = solve_p4(&model, &aux, &first, &cfg).unwrap();
        assert_eq!(sweeps, 1);
        let k1 = surrogate_k_unchecked(&model, &first, &aux);
        let k2 = surrogate_k_unchecked(&model, &second, &aux);
        assert!((k1 - k2).abs() <= 1e-10 * (1.0 + k1));
    }

    #[test]
    fn p4_descends_from_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let s = random_small(&mut rng, 3, 2);
            let model = CostModel::new(&s);
            let dec = random_interior(&mut rng, &s);
            let aux = aux_optimal(&model, &dec).unwrap();
            let (next, _) = solve_p4(&model, &aux, &dec, &InnerConfig::default()).unwrap();
            assert!(surrogate_k_unchecked(&model, &next, &aux) <= objective_h(&model, &dec) + 1e-10);
            assert!(model::check_feasibility(&s, &next, 1e-8).is_ok());
        }
    }

    #[test]
    fn residual_vanishes_at_analytic_single_variable_optimum() {
        // Only the user frequency matters: α fixed, no uplink or edge cost.
        let mut w = Weights::unit();
        w.omega_s = 0.0;
        let mut s = one_by_one(w);
        s.servers[0].kappa2 = 0.0;
        s.channel.payload_scale = 0.0;
        let model = CostModel::new(&s);
        let mut dec = model::midpoint_decision(&s, &Matrix::filled(1, 1, 1.0));
        dec.freq_user[0] = model.local[0].minimizer();
        dec.freq_edge[(0, 0)] = s.servers[0].f_max;
        let r = kkt_residual_with(&model, &dec, false);
        assert!(r <= 1e-10, "{r}");
    }
}
