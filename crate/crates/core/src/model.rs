//! Physical cost model: per-layer compute cost on users and edge servers,
//! FDMA uplink rate and energy, the stability bound, and the weighted
//! objective `H` shared by every solver in the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Upper clamp on the split depth is `layers * (1 - ALPHA_MARGIN_FRACTION)`
/// whenever the stability weight is positive.
pub const ALPHA_MARGIN_FRACTION: f64 = 1e-3;

/// Transmit power never drops below this fraction of `p_max`.
pub const POWER_FLOOR_FRACTION: f64 = 1e-9;

/// GPU frequencies never drop below this fraction of their cap.
pub const FREQ_FLOOR_FRACTION: f64 = 1e-9;

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    #[serde(rename = "layers")]
    pub total_layers: u32,
    #[serde(rename = "batch")]
    pub batch_size: u64,
    #[serde(rename = "hidden")]
    pub hidden_dim: u64,
    /// Lipschitz constant of the fine-tuning loss.
    #[serde(rename = "L")]
    pub lipschitz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserDevice {
    #[serde(rename = "d")]
    pub token_len: u64,
    pub cores: u32,
    #[serde(rename = "fpc")]
    pub flops_per_cycle: f64,
    #[serde(rename = "fmax")]
    pub f_max: f64,
    #[serde(rename = "pmax")]
    pub p_max: f64,
    pub kappa1: f64,
    #[serde(rename = "k")]
    pub dataset_size: u64,
    #[serde(rename = "pos")]
    pub position: [f64; 2],
}

impl UserDevice {
    /// FLOPs per cycle of the whole GPU.
    pub fn throughput(&self) -> f64 {
        f64::from(self.cores) * self.flops_per_cycle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeServer {
    pub cores: u32,
    #[serde(rename = "fpc")]
    pub flops_per_cycle: f64,
    #[serde(rename = "fmax")]
    pub f_max: f64,
    #[serde(rename = "bmax")]
    pub b_max: f64,
    pub kappa2: f64,
    #[serde(rename = "pos")]
    pub position: [f64; 2],
}

impl EdgeServer {
    pub fn throughput(&self) -> f64 {
        f64::from(self.cores) * self.flops_per_cycle
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    /// Linear power gain, users × servers.
    pub gains: Matrix,
    #[serde(rename = "sigma2")]
    pub noise_power: f64,
    /// Bits of intermediate result per input token.
    #[serde(rename = "eta")]
    pub payload_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub delay: f64,
    pub energy: f64,
    pub stability: f64,
}

impl Default for Normalizers {
    fn default() -> Self {
        Self {
            delay: 1.0,
            energy: 1.0,
            stability: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    #[serde(rename = "wt")]
    pub omega_t: f64,
    #[serde(rename = "we")]
    pub omega_e: f64,
    #[serde(rename = "ws")]
    pub omega_s: f64,
    pub normalizers: Normalizers,
}

impl Weights {
    pub fn unit() -> Self {
        Self {
            omega_t: 1.0,
            omega_e: 1.0,
            omega_s: 1.0,
            normalizers: Normalizers::default(),
        }
    }

    /// Weights divided by their reference values; these multiply raw
    /// seconds, joules and bound values inside the objective.
    pub fn effective(&self) -> EffectiveWeights {
        EffectiveWeights {
            delay: self.omega_t / self.normalizers.delay,
            energy: self.omega_e / self.normalizers.energy,
            stability: self.omega_s / self.normalizers.stability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveWeights {
    pub delay: f64,
    pub energy: f64,
    pub stability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub llm: LlmConfig,
    pub users: Vec<UserDevice>,
    pub servers: Vec<EdgeServer>,
    pub channel: Channel,
    pub weights: Weights,
}

/// One candidate allocation. Matrices are users × servers; entries of `bandwidth`
/// and `freq_edge` are only meaningful where `assoc` is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub alpha: Vec<f64>,
    pub power: Vec<f64>,
    pub bandwidth: Matrix,
    pub freq_user: Vec<f64>,
    pub freq_edge: Matrix,
    pub assoc: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCost {
    pub delay: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    pub user_cost: f64,
    pub edge_cost: f64,
    pub stability_cost: f64,
    /// `H`, the sum of the three weighted parts.
    pub total: f64,
    pub weighted_delay: f64,
    pub weighted_energy: f64,
    /// Total energy in joules: local compute, uplink, and edge compute.
    pub energy_j: f64,
    /// Total compute delay in seconds summed over users (the delay inside `H`).
    pub delay_s: f64,
    /// Sum of per-user stability bounds.
    pub stability_sum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Shape,
    AlphaRange,
    PowerRange,
    UserFreqRange,
    AssocRange,
    AssocRowSum,
    BandwidthSum,
    EdgeFreqSum,
    BandwidthPositive,
    EdgeFreqPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: ConstraintKind,
    pub user: Option<usize>,
    pub server: Option<usize>,
    /// How far outside the feasible set, in the constraint's own units.
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, constraint: ConstraintKind, user: Option<usize>, server: Option<usize>, amount: f64) {
        self.violations.push(Violation {
            constraint,
            user,
            server,
            amount,
        });
    }
}

impl std::fmt::Display for ViolationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(5) {
            write!(f, "; {:?}", v.constraint)?;
            if let Some(n) = v.user {
                write!(f, " user {n}")?;
            }
            if let Some(m) = v.server {
                write!(f, " server {m}")?;
            }
            write!(f, " by {:.3e}", v.amount)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("stability bound pole: alpha {alpha} reaches layer count {layers}")]
    Pole { alpha: f64, layers: u32 },
    #[error("user {user} is associated with server {server} over a zero-rate link")]
    InfeasibleLink { user: usize, server: usize },
    #[error("infeasible decision: {0}")]
    Infeasible(ViolationReport),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// `72 B d h^2 + 12 B d^2 h`, FLOPs to train one transformer layer on `d` tokens.
pub fn flops_per_layer(tokens: u64, llm: &LlmConfig) -> Result<u128, ModelError> {
    if tokens == 0 {
        return Err(ModelError::Domain {
            what: "token length",
            value: 0.0,
        });
    }
    let (b, d, h) = (
        u128::from(llm.batch_size),
        u128::from(tokens),
        u128::from(llm.hidden_dim),
    );
    Ok(72 * b * d * h * h + 12 * b * d * d * h)
}

/// Floating-point `psi(d)` for the hot paths. Callers guarantee `tokens >= 1`.
#[inline]
pub fn psi(tokens: u64, llm: &LlmConfig) -> f64 {
    let (b, d, h) = (llm.batch_size as f64, tokens as f64, llm.hidden_dim as f64);
    72.0 * b * d * h * h + 12.0 * b * d * d * h
}

fn layer_cost(flops: f64, throughput: f64, kappa: f64, freq: f64) -> LayerCost {
    let delay = flops / (freq * throughput);
    LayerCost {
        delay,
        energy: kappa * freq * freq * flops / throughput,
    }
}

/// Delay and energy for one user to train one layer at GPU frequency `freq`.
pub fn local_layer_cost(user: &UserDevice, freq: f64, llm: &LlmConfig) -> Result<LayerCost, ModelError> {
    if !(freq > 0.0) {
        return Err(ModelError::Domain {
            what: "user frequency",
            value: freq,
        });
    }
    let flops = flops_per_layer(user.token_len, llm)? as f64;
    Ok(layer_cost(flops, user.throughput(), user.kappa1, freq))
}

/// Delay and energy for a server to train one layer of a `tokens`-token job.
pub fn edge_layer_cost(
    server: &EdgeServer,
    freq: f64,
    tokens: u64,
    llm: &LlmConfig,
) -> Result<LayerCost, ModelError> {
    if !(freq > 0.0) {
        return Err(ModelError::Domain {
            what: "edge frequency",
            value: freq,
        });
    }
    let flops = flops_per_layer(tokens, llm)? as f64;
    Ok(layer_cost(flops, server.throughput(), server.kappa2, freq))
}

/// Shannon rate `b log2(1 + g p / (sigma2 b))` in bits/s.
pub fn uplink_rate(gain: f64, power: f64, bandwidth: f64, noise_power: f64) -> Result<f64, ModelError> {
    if !(bandwidth > 0.0) {
        return Err(ModelError::Domain {
            what: "bandwidth",
            value: bandwidth,
        });
    }
    if !(power >= 0.0) {
        return Err(ModelError::Domain {
            what: "transmit power",
            value: power,
        });
    }
    Ok(rate(gain, power, bandwidth, noise_power))
}

#[inline]
pub(crate) fn rate(gain: f64, power: f64, bandwidth: f64, noise_power: f64) -> f64 {
    bandwidth * (gain * power / (noise_power * bandwidth)).ln_1p() / LN_2
}

/// Size in bits of the intermediate result user `n` uploads.
#[inline]
pub fn payload_bits(user: &UserDevice, channel: &Channel) -> f64 {
    channel.payload_scale * user.token_len as f64
}

/// Uplink energy of user `n`, summed over its (possibly fractional) associations.
pub fn uplink_energy(scenario: &Scenario, n: usize, dec: &Decision) -> Result<f64, ModelError> {
    let user = &scenario.users[n];
    let ch = &scenario.channel;
    let bits = payload_bits(user, ch);
    let p = dec.power[n];
    let mut energy = 0.0;
    for m in 0..scenario.servers.len() {
        let chi = dec.assoc[(n, m)];
        if chi <= 0.0 {
            continue;
        }
        let b = dec.bandwidth[(n, m)];
        let r = if b > 0.0 { rate(ch.gains[(n, m)], p, b, ch.noise_power) } else { 0.0 };
        if !(r > 0.0) {
            if p == 0.0 || bits == 0.0 {
                continue;
            }
            return Err(ModelError::InfeasibleLink { user: n, server: m });
        }
        energy += chi * bits * p / r;
    }
    Ok(energy)
}

/// Stability bound `2 L^2 / (k (1 - alpha / layers))`.
pub fn as_bound(lipschitz: f64, dataset_size: u64, alpha: f64, layers: u32) -> Result<f64, ModelError> {
    if !(alpha >= 1.0) {
        return Err(ModelError::Domain { what: "alpha", value: alpha });
    }
    if alpha >= f64::from(layers) {
        return Err(ModelError::Pole { alpha, layers });
    }
    if dataset_size == 0 {
        return Err(ModelError::Domain {
            what: "dataset size",
            value: 0.0,
        });
    }
    Ok(bound_unchecked(lipschitz, dataset_size, alpha, f64::from(layers)))
}

#[inline]
pub(crate) fn bound_unchecked(lipschitz: f64, dataset_size: u64, alpha: f64, layers: f64) -> f64 {
    2.0 * lipschitz * lipschitz / (dataset_size as f64 * (1.0 - alpha / layers))
}

impl LlmConfig {
    pub fn layers(&self) -> f64 {
        f64::from(self.total_layers)
    }

    /// Largest admissible continuous split depth.
    pub fn alpha_max(&self, stability_weight: f64) -> f64 {
        let layers = self.layers();
        if stability_weight > 0.0 {
            layers * (1.0 - ALPHA_MARGIN_FRACTION)
        } else {
            layers
        }
    }
}

impl Scenario {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn alpha_max(&self) -> f64 {
        self.llm.alpha_max(self.weights.omega_s)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidScenario(msg));
        let llm = &self.llm;
        if llm.total_layers < 2 || llm.batch_size == 0 || llm.hidden_dim == 0 {
            return bad(format!(
                "llm needs layers >= 2, batch >= 1, hidden >= 1 (got {}, {}, {})",
                llm.total_layers, llm.batch_size, llm.hidden_dim
            ));
        }
        if !(llm.lipschitz > 0.0 && llm.lipschitz.is_finite()) {
            return bad(format!("llm.L must be positive, got {}", llm.lipschitz));
        }
        if self.users.is_empty() || self.servers.is_empty() {
            return bad("scenario needs at least one user and one server".into());
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        for (n, u) in self.users.iter().enumerate() {
            let ok = u.token_len >= 1
                && u.cores >= 1
                && positive(u.flops_per_cycle)
                && positive(u.f_max)
                && positive(u.p_max)
                && u.kappa1 >= 0.0
                && u.kappa1.is_finite()
                && u.dataset_size >= 1
                && u.position.iter().all(|x| x.is_finite());
            if !ok {
                return bad(format!("users[{n}] has a non-positive or non-finite field"));
            }
        }
        for (m, s) in self.servers.iter().enumerate() {
            let ok = s.cores >= 1
                && positive(s.flops_per_cycle)
                && positive(s.f_max)
                && positive(s.b_max)
                && s.kappa2 >= 0.0
                && s.kappa2.is_finite()
                && s.position.iter().all(|x| x.is_finite());
            if !ok {
                return bad(format!("servers[{m}] has a non-positive or non-finite field"));
            }
        }
        let ch = &self.channel;
        if ch.gains.shape() != (self.users.len(), self.servers.len()) {
            return bad(format!(
                "channel.gains is {:?}, expected ({}, {})",
                ch.gains.shape(),
                self.users.len(),
                self.servers.len()
            ));
        }
        if !ch.gains.as_slice().iter().all(|&g| positive(g)) {
            return bad("channel.gains must be positive".into());
        }
        if !positive(ch.noise_power) || !positive(ch.payload_scale) {
            return bad("channel.sigma2 and channel.eta must be positive".into());
        }
        let w = &self.weights;
        let weights = [w.omega_t, w.omega_e, w.omega_s];
        if weights.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return bad("weights must be finite and non-negative".into());
        }
        if weights.iter().all(|x| *x == 0.0) {
            return bad("at least one weight must be positive".into());
        }
        let nz = &w.normalizers;
        if ![nz.delay, nz.energy, nz.stability].iter().all(|&x| positive(x)) {
            return bad("weights.normalizers must be positive".into());
        }
        Ok(())
    }
}

impl Decision {
    /// Empty decision with the right shapes; callers fill in values.
    pub fn zeros(num_users: usize, num_servers: usize) -> Self {
        Self {
            alpha: vec![0.0; num_users],
            power: vec![0.0; num_users],
            bandwidth: Matrix::zeros(num_users, num_servers),
            freq_user: vec![0.0; num_users],
            freq_edge: Matrix::zeros(num_users, num_servers),
            assoc: Matrix::zeros(num_users, num_servers),
        }
    }

    /// Indices of servers user `n` is (fractionally) associated with.
    pub fn servers_of(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        self.assoc.row(n).iter().enumerate().filter(|(_, &c)| c > 0.0).map(|(m, _)| m)
    }

    /// Indices of users associated with server `m`.
    pub fn users_of(&self, m: usize) -> Vec<usize> {
        (0..self.assoc.rows()).filter(|&n| self.assoc[(n, m)] > 0.0).collect()
    }
}

/// Checks every allocation constraint. Box constraints use an absolute
/// relative tolerance of `tol` on the bound; sums use `tol` relative to capacity.
pub fn check_feasibility(scenario: &Scenario, dec: &Decision, tol: f64) -> Result<(), ViolationReport> {
    let (n_users, n_servers) = (scenario.num_users(), scenario.num_servers());
    let mut report = ViolationReport::default();
    let shape_ok = dec.alpha.len() == n_users
        && dec.power.len() == n_users
        && dec.freq_user.len() == n_users
        && dec.bandwidth.shape() == (n_users, n_servers)
        && dec.freq_edge.shape() == (n_users, n_servers)
        && dec.assoc.shape() == (n_users, n_servers);
    if !shape_ok {
        report.push(ConstraintKind::Shape, None, None, f64::NAN);
        return Err(report);
    }
    let alpha_hi = scenario.alpha_max();
    let layers = scenario.llm.layers();
    for (n, user) in scenario.users.iter().enumerate() {
        let a = dec.alpha[n];
        let lo_gap = 1.0 - a;
        let hi_gap = a - alpha_hi;
        if !a.is_finite() || lo_gap > tol * layers || hi_gap > tol * layers {
            report.push(ConstraintKind::AlphaRange, Some(n), None, lo_gap.max(hi_gap));
        }
        let p = dec.power[n];
        if !(p > 0.0) || p > user.p_max * (1.0 + tol) {
            report.push(ConstraintKind::PowerRange, Some(n), None, (p - user.p_max).max(-p));
        }
        let f = dec.freq_user[n];
        if !(f > 0.0) || f > user.f_max * (1.0 + tol) {
            report.push(ConstraintKind::UserFreqRange, Some(n), None, (f - user.f_max).max(-f));
        }
        let mut row_sum = 0.0;
        for m in 0..n_servers {
            let chi = dec.assoc[(n, m)];
            if !(-tol..=1.0 + tol).contains(&chi) {
                report.push(ConstraintKind::AssocRange, Some(n), Some(m), chi.abs().max(chi - 1.0));
            }
            if chi > 0.0 {
                if !(dec.bandwidth[(n, m)] > 0.0) {
                    report.push(ConstraintKind::BandwidthPositive, Some(n), Some(m), -dec.bandwidth[(n, m)]);
                }
                if !(dec.freq_edge[(n, m)] > 0.0) {
                    report.push(ConstraintKind::EdgeFreqPositive, Some(n), Some(m), -dec.freq_edge[(n, m)]);
                }
            }
            row_sum += chi;
        }
        if (row_sum - 1.0).abs() > tol {
            report.push(ConstraintKind::AssocRowSum, Some(n), None, row_sum - 1.0);
        }
    }
    for (m, server) in scenario.servers.iter().enumerate() {
        let users = dec.users_of(m);
        if users.is_empty() {
            continue;
        }
        let b_sum: f64 = users.iter().map(|&n| dec.assoc[(n, m)] * dec.bandwidth[(n, m)]).sum();
        if (b_sum - server.b_max).abs() > tol * server.b_max {
            report.push(ConstraintKind::BandwidthSum, None, Some(m), b_sum - server.b_max);
        }
        // Users training every layer locally place no load on the server,
        // so only a shortfall or overload of the shared cap is reported.
        let f_sum: f64 = users.iter().map(|&n| dec.assoc[(n, m)] * dec.freq_edge[(n, m)]).sum();
        let any_active = users.iter().any(|&n| dec.alpha[n] < layers);
        if any_active && (f_sum - server.f_max).abs() > tol * server.f_max {
            report.push(ConstraintKind::EdgeFreqSum, None, Some(m), f_sum - server.f_max);
        }
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

/// Objective breakdown without constraint checks; domain problems (poles,
/// zero-rate links) still error.
pub fn evaluate(scenario: &Scenario, dec: &Decision) -> Result<ObjectiveBreakdown, ModelError> {
    let w = scenario.weights.effective();
    let llm = &scenario.llm;
    let layers = llm.layers();
    let mut delay_s = 0.0;
    let mut local_energy = 0.0;
    let mut uplink = 0.0;
    let mut edge_delay = 0.0;
    let mut edge_energy = 0.0;
    let mut stability_sum = 0.0;
    for (n, user) in scenario.users.iter().enumerate() {
        let alpha = dec.alpha[n];
        let local = local_layer_cost(user, dec.freq_user[n], llm)?;
        delay_s += alpha * local.delay;
        local_energy += alpha * local.energy;
        uplink += uplink_energy(scenario, n, dec)?;
        let edge_layers = layers - alpha;
        if edge_layers > 0.0 {
            for m in dec.servers_of(n) {
                let chi = dec.assoc[(n, m)];
                let cost = edge_layer_cost(&scenario.servers[m], dec.freq_edge[(n, m)], user.token_len, llm)?;
                edge_delay += chi * edge_layers * cost.delay;
                edge_energy += chi * edge_layers * cost.energy;
            }
        }
        if w.stability > 0.0 {
            stability_sum += as_bound(llm.lipschitz, user.dataset_size, alpha, llm.total_layers)?;
        } else if alpha < layers {
            stability_sum += bound_unchecked(llm.lipschitz, user.dataset_size, alpha, layers);
        }
    }
    let user_cost = w.delay * delay_s + w.energy * (local_energy + uplink);
    let edge_cost = w.delay * edge_delay + w.energy * edge_energy;
    let stability_cost = if w.stability > 0.0 { w.stability * stability_sum } else { 0.0 };
    let energy_j = local_energy + uplink + edge_energy;
    let delay_total = delay_s + edge_delay;
    Ok(ObjectiveBreakdown {
        user_cost,
        edge_cost,
        stability_cost,
        total: user_cost + edge_cost + stability_cost,
        weighted_delay: w.delay * delay_total,
        weighted_energy: w.energy * energy_j,
        energy_j,
        delay_s: delay_total,
        stability_sum,
    })
}

/// `H` with its breakdown, after verifying feasibility to `1e-8`.
pub fn total_objective(scenario: &Scenario, dec: &Decision) -> Result<ObjectiveBreakdown, ModelError> {
    check_feasibility(scenario, dec, 1e-8).map_err(ModelError::Infeasible)?;
    evaluate(scenario, dec)
}

/// Per-user figures used for reporting and normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetrics {
    /// Local compute + uplink + edge compute, in seconds.
    pub end_to_end_delay: f64,
    /// Local compute + uplink + edge compute, in joules.
    pub energy: f64,
    pub bound: f64,
}

pub fn user_metrics(scenario: &Scenario, dec: &Decision) -> Result<Vec<UserMetrics>, ModelError> {
    let llm = &scenario.llm;
    let ch = &scenario.channel;
    let layers = llm.layers();
    scenario
        .users
        .iter()
        .enumerate()
        .map(|(n, user)| {
            let alpha = dec.alpha[n];
            let local = local_layer_cost(user, dec.freq_user[n], llm)?;
            let mut delay = alpha * local.delay;
            let mut energy = alpha * local.energy + uplink_energy(scenario, n, dec)?;
            let bits = payload_bits(user, ch);
            for m in dec.servers_of(n) {
                let chi = dec.assoc[(n, m)];
                let r = rate(ch.gains[(n, m)], dec.power[n], dec.bandwidth[(n, m)], ch.noise_power);
                if r > 0.0 {
                    delay += chi * bits / r;
                }
                if layers > alpha {
                    let cost = edge_layer_cost(&scenario.servers[m], dec.freq_edge[(n, m)], user.token_len, llm)?;
                    delay += chi * (layers - alpha) * cost.delay;
                    energy += chi * (layers - alpha) * cost.energy;
                }
            }
            let bound = if alpha < layers {
                bound_unchecked(llm.lipschitz, user.dataset_size, alpha, layers)
            } else {
                f64::INFINITY
            };
            Ok(UserMetrics {
                end_to_end_delay: delay,
                energy,
                bound,
            })
        })
        .collect()
}

/// Midpoint of every box (`alpha = layers/2`, half power, half frequency) with
/// capacities split equally over the users associated with each server.
pub fn midpoint_decision(scenario: &Scenario, assoc: &Matrix) -> Decision {
    let (n_users, n_servers) = (scenario.num_users(), scenario.num_servers());
    let mut dec = Decision::zeros(n_users, n_servers);
    dec.assoc = assoc.clone();
    for (n, user) in scenario.users.iter().enumerate() {
        dec.alpha[n] = 0.5 * scenario.llm.layers();
        dec.power[n] = 0.5 * user.p_max;
        dec.freq_user[n] = 0.5 * user.f_max;
    }
    equal_split(scenario, &mut dec);
    dec
}

/// Splits each server's bandwidth and frequency equally (in the `chi`-weighted
/// sense) over its associated users.
pub fn equal_split(scenario: &Scenario, dec: &mut Decision) {
    for (m, server) in scenario.servers.iter().enumerate() {
        let users = dec.users_of(m);
        let weight: f64 = users.iter().map(|&n| dec.assoc[(n, m)]).sum();
        for n in 0..scenario.num_users() {
            if dec.assoc[(n, m)] > 0.0 {
                dec.bandwidth[(n, m)] = server.b_max / weight;
                dec.freq_edge[(n, m)] = server.f_max / weight;
            } else {
                dec.bandwidth[(n, m)] = 0.0;
                dec.freq_edge[(n, m)] = 0.0;
            }
        }
    }
}

/// Reference values that make unit weights comparable: the largest single-user
/// delay, energy and stability bound at the midpoint decision.
pub fn reference_normalizers(scenario: &Scenario, assoc: &Matrix) -> Result<Normalizers, ModelError> {
    let dec = midpoint_decision(scenario, assoc);
    let metrics = user_metrics(scenario, &dec)?;
    let layers = scenario.llm.layers();
    let llm = &scenario.llm;
    let mut out = Normalizers {
        delay: 0.0,
        energy: 0.0,
        stability: 0.0,
    };
    for (n, user) in scenario.users.iter().enumerate() {
        let local = local_layer_cost(user, dec.freq_user[n], llm)?;
        let mut delay = dec.alpha[n] * local.delay;
        for m in dec.servers_of(n) {
            let cost = edge_layer_cost(&scenario.servers[m], dec.freq_edge[(n, m)], user.token_len, llm)?;
            delay += dec.assoc[(n, m)] * (layers - dec.alpha[n]) * cost.delay;
        }
        out.delay = out.delay.max(delay);
        out.energy = out.energy.max(metrics[n].energy);
        out.stability = out.stability.max(metrics[n].bound);
    }
    Ok(out)
}
