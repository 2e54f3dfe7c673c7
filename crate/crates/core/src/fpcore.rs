//! Quadratic-transform surrogate `K` of the objective `H` for a fixed
//! association, its closed-form auxiliary updates, and analytic gradients
//! of both `K` and `H`.
//!
//! For fixed association the objective is
//!
//! ```text
//! H = Σ_n α_n A_n(f_n) + Σ_{n,m} χ (Υ-α_n) B_nm(f_nm) + ω_e Σ χ s_n p_n / r_nm + Σ_n S_n / (1 - α_n/Υ)
//! ```
//!
//! and every product or ratio is replaced by `x² w + c² / (4 w)`, which is
//! jointly convex in the decision variables for fixed `w` and equals `x c`
//! at `w = c / (2 x)`.

use thiserror::Error;

use crate::matrix::Matrix;
use crate::model::{self, Decision, Scenario};

const LN_2: f64 = std::f64::consts::LN_2;

#[derive(Debug, Error, PartialEq)]
pub enum FpError {
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },
    #[error("auxiliary update hits a pole at user {user}: {reason}")]
    Pole { user: usize, reason: &'static str },
    #[error("gradient undefined at user {user}: {reason}")]
    GradientUndefined { user: usize, reason: &'static str },
}

/// Per-layer weighted cost `t / f + e f²` of one compute job at frequency `f`.
/// This is `A(f)` for a user and `B(f)` for a user-server pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerLayerCost {
    pub delay_coef: f64,
    pub energy_coef: f64,
}

impl PerLayerCost {
    #[inline]
    pub fn value(&self, f: f64) -> f64 {
        self.delay_coef / f + self.energy_coef * f * f
    }

    #[inline]
    pub fn derivative(&self, f: f64) -> f64 {
        -self.delay_coef / (f * f) + 2.0 * self.energy_coef * f
    }

    #[inline]
    pub fn second_derivative(&self, f: f64) -> f64 {
        2.0 * self.delay_coef / (f * f * f) + 2.0 * self.energy_coef
    }

    /// Unconstrained minimizer `(t / 2e)^(1/3)`; infinite when energy is free.
    pub fn minimizer(&self) -> f64 {
        if self.energy_coef > 0.0 {
            (self.delay_coef / (2.0 * self.energy_coef)).cbrt()
        } else {
            f64::INFINITY
        }
    }

    pub fn is_zero(&self) -> bool {
        self.delay_coef == 0.0 && self.energy_coef == 0.0
    }
}

/// Scenario constants in the form the surrogate needs, with weights and
/// normalizers already folded in.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub layers: f64,
    pub alpha_max: f64,
    pub local: Vec<PerLayerCost>,
    edge_delay: Matrix,
    edge_energy: Matrix,
    /// `ω_s' 2 L² / k_n`; the stability term is `stab_n / (1 - α/Υ)`.
    pub stability: Vec<f64>,
    /// Payload bits per user.
    pub bits: Vec<f64>,
    pub energy_weight: f64,
    pub gains: Matrix,
    pub noise_power: f64,
    pub p_max: Vec<f64>,
    pub f_max_user: Vec<f64>,
    pub f_max_edge: Vec<f64>,
    pub b_max: Vec<f64>,
}

impl CostModel {
    pub fn new(scenario: &Scenario) -> Self {
        let w = scenario.weights.effective();
        let llm = &scenario.llm;
        let (n_users, n_servers) = (scenario.num_users(), scenario.num_servers());
        let psi: Vec<f64> = scenario.users.iter().map(|u| model::psi(u.token_len, llm)).collect();
        let local = scenario
            .users
            .iter()
            .zip(&psi)
            .map(|(u, &flops)| PerLayerCost {
                delay_coef: w.delay * flops / u.throughput(),
                energy_coef: w.energy * u.kappa1 * flops / u.throughput(),
            })
            .collect();
        let edge_delay = Matrix::from_fn(n_users, n_servers, |n, m| {
            w.delay * psi[n] / scenario.servers[m].throughput()
        });
        let edge_energy = Matrix::from_fn(n_users, n_servers, |n, m| {
            let s = &scenario.servers[m];
            w.energy * s.kappa2 * psi[n] / s.throughput()
        });
        let stability = scenario
            .users
            .iter()
            .map(|u| {
                if w.stability > 0.0 {
                    w.stability * 2.0 * llm.lipschitz * llm.lipschitz / u.dataset_size as f64
                } else {
                    0.0
                }
            })
            .collect();
        Self {
            layers: llm.layers(),
            alpha_max: scenario.alpha_max(),
            local,
            edge_delay,
            edge_energy,
            stability,
            bits: scenario.users.iter().map(|u| model::payload_bits(u, &scenario.channel)).collect(),
            energy_weight: w.energy,
            gains: scenario.channel.gains.clone(),
            noise_power: scenario.channel.noise_power,
            p_max: scenario.users.iter().map(|u| u.p_max).collect(),
            f_max_user: scenario.users.iter().map(|u| u.f_max).collect(),
            f_max_edge: scenario.servers.iter().map(|s| s.f_max).collect(),
            b_max: scenario.servers.iter().map(|s| s.b_max).collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.local.len()
    }

    pub fn num_servers(&self) -> usize {
        self.b_max.len()
    }

    #[inline]
    pub fn edge(&self, n: usize, m: usize) -> PerLayerCost {
        PerLayerCost {
            delay_coef: self.edge_delay[(n, m)],
            energy_coef: self.edge_energy[(n, m)],
        }
    }

    #[inline]
    pub fn rate(&self, n: usize, m: usize, p: f64, b: f64) -> f64 {
        model::rate(self.gains[(n, m)], p, b, self.noise_power)
    }

    /// Rate and its partials in power and bandwidth.
    #[inline]
    pub fn rate_with_partials(&self, n: usize, m: usize, p: f64, b: f64) -> (f64, f64, f64) {
        let g = self.gains[(n, m)];
        let x = g * p / (self.noise_power * b);
        let r = b * x.ln_1p() / LN_2;
        let dr_dp = g / (self.noise_power * (1.0 + x) * LN_2);
        let dr_db = log_gap(x) / LN_2;
        (r, dr_dp, dr_db)
    }

    /// `S_n / (1 - α/Υ)`, zero when the stability weight is zero.
    #[inline]
    pub fn stability_term(&self, n: usize, alpha: f64) -> f64 {
        let s = self.stability[n];
        if s == 0.0 {
            0.0
        } else {
            s / (1.0 - alpha / self.layers)
        }
    }

    #[inline]
    pub fn stability_slope(&self, n: usize, alpha: f64) -> f64 {
        let s = self.stability[n];
        if s == 0.0 {
            0.0
        } else {
            let gap = 1.0 - alpha / self.layers;
            s / (self.layers * gap * gap)
        }
    }
}

/// `ln(1 + x) - x / (1 + x)` without cancellation for small `x`.
#[inline]
pub(crate) fn log_gap(x: f64) -> f64 {
    if x < 1e-2 {
        // Σ_{k≥2} (-1)^k (k-1)/k x^k
        let mut term = x * x;
        let mut sum = 0.0;
        for k in 2..14 {
            let kf = k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (kf - 1.0) / kf * term;
            term *= x;
        }
        sum
    } else {
        x.ln_1p() - x / (1.0 + x)
    }
}

/// `x² w + c² / (4 w)` extended to `w ∈ {0, ∞}` by its limits.
#[inline]
pub(crate) fn quad_recip(x: f64, w: f64, c: f64) -> f64 {
    if w == 0.0 {
        if c == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else if w.is_infinite() {
        if x == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        x * x * w + c * c / (4.0 * w)
    }
}

/// Auxiliary variables `z` (per user), `ν` and `q` (per user-server pair).
/// Entries of unassociated pairs are zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxVars {
    pub z: Vec<f64>,
    pub nu: Matrix,
    pub q: Matrix,
}

impl AuxVars {
    pub fn validate(&self, dec: &Decision) -> Result<(), FpError> {
        for (n, &z) in self.z.iter().enumerate() {
            if !(z >= 0.0) {
                return Err(FpError::Domain { what: "z", value: z });
            }
            for m in dec.servers_of(n) {
                let (nu, q) = (self.nu[(n, m)], self.q[(n, m)]);
                if !(nu > 0.0) {
                    return Err(FpError::Domain { what: "nu", value: nu });
                }
                if !(q >= 0.0) {
                    return Err(FpError::Domain { what: "q", value: q });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub alpha: Vec<f64>,
    pub power: Vec<f64>,
    pub bandwidth: Matrix,
    pub freq_user: Vec<f64>,
    pub freq_edge: Matrix,
}

impl GradientBundle {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            alpha: vec![0.0; n],
            power: vec![0.0; n],
            bandwidth: Matrix::zeros(n, m),
            freq_user: vec![0.0; n],
            freq_edge: Matrix::zeros(n, m),
        }
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.components().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &GradientBundle) -> f64 {
        self.components()
            .zip(other.components())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn components(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha
            .iter()
            .chain(&self.power)
            .chain(self.bandwidth.as_slice())
            .chain(&self.freq_user)
            .chain(self.freq_edge.as_slice())
            .copied()
    }
}

/// `A(f)`: weighted per-layer local cost of `user` at frequency `f`.
pub fn a_of(model: &CostModel, user: usize, f: f64) -> Result<f64, FpError> {
    if !(f > 0.0) {
        return Err(FpError::Domain { what: "user frequency", value: f });
    }
    Ok(model.local[user].value(f))
}

/// `B(f)`: weighted per-layer edge cost of `user`'s job on `server` at frequency `f`.
pub fn b_of(model: &CostModel, user: usize, server: usize, f: f64) -> Result<f64, FpError> {
    if !(f > 0.0) {
        return Err(FpError::Domain { what: "edge frequency", value: f });
    }
    Ok(model.edge(user, server).value(f))
}

/// Closed-form minimizers of `K` in the auxiliaries for fixed decision.
pub fn aux_optimal(model: &CostModel, dec: &Decision) -> Result<AuxVars, FpError> {
    let (n_users, n_servers) = (model.num_users(), model.num_servers());
    let mut aux = AuxVars {
        z: vec![0.0; n_users],
        nu: Matrix::zeros(n_users, n_servers),
        q: Matrix::zeros(n_users, n_servers),
    };
    for n in 0..n_users {
        let alpha = dec.alpha[n];
        if !(alpha > 0.0) {
            return Err(FpError::Pole { user: n, reason: "alpha must be positive" });
        }
        aux.z[n] = a_of(model, n, dec.freq_user[n])? / (2.0 * alpha);
        let edge_layers = model.layers - alpha;
        for m in dec.servers_of(n) {
            aux.q[(n, m)] = if edge_layers > 0.0 {
                b_of(model, n, m, dec.freq_edge[(n, m)])? / (2.0 * edge_layers)
            } else {
                f64::INFINITY
            };
            let p = dec.power[n];
            let r = if dec.bandwidth[(n, m)] > 0.0 {
                model.rate(n, m, p, dec.bandwidth[(n, m)])
            } else {
                0.0
            };
            if !(r > 0.0 && p > 0.0) {
                return Err(FpError::Pole { user: n, reason: "zero uplink rate on an associated link" });
            }
            aux.nu[(n, m)] = 1.0 / (2.0 * p * model.bits[n] * r);
        }
    }
    Ok(aux)
}

/// Terms of `K` that depend on `α_n` alone.
#[inline]
pub fn alpha_block(model: &CostModel, dec: &Decision, aux: &AuxVars, n: usize, alpha: f64) -> f64 {
    let edge_layers = model.layers - alpha;
    let mut v = alpha * alpha * aux.z[n] + model.stability_term(n, alpha);
    for m in dec.servers_of(n) {
        let q = aux.q[(n, m)];
        if q.is_infinite() {
            if edge_layers != 0.0 {
                return f64::INFINITY;
            }
        } else {
            v += dec.assoc[(n, m)] * edge_layers * edge_layers * q;
        }
    }
    v
}

/// `A(f)² / (4 z)`.
#[inline]
pub fn user_freq_block(model: &CostModel, aux: &AuxVars, n: usize, f: f64) -> f64 {
    quad_recip(0.0, aux.z[n], model.local[n].value(f))
}

/// `χ B(f)² / (4 q)` for one pair.
#[inline]
pub fn edge_freq_term(model: &CostModel, dec: &Decision, aux: &AuxVars, n: usize, m: usize, f: f64) -> f64 {
    let chi = dec.assoc[(n, m)];
    chi * quad_recip(0.0, aux.q[(n, m)], model.edge(n, m).value(f))
}

/// `ω_e χ ((p s)² ν + 1 / (4 r² ν))` for one pair.
#[inline]
pub fn uplink_term(model: &CostModel, dec: &Decision, aux: &AuxVars, n: usize, m: usize, p: f64, b: f64) -> f64 {
    if model.energy_weight == 0.0 {
        return 0.0;
    }
    let chi = dec.assoc[(n, m)];
    let r = model.rate(n, m, p, b);
    let nu = aux.nu[(n, m)];
    let ps = p * model.bits[n];
    model.energy_weight * chi * (ps * ps * nu + 1.0 / (4.0 * r * r * nu))
}

/// Surrogate objective `K(decision, aux)` for the decision's association.
pub fn surrogate_k(model: &CostModel, dec: &Decision, aux: &AuxVars) -> Result<f64, FpError> {
    aux.validate(dec)?;
    Ok(surrogate_k_unchecked(model, dec, aux))
}

pub(crate) fn surrogate_k_unchecked(model: &CostModel, dec: &Decision, aux: &AuxVars) -> f64 {
    let mut k = 0.0;
    for n in 0..model.num_users() {
        k += alpha_block(model, dec, aux, n, dec.alpha[n]);
        k += user_freq_block(model, aux, n, dec.freq_user[n]);
        for m in dec.servers_of(n) {
            k += edge_freq_term(model, dec, aux, n, m, dec.freq_edge[(n, m)]);
            k += uplink_term(model, dec, aux, n, m, dec.power[n], dec.bandwidth[(n, m)]);
        }
    }
    k
}

/// Fast `H` for a feasible decision; agrees with [`model::evaluate`].
pub fn objective_h(model: &CostModel, dec: &Decision) -> f64 {
    let mut h = 0.0;
    for n in 0..model.num_users() {
        let alpha = dec.alpha[n];
        h += alpha * model.local[n].value(dec.freq_user[n]) + model.stability_term(n, alpha);
        let edge_layers = model.layers - alpha;
        for m in dec.servers_of(n) {
            let chi = dec.assoc[(n, m)];
            if edge_layers > 0.0 {
                h += chi * edge_layers * model.edge(n, m).value(dec.freq_edge[(n, m)]);
            }
            if model.energy_weight > 0.0 {
                let r = model.rate(n, m, dec.power[n], dec.bandwidth[(n, m)]);
                h += model.energy_weight * chi * model.bits[n] * dec.power[n] / r;
            }
        }
    }
    h
}

fn check_interior(model: &CostModel, dec: &Decision) -> Result<(), FpError> {
    for n in 0..model.num_users() {
        if !(dec.alpha[n] > 0.0) || (model.stability[n] > 0.0 && dec.alpha[n] >= model.layers) {
            return Err(FpError::GradientUndefined { user: n, reason: "alpha on a pole" });
        }
        if !(dec.power[n] > 0.0) || !(dec.freq_user[n] > 0.0) {
            return Err(FpError::GradientUndefined { user: n, reason: "power or frequency not positive" });
        }
        for m in dec.servers_of(n) {
            if !(dec.bandwidth[(n, m)] > 0.0) || !(dec.freq_edge[(n, m)] > 0.0) {
                return Err(FpError::GradientUndefined { user: n, reason: "zero bandwidth or edge frequency" });
            }
        }
    }
    Ok(())
}

/// Analytic gradient of `K` in the decision variables for fixed auxiliaries.
pub fn grad_k(model: &CostModel, dec: &Decision, aux: &AuxVars) -> Result<GradientBundle, FpError> {
    check_interior(model, dec)?;
    aux.validate(dec)?;
    let (n_users, n_servers) = (model.num_users(), model.num_servers());
    let mut g = GradientBundle::zeros(n_users, n_servers);
    let we = model.energy_weight;
    for n in 0..n_users {
        let alpha = dec.alpha[n];
        let edge_layers = model.layers - alpha;
        let mut d_alpha = 2.0 * aux.z[n] * alpha + model.stability_slope(n, alpha);
        let z = aux.z[n];
        if z > 0.0 {
            let a = model.local[n];
            let f = dec.freq_user[n];
            g.freq_user[n] = a.value(f) * a.derivative(f) / (2.0 * z);
        }
        let p = dec.power[n];
        let s = model.bits[n];
        for m in dec.servers_of(n) {
            let chi = dec.assoc[(n, m)];
            let q = aux.q[(n, m)];
            if q.is_finite() {
                d_alpha -= 2.0 * chi * q * edge_layers;
                if q > 0.0 {
                    let b = model.edge(n, m);
                    let f = dec.freq_edge[(n, m)];
                    g.freq_edge[(n, m)] = chi * b.value(f) * b.derivative(f) / (2.0 * q);
                }
            }
            if we > 0.0 {
                let nu = aux.nu[(n, m)];
                let (r, dr_dp, dr_db) = model.rate_with_partials(n, m, p, dec.bandwidth[(n, m)]);
                let common = 1.0 / (2.0 * nu * r * r * r);
                g.power[n] += we * chi * (2.0 * s * s * nu * p - dr_dp * common);
                g.bandwidth[(n, m)] = -we * chi * dr_db * common;
            }
        }
        g.alpha[n] = d_alpha;
    }
    Ok(g)
}

/// Analytic gradient of `H`.
pub fn grad_h(model: &CostModel, dec: &Decision) -> Result<GradientBundle, FpError> {
    check_interior(model, dec)?;
    let (n_users, n_servers) = (model.num_users(), model.num_servers());
    let mut g = GradientBundle::zeros(n_users, n_servers);
    let we = model.energy_weight;
    for n in 0..n_users {
        let alpha = dec.alpha[n];
        let edge_layers = model.layers - alpha;
        let a = model.local[n];
        let fu = dec.freq_user[n];
        let mut d_alpha = a.value(fu) + model.stability_slope(n, alpha);
        g.freq_user[n] = alpha * a.derivative(fu);
        let p = dec.power[n];
        let s = model.bits[n];
        for m in dec.servers_of(n) {
            let chi = dec.assoc[(n, m)];
            let b = model.edge(n, m);
            let fe = dec.freq_edge[(n, m)];
            d_alpha -= chi * b.value(fe);
            g.freq_edge[(n, m)] = chi * edge_layers * b.derivative(fe);
            if we > 0.0 {
                let bw = dec.bandwidth[(n, m)];
                let (r, _, dr_db) = model.rate_with_partials(n, m, p, bw);
                // r - p ∂r/∂p = b ∂r/∂b
                g.power[n] += we * chi * s * bw * dr_db / (r * r);
                g.bandwidth[(n, m)] = -we * chi * s * p * dr_db / (r * r);
            }
        }
        g.alpha[n] = d_alpha;
    }
    Ok(g)
}
