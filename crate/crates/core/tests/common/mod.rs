#![allow(dead_code)]

pub mod oracle;

use edgetune_core::matrix::Matrix;
use edgetune_core::model::{Channel, Decision, EdgeServer, LlmConfig, Normalizers, Scenario, UserDevice, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Small scenario with unit-scale physics, so that delay, energy, uplink and
/// stability terms all have comparable magnitude.
pub fn small_scenario(rng: &mut ChaCha8Rng, n_users: usize, n_servers: usize) -> Scenario {
    let users = (0..n_users)
        .map(|_| UserDevice {
            token_len: rng.random_range(1..4),
            cores: rng.random_range(1..4),
            flops_per_cycle: 1.0,
            f_max: rng.random_range(5.0..20.0),
            p_max: rng.random_range(1.0..2.0),
            kappa1: rng.random_range(0.01..0.1),
            dataset_size: rng.random_range(1..10),
            position: [0.0; 2],
        })
        .collect();
    let servers = (0..n_servers)
        .map(|_| EdgeServer {
            cores: rng.random_range(4..10),
            flops_per_cycle: 2.0,
            f_max: rng.random_range(20.0..50.0),
            b_max: rng.random_range(1.0..3.0),
            kappa2: rng.random_range(0.001..0.01),
            position: [0.0; 2],
        })
        .collect();
    Scenario {
        llm: LlmConfig {
            total_layers: 8,
            batch_size: 1,
            hidden_dim: 1,
            lipschitz: 1.0,
        },
        users,
        servers,
        channel: Channel {
            gains: Matrix::from_fn(n_users, n_servers, |_, _| rng.random_range(0.5..4.0)),
            noise_power: 1.0,
            payload_scale: 1.0,
        },
        weights: Weights {
            omega_t: 1.0,
            omega_e: 1.0,
            omega_s: 1.0,
            normalizers: Normalizers {
                delay: 10.0,
                energy: 10.0,
                stability: 1.0,
            },
        },
    }
}

/// Random binary association, one server per user.
pub fn random_binary_assoc(rng: &mut ChaCha8Rng, n_users: usize, n_servers: usize) -> Matrix {
    let mut assoc = Matrix::zeros(n_users, n_servers);
    for n in 0..n_users {
        assoc[(n, rng.random_range(0..n_servers))] = 1.0;
    }
    assoc
}

/// Strictly interior decision for the given association: capacities are split
/// by random positive shares and every box variable is away from its bounds.
pub fn interior_decision(rng: &mut ChaCha8Rng, s: &Scenario, assoc: &Matrix) -> Decision {
    let (n_users, n_servers) = (s.num_users(), s.num_servers());
    let mut dec = Decision::zeros(n_users, n_servers);
    dec.assoc = assoc.clone();
    for n in 0..n_users {
        dec.alpha[n] = rng.random_range(1.0..s.llm.layers() - 1.0);
        dec.power[n] = s.users[n].p_max * rng.random_range(0.1..0.9);
        dec.freq_user[n] = s.users[n].f_max * rng.random_range(0.1..0.9);
    }
    for m in 0..n_servers {
        let users: Vec<usize> = (0..n_users).filter(|&n| assoc[(n, m)] > 0.0).collect();
        let wb: Vec<f64> = users.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let wf: Vec<f64> = users.iter().map(|_| rng.random_range(0.2..1.0)).collect();
        let sb: f64 = users.iter().zip(&wb).map(|(&n, w)| assoc[(n, m)] * w).sum();
        let sf: f64 = users.iter().zip(&wf).map(|(&n, w)| assoc[(n, m)] * w).sum();
        for (i, &n) in users.iter().enumerate() {
            dec.bandwidth[(n, m)] = s.servers[m].b_max * wb[i] / sb;
            dec.freq_edge[(n, m)] = s.servers[m].f_max * wf[i] / sf;
        }
    }
    dec
}

/// `n` points from `hi / n` to `hi`.
pub fn grid(hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| hi * i as f64 / n as f64).collect()
}

pub fn total(s: &Scenario, dec: &Decision) -> f64 {
    edgetune_core::model::evaluate(s, dec).map(|b| b.total).unwrap_or(f64::INFINITY)
}

/// Index of the smallest value of `f` over `0..n`.
pub fn argmin(n: usize, mut f: impl FnMut(usize) -> f64) -> (usize, f64) {
    (0..n).map(|i| (i, f(i))).fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
}
