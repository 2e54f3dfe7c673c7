//! Exhaustive grid optimum for tiny scenarios.
//!
//! For fixed association and split points the objective is a sum of terms
//! that each involve one user's frequency, one user's (power, band share) or
//! one user's edge share. The grid search therefore minimizes those groups
//! one at a time, which visits the same optimum as the full product grid.

use edgetune_core::model::{evaluate, Decision, Scenario};
use edgetune_core::Matrix;

fn total(s: &Scenario, dec: &Decision) -> f64 {
    evaluate(s, dec).map(|b| b.total).unwrap_or(f64::INFINITY)
}

fn points(hi: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| hi * i as f64 / n as f64).collect()
}

/// Splits of `cap` into `(x, cap - x)` with both parts positive.
fn splits(cap: f64, n: usize) -> Vec<f64> {
    (1..=n).map(|i| cap * i as f64 / (n + 1) as f64).collect()
}

fn best_of(values: &[f64], mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    values.iter().map(|&v| (v, f(v))).fold((values[0], f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
}

/// All binary associations of `n` users to `m` servers.
fn associations(n: usize, m: usize) -> Vec<Matrix> {
    (0..m.pow(n as u32))
        .map(|code| {
            let mut c = code;
            let mut a = Matrix::zeros(n, m);
            for u in 0..n {
                a[(u, c % m)] = 1.0;
                c /= m;
            }
            a
        })
        .collect()
}

/// Grid optimum with `pts` points per continuous variable and integer split
/// points. Every user is on exactly one server.
pub fn grid_optimum(s: &Scenario, pts: usize) -> f64 {
    let (n_users, n_servers) = (s.num_users(), s.num_servers());
    let layers = s.llm.total_layers;
    let alpha_hi = if s.weights.omega_s > 0.0 { layers - 1 } else { layers };
    let alpha_values: Vec<f64> = (1..=alpha_hi).map(f64::from).collect();
    let mut best = f64::INFINITY;
    for assoc in associations(n_users, n_servers) {
        let mut dec = Decision::zeros(n_users, n_servers);
        dec.assoc = assoc.clone();
        for n in 0..n_users {
            dec.alpha[n] = alpha_values[0];
            dec.power[n] = s.users[n].p_max;
            dec.freq_user[n] = s.users[n].f_max;
        }
        let server_of: Vec<usize> = (0..n_users).map(|n| (0..n_servers).find(|&m| assoc[(n, m)] == 1.0).unwrap()).collect();
        for m in 0..n_servers {
            let users: Vec<usize> = (0..n_users).filter(|&n| server_of[n] == m).collect();
            for &n in &users {
                dec.bandwidth[(n, m)] = s.servers[m].b_max / users.len() as f64;
                dec.freq_edge[(n, m)] = s.servers[m].f_max / users.len() as f64;
            }
        }
        for n in 0..n_users {
            let (f, _) = best_of(&points(s.users[n].f_max, pts), |f| {
                let mut d = dec.clone();
                d.freq_user[n] = f;
                total(s, &d)
            });
            dec.freq_user[n] = f;
        }
        // Uplink: band split per server, then each power on its own.
        for m in 0..n_servers {
            let users: Vec<usize> = (0..n_users).filter(|&n| server_of[n] == m).collect();
            let cap = s.servers[m].b_max;
            let shares: Vec<Vec<f64>> = match users.len() {
                0 => continue,
                1 => points(cap, pts).into_iter().map(|b| vec![b]).collect(),
                2 => splits(cap, pts).into_iter().map(|b| vec![b, cap - b]).collect(),
                k => panic!("oracle supports at most two users per server, got {k}"),
            };
            let mut best_uplink = (f64::INFINITY, dec.clone());
            for share in shares {
                let mut d = dec.clone();
                for (&n, &b) in users.iter().zip(&share) {
                    d.bandwidth[(n, m)] = b;
                }
                for &n in &users {
                    let (p, _) = best_of(&points(s.users[n].p_max, pts), |p| {
                        let mut t = d.clone();
                        t.power[n] = p;
                        total(s, &t)
                    });
                    d.power[n] = p;
                }
                let v = total(s, &d);
                if v < best_uplink.0 {
                    best_uplink = (v, d);
                }
            }
            dec = best_uplink.1;
        }
        // Split points and edge shares interact; search them jointly.
        let alpha_combos: Vec<Vec<f64>> = (0..alpha_values.len().pow(n_users as u32))
            .map(|code| {
                let mut c = code;
                (0..n_users)
                    .map(|_| {
                        let a = alpha_values[c % alpha_values.len()];
                        c /= alpha_values.len();
                        a
                    })
                    .collect()
            })
            .collect();
        for alphas in alpha_combos {
            let mut d = dec.clone();
            d.alpha = alphas;
            for m in 0..n_servers {
                let users: Vec<usize> = (0..n_users).filter(|&n| server_of[n] == m).collect();
                let cap = s.servers[m].f_max;
                let shares: Vec<Vec<f64>> = match users.len() {
                    0 => continue,
                    1 => points(cap, pts).into_iter().map(|f| vec![f]).collect(),
                    _ => splits(cap, pts).into_iter().map(|f| vec![f, cap - f]).collect(),
                };
                let mut best_share = (f64::INFINITY, d.clone());
                for share in shares {
                    let mut t = d.clone();
                    for (&n, &f) in users.iter().zip(&share) {
                        t.freq_edge[(n, m)] = f;
                    }
                    let v = total(s, &t);
                    if v < best_share.0 {
                        best_share = (v, t);
                    }
                }
                d = best_share.1;
            }
            best = best.min(total(s, &d));
        }
    }
    best
}
