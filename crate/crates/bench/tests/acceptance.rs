//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one line whether it passes or not.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracle::grid_optimum;
use edgetune_bench::{run_method, Method};
use edgetune_core::assoc_solver::{assoc_linear_costs, greedy_association, multistart_associate, AssocLp, PenaltyConfig};
use edgetune_core::fpcore::{aux_optimal, grad_h, grad_k, objective_h, surrogate_k, CostModel, GradientBundle};
use edgetune_core::inner_solver::{ao_solve_p3, InnerConfig};
use edgetune_core::model::{midpoint_decision, Decision, Scenario};
use edgetune_core::orchestrator::{solve, SolveConfig};
use edgetune_core::scenario_io::{generate, GenParams};
use edgetune_core::stability_lab::{verify_as_bound, LabConfig};
use edgetune_core::Matrix;

type Verdict = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Verdict);

fn scenario(n: usize, m: usize, seed: u64) -> Scenario {
    generate(&GenParams::with_size(n, m, seed)).expect("generator")
}

fn check(ok: bool, summary: String) -> Verdict {
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn surrogate_identity() -> Verdict {
    let mut rng = common::rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let s = scenario(5, 3, i / 50);
        let assoc = common::random_binary_assoc(&mut rng, 5, 3);
        let dec = common::interior_decision(&mut rng, &s, &assoc);
        let model = CostModel::new(&s);
        let aux = aux_optimal(&model, &dec).map_err(|e| e.to_string())?;
        let h = objective_h(&model, &dec);
        let k = surrogate_k(&model, &dec, &aux).map_err(|e| e.to_string())?;
        worst = worst.max((k - h).abs() / (1.0 + h.abs()));
    }
    check(worst <= 1e-9, format!("max |K-H|/(1+|H|) = {worst:.2e}"))
}

/// Decision coordinates of associated pairs, in a fixed order.
fn coords(dec: &Decision) -> Vec<f64> {
    let mut out = Vec::new();
    let (n_users, n_servers) = dec.assoc.shape();
    for n in 0..n_users {
        out.extend([dec.alpha[n], dec.power[n], dec.freq_user[n]]);
        for m in (0..n_servers).filter(|&m| dec.assoc[(n, m)] > 0.0) {
            out.extend([dec.bandwidth[(n, m)], dec.freq_edge[(n, m)]]);
        }
    }
    out
}

fn grad_coords(dec: &Decision, g: &GradientBundle) -> Vec<f64> {
    let mut out = Vec::new();
    let (n_users, n_servers) = dec.assoc.shape();
    for n in 0..n_users {
        out.extend([g.alpha[n], g.power[n], g.freq_user[n]]);
        for m in (0..n_servers).filter(|&m| dec.assoc[(n, m)] > 0.0) {
            out.extend([g.bandwidth[(n, m)], g.freq_edge[(n, m)]]);
        }
    }
    out
}

fn set_coord(dec: &mut Decision, idx: usize, value: f64) {
    let (n_users, n_servers) = dec.assoc.shape();
    let mut i = 0;
    for n in 0..n_users {
        for slot in 0..3 {
            if i == idx {
                match slot {
                    0 => dec.alpha[n] = value,
                    1 => dec.power[n] = value,
                    _ => dec.freq_user[n] = value,
                }
                return;
            }
            i += 1;
        }
        for m in (0..n_servers).filter(|&m| dec.assoc[(n, m)] > 0.0) {
            if i == idx {
                dec.bandwidth[(n, m)] = value;
                return;
            }
            if i + 1 == idx {
                dec.freq_edge[(n, m)] = value;
                return;
            }
            i += 2;
        }
    }
}

/// Central differences in each coordinate, returned in `coords` order.
fn central_differences(dec: &Decision, f: impl Fn(&Decision) -> f64) -> Vec<f64> {
    coords(dec)
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let h = 1e-6 * x.abs();
            let mut plus = dec.clone();
            set_coord(&mut plus, i, x + h);
            let mut minus = dec.clone();
            set_coord(&mut minus, i, x - h);
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

/// Error between gradients expressed per relative change of each variable,
/// which makes hertz, watts and layer counts comparable.
fn scaled_error(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let scale = x.iter().zip(a).map(|(x, g)| (x * g).abs()).fold(0.0, f64::max);
    let err = x.iter().zip(a.iter().zip(b)).map(|(x, (a, b))| (x * (a - b)).abs()).fold(0.0, f64::max);
    err / scale.max(f64::MIN_POSITIVE)
}

fn gradient_certification() -> Verdict {
    let mut rng = common::rng(2);
    let (mut fd_h, mut fd_k, mut ident): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for i in 0..200 {
        let s = scenario(5, 3, 100 + i / 20);
        let assoc = common::random_binary_assoc(&mut rng, 5, 3);
        let dec = common::interior_decision(&mut rng, &s, &assoc);
        let model = CostModel::new(&s);
        let x = coords(&dec);
        let gh = grad_h(&model, &dec).map_err(|e| e.to_string())?;
        let num_h = central_differences(&dec, |d| objective_h(&model, d));
        fd_h = fd_h.max(scaled_error(&x, &grad_coords(&dec, &gh), &num_h));

        let other = common::interior_decision(&mut rng, &s, &assoc);
        let aux = aux_optimal(&model, &other).map_err(|e| e.to_string())?;
        let gk = grad_k(&model, &dec, &aux).map_err(|e| e.to_string())?;
        let num_k = central_differences(&dec, |d| surrogate_k(&model, d, &aux).unwrap_or(f64::NAN));
        fd_k = fd_k.max(scaled_error(&x, &grad_coords(&dec, &gk), &num_k));

        let aux = aux_optimal(&model, &dec).map_err(|e| e.to_string())?;
        let gk = grad_k(&model, &dec, &aux).map_err(|e| e.to_string())?;
        ident = ident.max(scaled_error(&x, &grad_coords(&dec, &gh), &grad_coords(&dec, &gk)));
    }
    check(
        fd_h <= 1e-5 && fd_k <= 1e-5 && ident <= 1e-8,
        format!("fd error H {fd_h:.2e}, K {fd_k:.2e}; grad_K vs grad_H {ident:.2e}"),
    )
}

fn ao_descent() -> Verdict {
    let cfg = InnerConfig::default();
    let (mut rise, mut iters, mut kkt): (f64, usize, f64) = (0.0, 0, 0.0);
    let mut unconverged = 0;
    for seed in 0..20 {
        let s = scenario(50, 10, seed);
        let init = midpoint_decision(&s, &greedy_association(&s));
        let out = ao_solve_p3(&s, &init, &cfg).map_err(|e| e.to_string())?;
        let k0 = out.trace.k_values.first().copied().unwrap_or(0.0);
        rise = rise.max(out.trace.max_k_increase() / (1.0 + k0.abs()));
        iters = iters.max(out.trace.iterations());
        kkt = kkt.max(out.kkt_residual);
        unconverged += usize::from(!out.converged);
    }
    check(
        rise <= 1e-10 && iters <= 200 && kkt <= 1e-5 && unconverged == 0,
        format!("max K rise {rise:.1e}, max iterations {iters}, max KKT {kkt:.1e}, unconverged {unconverged}"),
    )
}

fn brute_force_oracle() -> Verdict {
    let mut close = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let gp = GenParams {
            layers: 4,
            ..GenParams::with_size(2, 2, seed)
        };
        let s = generate(&gp).map_err(|e| e.to_string())?;
        let sol = solve(&s, &SolveConfig::default()).map_err(|e| e.to_string())?;
        let ratio = sol.breakdown.total / grid_optimum(&s, 20);
        worst = worst.max(ratio);
        close += usize::from(ratio <= 1.05);
    }
    check(close >= 45, format!("{close}/50 within 1.05x of the grid optimum (worst ratio {worst:.4})"))
}

fn exhaustive(lp: &AssocLp) -> f64 {
    let (n, m) = lp.cost.shape();
    let mut best = f64::INFINITY;
    for code in 0..m.pow(n as u32) {
        let mut c = code;
        let mut a = Matrix::zeros(n, m);
        for u in 0..n {
            a[(u, c % m)] = 1.0;
            c /= m;
        }
        if lp.is_feasible(&a) {
            best = best.min(lp.objective(&a));
        }
    }
    best
}

/// Association LP at the AO solution for the greedy start.
fn association_lp(s: &Scenario) -> Result<(AssocLp, Matrix), String> {
    let assoc = greedy_association(s);
    let out = ao_solve_p3(s, &midpoint_decision(s, &assoc), &InnerConfig::default()).map_err(|e| e.to_string())?;
    Ok((assoc_linear_costs(s, &out.decision), assoc))
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2] as f64
    } else {
        (v[k / 2 - 1] + v[k / 2]) as f64 / 2.0
    }
}

fn cccp_behavior() -> Verdict {
    let mut gap: f64 = 0.0;
    for seed in 0..5 {
        let sol = solve(&scenario(20, 4, seed), &SolveConfig::default()).map_err(|e| e.to_string())?;
        gap = gap.max(sol.binarity_gap);
    }
    let cfg = PenaltyConfig::default();
    let mut medians = Vec::new();
    let mut max_iters = 0;
    for m in [5, 10, 15] {
        let mut iters = Vec::new();
        for seed in 0..5 {
            let (lp, anchor) = association_lp(&scenario(100, m, seed))?;
            let ms = multistart_associate(&lp, &anchor, &cfg).map_err(|e| e.to_string())?;
            gap = gap.max(ms.best.binarity_gap);
            iters.extend(ms.iterations);
        }
        max_iters = max_iters.max(*iters.iter().max().unwrap_or(&0));
        medians.push(median(&mut iters));
    }
    let mut exact = 0;
    let ten = PenaltyConfig { restarts: 10, ..cfg };
    for seed in 0..30 {
        let (lp, anchor) = association_lp(&scenario(6, 2, 100 + seed))?;
        let ms = multistart_associate(&lp, &anchor, &ten).map_err(|e| e.to_string())?;
        let best = exhaustive(&lp);
        exact += usize::from(ms.best.objective <= best + 1e-9 * (1.0 + best.abs()));
    }
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    check(
        gap <= 1e-6 && max_iters <= 30 && monotone && exact >= 24,
        format!("binarity gap {gap:.1e}, max iterations {max_iters}, medians {medians:?} for M=5,10,15, exact {exact}/30"),
    )
}

fn baseline_dominance() -> Verdict {
    let cfg = SolveConfig::default();
    let mut wins = vec![0usize; Method::ALL.len()];
    for seed in 0..20 {
        let s = scenario(50, 10, seed);
        let mine = run_method(&s, Method::Proposed, &cfg, seed).map_err(|e| e.to_string())?.objective();
        for (i, &m) in Method::ALL.iter().enumerate().skip(1) {
            let other = run_method(&s, m, &cfg, seed).map_err(|e| e.to_string())?.objective();
            // Baselines that land on the same optimum tie up to solver noise.
            wins[i] += usize::from(mine <= other * (1.0 + 1e-6));
        }
    }
    let worst = wins.iter().skip(1).copied().min().unwrap_or(0);
    let mut energy = Vec::new();
    for w in 1..=10 {
        let mut sum = 0.0;
        for seed in 0..5 {
            let gp = GenParams {
                omega_e: w as f64,
                ..GenParams::with_size(50, 10, seed)
            };
            let s = generate(&gp).map_err(|e| e.to_string())?;
            sum += solve(&s, &cfg).map_err(|e| e.to_string())?.breakdown.energy_j;
        }
        energy.push(sum / 5.0);
    }
    let flat = energy.windows(2).all(|w| w[1] <= w[0] * 1.01);
    let diminishing = energy[8] - energy[9] < energy[0] - energy[1];
    check(
        worst >= 18 && flat && diminishing,
        format!(
            "proposed wins >= {worst}/20 against every baseline; energy at omega_e=1,2,9,10: {:.4e} {:.4e} {:.4e} {:.4e}",
            energy[0], energy[1], energy[8], energy[9]
        ),
    )
}

fn stability_bound_grid() -> Verdict {
    match verify_as_bound(&LabConfig::default()) {
        Ok(cells) => {
            let worst = cells.iter().map(|c| c.max_gap / c.bound).fold(0.0, f64::max);
            check(cells.len() == 36, format!("{} cells, no violations, worst gap/bound {worst:.3}", cells.len()))
        }
        Err(e) => Err(e.to_string()),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 surrogate identity", Duration::from_secs(10), surrogate_identity),
        ("2 gradient certification", Duration::from_secs(30), gradient_certification),
        ("3 AO descent and stationarity", Duration::from_secs(300), ao_descent),
        ("4 brute-force oracle", Duration::from_secs(120), brute_force_oracle),
        ("5 CCCP behavior", Duration::from_secs(180), cccp_behavior),
        ("6 baseline dominance", Duration::from_secs(600), baseline_dominance),
        ("7 stability bound", Duration::from_secs(120), stability_bound_grid),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let start = Instant::now();
        let verdict = run();
        let took = start.elapsed();
        let (ok, detail) = match verdict {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; took {took:.1?}, limit {limit:?}")),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!("criterion {name}: {} ({took:.1?}) {detail}", if ok { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
