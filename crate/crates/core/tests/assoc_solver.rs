mod common;

use edgetune_core::assoc_solver::{
    assoc_costs_with_model, assoc_linear_costs, binarity_gap, cccp_associate, greedy_association, linearize_penalty,
    multistart_associate, priced_decision, random_feasible_start, restart_rng, solve_lp, AssocError, AssocLp,
    PenaltyConfig,
};
use edgetune_core::fpcore::CostModel;
use edgetune_core::inner_solver::{ao_solve_p3, InnerConfig};
use edgetune_core::model::{self, midpoint_decision};
use edgetune_core::scenario_io::{generate, GenParams};
use edgetune_core::Matrix;
use proptest::prelude::*;
use rand::Rng;

fn plain_lp(cost: Matrix, bandwidth: Matrix, b_cap: Vec<f64>) -> AssocLp {
    let (r, c) = cost.shape();
    AssocLp {
        constant: 0.0,
        freq: Matrix::zeros(r, c),
        f_cap: vec![1.0; c],
        bandwidth,
        b_cap,
        cost,
    }
}

/// All binary feasible associations, by brute force.
fn exhaustive(lp: &AssocLp) -> Option<(Matrix, f64)> {
    let (n, m) = lp.cost.shape();
    let mut best: Option<(Matrix, f64)> = None;
    for code in 0..m.pow(n as u32) {
        let mut c = code;
        let mut a = Matrix::zeros(n, m);
        for u in 0..n {
            a[(u, c % m)] = 1.0;
            c /= m;
        }
        if lp.is_feasible(&a) {
            let g = lp.objective(&a);
            if best.as_ref().is_none_or(|b| g < b.1) {
                best = Some((a, g));
            }
        }
    }
    best
}

/// Optimum of a 2×2 association LP by vertex enumeration. With unit row sums
/// the free variables are `x = χ[0][0]` and `y = χ[1][0]`; every constraint is
/// a half-plane `a x + b y ≤ c`.
fn vertex_oracle_2x2(lp: &AssocLp) -> f64 {
    let bw = &lp.bandwidth;
    let mut half: Vec<[f64; 3]> = vec![[-1.0, 0.0, 0.0], [1.0, 0.0, 1.0], [0.0, -1.0, 0.0], [0.0, 1.0, 1.0]];
    // Server 0: x b00 + y b10 ≤ cap0; server 1: (1-x) b01 + (1-y) b11 ≤ cap1.
    half.push([bw[(0, 0)], bw[(1, 0)], lp.b_cap[0]]);
    half.push([-bw[(0, 1)], -bw[(1, 1)], lp.b_cap[1] - bw[(0, 1)] - bw[(1, 1)]]);
    let c = &lp.cost;
    let value = |x: f64, y: f64| c[(0, 0)] * x + c[(0, 1)] * (1.0 - x) + c[(1, 0)] * y + c[(1, 1)] * (1.0 - y);
    let mut best = f64::INFINITY;
    for i in 0..half.len() {
        for j in i + 1..half.len() {
            let [a1, b1, c1] = half[i];
            let [a2, b2, c2] = half[j];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-14 {
                continue;
            }
            let x = (c1 * b2 - c2 * b1) / det;
            let y = (a1 * c2 - a2 * c1) / det;
            if half.iter().all(|h| h[0] * x + h[1] * y <= h[2] + 1e-12) {
                best = best.min(value(x, y));
            }
        }
    }
    best
}

#[test]
fn lp_matches_vertex_enumeration_on_two_by_two() {
    let mut rng = common::rng(3);
    let mut checked = 0;
    for _ in 0..300 {
        let cost = Matrix::from_fn(2, 2, |_, _| rng.random_range(0.0..10.0));
        let bandwidth = Matrix::from_fn(2, 2, |_, _| rng.random_range(0.5..2.0));
        // Server 0 admits roughly one user at full share.
        let caps = vec![rng.random_range(0.5..2.5), rng.random_range(1.0..4.0)];
        let lp = plain_lp(cost, bandwidth, caps);
        let oracle = vertex_oracle_2x2(&lp);
        match solve_lp(&lp, None) {
            Ok(chi) => {
                assert!(lp.is_feasible(&chi));
                assert!((lp.objective(&chi) - oracle).abs() <= 1e-9 * (1.0 + oracle.abs()), "{} vs {oracle}", lp.objective(&chi));
                checked += 1;
            }
            Err(AssocError::Lp(_)) => assert!(oracle.is_infinite()),
            Err(e) => panic!("{e}"),
        }
    }
    assert!(checked > 100);
}

#[test]
fn lp_beats_random_feasible_points() {
    let s = generate(&GenParams::with_size(12, 3, 1)).unwrap();
    let assoc = greedy_association(&s);
    let dec = midpoint_decision(&s, &assoc);
    let lp = assoc_linear_costs(&s, &dec);
    let chi = solve_lp(&lp, None).unwrap();
    let g = lp.objective(&chi);
    let mut rng = common::rng(8);
    for _ in 0..100 {
        let x = random_feasible_start(&lp, &assoc, &mut rng);
        assert!(lp.is_feasible(&x));
        assert!(g <= lp.objective(&x) + 1e-9 * (1.0 + g.abs()));
    }
}

#[test]
fn linear_cost_reproduces_model_objective_at_binary_points() {
    let mut rng = common::rng(21);
    for seed in 0..5 {
        let s = generate(&GenParams::with_size(6, 3, seed)).unwrap();
        let dec = midpoint_decision(&s, &greedy_association(&s));
        let model = CostModel::new(&s);
        let lp = assoc_costs_with_model(&model, &dec);
        for _ in 0..10 {
            let chi = common::random_binary_assoc(&mut rng, 6, 3);
            let priced = priced_decision(&model, &dec, &chi);
            let h = model::evaluate(&s, &priced).unwrap().total;
            let g = lp.objective(&chi);
            assert!((h - g).abs() <= 1e-10 * (1.0 + h.abs()), "{h} vs {g}");
        }
    }
}

#[test]
fn fully_local_users_do_not_care_about_edge_capacity() {
    let mut s = generate(&GenParams::with_size(3, 2, 4)).unwrap();
    s.weights.omega_s = 0.0;
    let mut dec = midpoint_decision(&s, &greedy_association(&s));
    dec.alpha = vec![s.llm.layers(); 3];
    let before = assoc_linear_costs(&s, &dec).cost;
    s.servers[0].f_max *= 5.0;
    let after = assoc_linear_costs(&s, &dec).cost;
    assert_eq!(before, after);
}

#[test]
fn cccp_finds_separated_optimum_on_four_users() {
    let cost = Matrix::from_rows(vec![vec![1.0, 9.0], vec![8.0, 2.0], vec![1.5, 7.0], vec![9.5, 1.0]]).unwrap();
    let lp = plain_lp(cost, Matrix::filled(4, 2, 1.0), vec![2.0, 2.0]);
    let (best, g) = exhaustive(&lp).unwrap();
    let start = Matrix::filled(4, 2, 0.5);
    let out = cccp_associate(&lp, &start, &PenaltyConfig::default()).unwrap();
    assert!(out.binary);
    assert_eq!(out.assoc, best);
    assert_eq!(out.objective, g);
}

#[test]
fn cccp_is_exact_on_tight_four_user_instances() {
    let mut rng = common::rng(17);
    for _ in 0..20 {
        let cost = Matrix::from_fn(4, 2, |_, _| rng.random_range(0.0..10.0));
        // Each server holds at most two users.
        let lp = plain_lp(cost, Matrix::filled(4, 2, 1.0), vec![2.0, 2.0]);
        let (_, g) = exhaustive(&lp).unwrap();
        let anchor = Matrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let out = multistart_associate(&lp, &anchor, &PenaltyConfig::default()).unwrap();
        assert!(out.best.binary);
        assert!(binarity_gap(&out.best.assoc) <= 1e-6);
        assert!((out.best.objective - g).abs() <= 1e-9, "{} vs {g}", out.best.objective);
    }
}

#[test]
fn optimal_binary_start_is_a_fixed_point() {
    let cost = Matrix::from_rows(vec![vec![1.0, 5.0], vec![4.0, 2.0]]).unwrap();
    let lp = plain_lp(cost, Matrix::filled(2, 2, 1.0), vec![1.0, 1.0]);
    let start = Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let out = cccp_associate(&lp, &start, &PenaltyConfig::default()).unwrap();
    assert_eq!(out.iterations, 1);
    assert_eq!(out.assoc, start);
}

#[test]
fn more_restarts_never_hurt_and_one_restart_is_plain_cccp() {
    for seed in 0..4 {
        let s = generate(&GenParams::with_size(8, 3, 40 + seed)).unwrap();
        let assoc = greedy_association(&s);
        let out = ao_solve_p3(&s, &midpoint_decision(&s, &assoc), &InnerConfig::default()).unwrap();
        let lp = assoc_linear_costs(&s, &out.decision);
        let one = PenaltyConfig {
            restarts: 1,
            ..PenaltyConfig::default()
        };
        let r1 = multistart_associate(&lp, &assoc, &one).unwrap();
        let plain = cccp_associate(&lp, &assoc, &one).unwrap();
        assert_eq!(r1.best, plain);
        let r10 = multistart_associate(&lp, &assoc, &PenaltyConfig::default()).unwrap();
        assert!(r10.best.objective <= r1.best.objective);
        assert_eq!(r10.objectives.len(), 10);
    }
}

#[test]
fn multistart_is_deterministic_and_streams_differ() {
    let s = generate(&GenParams::with_size(10, 3, 2)).unwrap();
    let assoc = greedy_association(&s);
    let lp = assoc_linear_costs(&s, &midpoint_decision(&s, &assoc));
    let cfg = PenaltyConfig::default();
    assert_eq!(multistart_associate(&lp, &assoc, &cfg).unwrap(), multistart_associate(&lp, &assoc, &cfg).unwrap());
    let a: f64 = restart_rng(0, 1).random();
    let b: f64 = restart_rng(0, 2).random();
    assert_ne!(a, b);
}

#[test]
fn infeasible_anchor_and_bad_config_are_rejected() {
    let lp = plain_lp(Matrix::filled(2, 1, 1.0), Matrix::filled(2, 1, 1.0), vec![1.0]);
    let anchor = Matrix::filled(2, 1, 1.0);
    assert!(matches!(
        multistart_associate(&lp, &anchor, &PenaltyConfig::default()),
        Err(AssocError::InfeasibleStart)
    ));
    let bad = PenaltyConfig {
        rho_growth: 1.0,
        ..PenaltyConfig::default()
    };
    assert!(matches!(cccp_associate(&lp, &anchor, &bad), Err(AssocError::Config(_))));
}

fn assoc_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..5, 1usize..4).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0f64..=1.0, r * c).prop_map(move |v| Matrix::from_fn(r, c, |i, j| v[i * c + j]))
    })
}

proptest! {
    #[test]
    fn penalty_tangent_lies_below_and_touches(prev in assoc_matrix(), seed in any::<u64>()) {
        let lin = linearize_penalty(&prev);
        let exact = |x: &Matrix| x.as_slice().iter().map(|v| v * (v - 1.0)).sum::<f64>();
        prop_assert!((lin.value(&prev) - exact(&prev)).abs() <= 1e-12);
        let mut rng = common::rng(seed);
        let (r, c) = prev.shape();
        let other = Matrix::from_fn(r, c, |_, _| rng.random_range(0.0..=1.0));
        prop_assert!(lin.value(&other) <= exact(&other) + 1e-12);
        let binary = Matrix::from_fn(r, c, |i, j| prev[(i, j)].round());
        prop_assert!(linearize_penalty(&binary).value(&binary).abs() <= 1e-15);
    }
}
