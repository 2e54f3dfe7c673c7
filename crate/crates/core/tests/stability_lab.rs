use approx::assert_relative_eq;
use edgetune_core::stability_lab::{
    loss_bound, masked_finetune, parameter_bound, replace_one_gap, verify_as_bound, write_report, LabConfig, LabError,
    Sample, ToyTask,
};
use proptest::prelude::*;

fn task_strategy() -> impl Strategy<Value = ToyTask> {
    (2usize..12, 0.0f64..0.95, 0.2f64..3.0).prop_flat_map(|(k, alpha, l)| {
        let sample = (prop::collection::vec(-1.0f64..1.0, 2), -3.0f64..3.0).prop_map(move |(x, y)| {
            let n = (x[0] * x[0] + x[1] * x[1]).sqrt().max(1.0);
            Sample {
                x: x.iter().map(|v| v / n * l).collect(),
                y,
            }
        });
        (prop::collection::vec(sample, k), prop::collection::vec(-1.0f64..1.0, 2)).prop_map(move |(samples, w0)| {
            ToyTask {
                samples,
                w0,
                alpha,
                lipschitz: l,
            }
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn minimizer_beats_perturbations(task in task_strategy(), dx in -0.1f64..0.1, dy in -0.1f64..0.1) {
        let w = masked_finetune(&task).unwrap();
        let f = task.objective(&w);
        let moved = [w[0] + dx, w[1] + dy];
        prop_assert!(f <= task.objective(&moved) + 1e-12);
    }

    #[test]
    fn strong_convexity_certificate(task in task_strategy(), a in prop::collection::vec(-2.0f64..2.0, 2), b in prop::collection::vec(-2.0f64..2.0, 2)) {
        let g = task.subgradient(&b);
        let lin: f64 = g.iter().zip(a.iter().zip(&b)).map(|(gi, (ai, bi))| gi * (ai - bi)).sum();
        let dist2: f64 = a.iter().zip(&b).map(|(ai, bi)| (ai - bi) * (ai - bi)).sum();
        let lower = task.objective(&b) + lin + (1.0 - task.alpha) * dist2;
        prop_assert!(task.objective(&a) >= lower - 1e-10 * (1.0 + lower.abs()));
    }

    #[test]
    fn replace_one_respects_both_bounds(task in task_strategy(), i in 0usize..12, x in prop::collection::vec(-1.0f64..1.0, 2), y in -3.0f64..3.0) {
        let k = task.samples.len();
        let i = i % k;
        let n = (x[0] * x[0] + x[1] * x[1]).sqrt().max(1.0);
        let z = Sample { x: x.iter().map(|v| v / n * task.lipschitz).collect(), y };
        let r = replace_one_gap(&task, i, &z).unwrap();
        prop_assert!(r.gap <= loss_bound(task.lipschitz, k, task.alpha) + 1e-8);
        prop_assert!(r.param_distance <= parameter_bound(task.lipschitz, k, task.alpha) + 1e-8);
    }
}

#[test]
fn small_grid_has_no_violations_and_writes_csv() {
    let cfg = LabConfig {
        ks: vec![10, 40],
        alphas: vec![0.0, 0.5],
        lipschitz: vec![1.0],
        trials: 20,
        dim: 3,
        seed: 4,
    };
    let cells = verify_as_bound(&cfg).unwrap();
    assert_eq!(cells.len(), 4);
    for c in &cells {
        assert!(c.max_gap <= c.bound + 1e-8);
        assert_eq!(c.trials.len(), 20);
    }
    let mut buf = Vec::new();
    write_report(&mut buf, &cells).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "k,alpha,L,trial,max_gap,bound,ratio");
    assert_eq!(text.lines().count(), 81);
}

#[test]
fn same_seed_same_report() {
    let cfg = LabConfig {
        ks: vec![15],
        alphas: vec![0.25],
        lipschitz: vec![2.0],
        trials: 10,
        dim: 2,
        seed: 9,
    };
    let a = verify_as_bound(&cfg).unwrap();
    let b = verify_as_bound(&cfg).unwrap();
    assert_eq!(a[0].trials, b[0].trials);
}

#[test]
fn larger_fine_tuned_fraction_shifts_further_from_pretrained() {
    let base = ToyTask {
        samples: vec![
            Sample { x: vec![1.0, 0.0], y: 5.0 },
            Sample { x: vec![0.0, 1.0], y: -5.0 },
        ],
        w0: vec![0.0, 0.0],
        alpha: 0.0,
        lipschitz: 1.0,
    };
    let mut prev = 0.0;
    for alpha in [0.0, 0.5, 0.8] {
        let w = masked_finetune(&ToyTask { alpha, ..base.clone() }).unwrap();
        let d = (w[0] * w[0] + w[1] * w[1]).sqrt();
        assert!(d > prev);
        // Each coordinate decouples: w = 1 / (4(1-α)) per axis.
        assert_relative_eq!(w[0], 1.0 / (4.0 * (1.0 - alpha)), epsilon = 1e-12);
        prev = d;
    }
}

#[test]
fn oversized_features_are_rejected() {
    let task = ToyTask {
        samples: vec![Sample { x: vec![3.0], y: 0.0 }],
        w0: vec![0.0],
        alpha: 0.0,
        lipschitz: 1.0,
    };
    assert!(matches!(masked_finetune(&task), Err(LabError::Task(_))));
}
