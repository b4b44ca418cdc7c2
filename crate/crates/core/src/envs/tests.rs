use super::grid::simplex_grid_best;
use super::*;
use crate::rng::substream;
use proptest::prelude::*;

#[test]
fn uniform_softmax_splits_budget_evenly() {
    let env = PowerEnv::new(3, 0.5, 2.5, 10.0).unwrap();
    let p = env.squash(&[0.0, 0.0, 0.0]);
    for share in &p {
        assert!((share - 10.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn symmetric_gains_split_evenly_with_known_rate() {
    let (p, rate) = water_filling(&[2.0, 2.0], 10.0);
    assert!((p[0] - 5.0).abs() < 1e-12);
    assert!((p[1] - 5.0).abs() < 1e-12);
    assert!((rate - 2.0 * 11.0f64.log2()).abs() < 1e-12);
}

#[test]
fn water_filling_excludes_hopeless_channel() {
    // Water level (1 + 0.1)/1 = 1.1 after excluding the 0.01-gain channel.
    let (p, rate) = water_filling(&[10.0, 0.01], 1.0);
    assert!((p[0] - 1.0).abs() < 1e-12);
    assert_eq!(p[1], 0.0);
    assert!((rate - 11.0f64.log2()).abs() < 1e-12);
}

#[test]
fn known_three_channel_instance() {
    // Gains (1, 0.5, 2.5) with budget 10: all channels active, water level
    // (10 + 1 + 2 + 0.4) / 3.
    let (p, rate) = water_filling(&[1.0, 0.5, 2.5], 10.0);
    assert!((p[0] - 3.4667).abs() < 1e-3);
    assert!((p[1] - 2.4667).abs() < 1e-3);
    assert!((p[2] - 4.0667).abs() < 1e-3);
    assert!((rate - 6.80).abs() < 0.01);
    let budget: f64 = p.iter().sum();
    assert!((budget - 10.0).abs() < 1e-9);
}

#[test]
fn water_filling_matches_grid_search() {
    let mut rng = substream(31, "wf");
    for _ in 0..20 {
        let gains: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.5)).collect();
        let (_, wf_rate) = water_filling(&gains, 10.0);
        let (_, grid_rate) = simplex_grid_best(3, 100, 10.0, |p| {
            gains
                .iter()
                .zip(p)
                .map(|(g, pw)| (1.0 + g * pw).log2())
                .sum()
        });
        assert!(wf_rate >= grid_rate - 1e-9);
        assert!(grid_rate >= wf_rate - 0.02);
    }
}

#[test]
fn oracle_dominates_arbitrary_allocations() {
    let env = PowerEnv::new(4, 0.5, 3.0, 10.0).unwrap();
    let mut rng = substream(32, "oracle");
    for _ in 0..100 {
        let g = env.sample_condition(&mut rng);
        let (_, best) = env.oracle(&g).unwrap();
        let p = random_allocation(&env, &mut rng);
        assert!(env.evaluate(&g, &p) <= best + 1e-6);
    }
}

#[test]
fn average_equals_oracle_on_symmetric_gains() {
    let env = PowerEnv::new(2, 1.0, 3.0, 10.0).unwrap();
    let avg = average_allocation(&env);
    let g = vec![2.0, 2.0];
    let (oracle_p, oracle_rate) = env.oracle(&g).unwrap();
    assert!((avg[0] - oracle_p[0]).abs() < 1e-9);
    assert!((env.evaluate(&g, &avg) - oracle_rate).abs() < 1e-9);
}

#[test]
fn average_beats_random_in_the_mean() {
    let env = PowerEnv::new(3, 0.5, 2.5, 10.0).unwrap();
    let mut rng = substream(33, "baselines");
    let n = 1000;
    let (mut avg_total, mut rnd_total) = (0.0, 0.0);
    for _ in 0..n {
        let g = env.sample_condition(&mut rng);
        avg_total += env.evaluate(&g, &average_allocation(&env));
        rnd_total += env.evaluate(&g, &random_allocation(&env, &mut rng));
    }
    assert!(
        avg_total / n as f64 > rnd_total / n as f64,
        "average {} vs random {}",
        avg_total / n as f64,
        rnd_total / n as f64
    );
}

#[test]
fn simplex_preimage_recovers_allocation() {
    let squash = Squash::Simplex { budget: 10.0 };
    for p in [vec![3.0, 3.0, 4.0], vec![9.0, 0.5, 0.5], vec![10.0, 0.0, 0.0]] {
        let back = squash.apply(&squash.preimage(&p));
        for (a, b) in back.iter().zip(&p) {
            assert!((a - b).abs() < 1e-6, "{back:?} vs {p:?}");
        }
    }
}

#[test]
fn box_preimage_recovers_solution() {
    let squash = Squash::Box {
        lo: vec![0.1, 0.0],
        hi: vec![1.0, 50.0],
    };
    for p in [vec![0.1, 0.0], vec![0.55, 25.0], vec![1.0, 50.0]] {
        let back = squash.apply(&squash.preimage(&p));
        for (a, b) in back.iter().zip(&p) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn squash_vjp_matches_finite_differences() {
    let cases = [
        Squash::Simplex { budget: 10.0 },
        Squash::Box {
            lo: vec![0.1, 0.0, 0.1],
            hi: vec![1.0, 50.0, 1.0],
        },
    ];
    let mut rng = substream(34, "vjp");
    for squash in &cases {
        for _ in 0..20 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let u: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let analytic = squash.vjp(&z, &u);
            let h = 1e-6;
            for i in 0..3 {
                let mut plus = z.clone();
                plus[i] += h;
                let mut minus = z.clone();
                minus[i] -= h;
                let scalar = |logits: &[f64]| -> f64 {
                    squash
                        .apply(logits)
                        .iter()
                        .zip(&u)
                        .map(|(p, ui)| p * ui)
                        .sum()
                };
                let fd = (scalar(&plus) - scalar(&minus)) / (2.0 * h);
                assert!(
                    (analytic[i] - fd).abs() < 1e-5,
                    "{squash:?} component {i}: {} vs {}",
                    analytic[i],
                    fd
                );
            }
        }
    }
}

#[test]
fn simplex_squash_ignores_common_logit_shift() {
    let squash = Squash::Simplex { budget: 5.0 };
    let base = squash.apply(&[0.3, -0.7, 1.1]);
    for shift in [-80.0, -20.0, 35.0, 500.0] {
        let shifted: Vec<f64> = [0.3, -0.7, 1.1].iter().map(|z| z + shift).collect();
        let p = squash.apply(&shifted);
        for (a, b) in p.iter().zip(&base) {
            assert!((a - b).abs() < 1e-9, "shift {shift}: {p:?} vs {base:?}");
        }
    }
}

#[test]
fn saturated_logits_keep_a_restoring_gradient() {
    // Straight-through clamp: a component stuck past the bound still sees a
    // slope, so the critic can pull it back into the interior.
    let squash = Squash::Box {
        lo: vec![0.0, 0.0],
        hi: vec![1.0, 1.0],
    };
    let grad = squash.vjp(&[35.0, 0.0], &[-1.0, 0.0]);
    assert!(grad[0] < 0.0);
}

#[test]
fn condition_streams_are_reproducible() {
    let env = PowerEnv::new(3, 0.5, 2.5, 10.0).unwrap();
    let a: Vec<Vec<f64>> = {
        let mut rng = substream(35, "env");
        (0..5).map(|_| env.sample_condition(&mut rng)).collect()
    };
    let b: Vec<Vec<f64>> = {
        let mut rng = substream(35, "env");
        (0..5).map(|_| env.sample_condition(&mut rng)).collect()
    };
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn simplex_squash_is_always_feasible(
        logits in proptest::collection::vec(-50.0f64..50.0, 1..8),
        budget in 0.1f64..100.0,
    ) {
        let squash = Squash::Simplex { budget };
        let p = squash.apply(&logits);
        let total: f64 = p.iter().sum();
        prop_assert!((total - budget).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn box_squash_stays_in_bounds(
        logits in proptest::collection::vec(-50.0f64..50.0, 4),
    ) {
        let squash = Squash::Box {
            lo: vec![0.1, 0.0, 0.1, 0.0],
            hi: vec![1.0, 50.0, 1.0, 50.0],
        };
        let p = squash.apply(&logits);
        let (lo, hi) = match &squash {
            Squash::Box { lo, hi } => (lo, hi),
            _ => unreachable!(),
        };
        for i in 0..4 {
            prop_assert!(p[i] >= lo[i] - 1e-12 && p[i] <= hi[i] + 1e-12);
        }
    }

    #[test]
    fn water_filling_exhausts_budget_nonnegatively(
        gains in proptest::collection::vec(0.05f64..10.0, 1..8),
        budget in 0.1f64..50.0,
    ) {
        let (p, rate) = water_filling(&gains, budget);
        let total: f64 = p.iter().sum();
        prop_assert!((total - budget).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!(rate.is_finite());
    }
}
