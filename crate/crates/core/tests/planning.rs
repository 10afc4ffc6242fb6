use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sequoia_core::optimizer::{optimize, optimize_with_kmax, CostModel, SpeedupGrid};
use sequoia_core::planner::{
    best_tree_bounded, best_tree_unbounded, brute_force_best_tree, feasibility_table, fixed_structure_value,
    FixedStructure, UnboundedPlanner,
};
use sequoia_core::AcceptanceVector;

fn random_acceptance<R: Rng>(k: usize, rng: &mut R) -> AcceptanceVector {
    let mut w: Vec<f64> = (0..=k).map(|_| rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    // the last weight is the all-rejected mass
    let mut p = w[..k].to_vec();
    p.sort_by(|a, b| b.total_cmp(a));
    AcceptanceVector::new(p).unwrap()
}

#[test]
fn dp_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let p = random_acceptance(3, &mut rng);
        for kmax in 1..=3 {
            let planner = UnboundedPlanner::new(8, &p, kmax).unwrap();
            for n in 1..=8 {
                let brute = brute_force_best_tree(n, &p, kmax, None).unwrap();
                let dp = planner.plan(n);
                assert!((dp.value - brute.value).abs() < 1e-9, "n={n} kmax={kmax}");
                assert!((dp.topology.expected_tokens(&p).unwrap() - dp.value).abs() < 1e-9);
                assert_eq!(dp.topology.len(), n);
                for d in 1..=4 {
                    let brute = brute_force_best_tree(n, &p, kmax, Some(d)).unwrap();
                    let dp = best_tree_bounded(n, d, &p, kmax).unwrap();
                    assert!((dp.value - brute.value).abs() < 1e-9, "n={n} d={d} kmax={kmax}");
                    assert!(dp.topology.layers() <= d);
                    assert!(dp.topology.len() <= n);
                }
            }
        }
    }
}

#[test]
fn feasibility_seeds() {
    let r = feasibility_table(6, 4, 3);
    assert!(r.get(1, 1, 0) && r.get(2, 2, 1) && r.get(3, 2, 2));
    assert!(!r.get(2, 1, 1));
}

#[test]
fn handcrafted_shapes_never_beat_the_dp() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let p = random_acceptance(4, &mut rng);
        let planner = UnboundedPlanner::new(128, &p, 4).unwrap();
        for n in [1usize, 2, 5, 17, 64, 128] {
            for s in [
                FixedStructure::Sequence,
                FixedStructure::KIndependent(3),
                FixedStructure::Binary,
                FixedStructure::KAry(4),
            ] {
                let v = fixed_structure_value(s, n, &p).unwrap();
                assert!(planner.value(n) >= v - 1e-9, "{s} n={n}");
                assert!(v <= s.upper_bound(&p).unwrap() + 1e-12);
            }
        }
    }
}

#[test]
fn bounded_with_inactive_depth_equals_unbounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let p = random_acceptance(3, &mut rng);
        for n in 1..=20 {
            let a = best_tree_unbounded(n, &p, 3).unwrap().value;
            let b = best_tree_bounded(n, n, &p, 3).unwrap().value;
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn kmax_one_reproduces_the_sequence_objective() {
    let p = AcceptanceVector::new(vec![0.8, 0.1]).unwrap();
    for &c in &[0.01, 0.05, 0.2] {
        let model = CostModel::flat(c);
        let res = optimize_with_kmax(&p, &model, 64, 63, 1).unwrap();
        // direct scan of (1 - a^(n+1)) / ((1 - a)(1 + c n)) over n draft tokens
        let a: f64 = 0.8;
        let mut best = (0usize, f64::NEG_INFINITY);
        for n in 1..=63usize {
            let s = (1.0 - a.powi(n as i32 + 1)) / ((1.0 - a) * (1.0 + c * n as f64));
            if s > best.1 {
                best = (n, s);
            }
        }
        assert_eq!(res.d, best.0, "c={c}");
        assert!((res.speedup - best.1).abs() < 1e-9);
    }
}

#[test]
fn steeper_verification_cost_shrinks_the_tree() {
    let p = AcceptanceVector::new(vec![0.6, 0.15, 0.08, 0.04]).unwrap();
    let flat = CostModel::new(vec![(1, 1.0), (256, 1.0)], 0.02, 1).unwrap();
    let samples: Vec<(usize, f64)> = (0..=8)
        .map(|i| (1usize << i, (1usize << i) as f64 / 32.0))
        .map(|(n, t)| (n, t.max(1.0)))
        .collect();
    let steep = CostModel::new(samples, 0.02, 1).unwrap();
    let a = optimize(&p, &flat, 256, 12).unwrap();
    let b = optimize(&p, &steep, 256, 12).unwrap();
    assert!(b.n <= a.n);
    let grid = SpeedupGrid::new(&p, &steep, 256, 12, 4).unwrap();
    for n in 1..=256 {
        for d in 1..=12 {
            assert!(b.speedup >= grid.speedup(n, d) - 1e-12);
        }
    }
}

fn power_law(b: f64, kmax: usize) -> AcceptanceVector {
    let r: Vec<f64> = (1..=kmax).map(|k| ((k + 1) as f64).powf(-b)).collect();
    AcceptanceVector::from_rejection_rates(&r).unwrap()
}

#[test]
fn power_law_values_grow_past_independent_chains() {
    for b in [0.5, 1.0, 2.0] {
        let p = power_law(b, 64);
        let planner = UnboundedPlanner::new(512, &p, 64).unwrap();
        let mut prev = 0.0;
        for n in (4..=512).step_by(4) {
            assert!(planner.value(n) > prev);
            prev = planner.value(n);
        }
        let bound = FixedStructure::KIndependent(16).upper_bound(&p).unwrap();
        assert!(planner.value(512) > bound, "b={b}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn value_is_monotone_in_budget(seed in any::<u64>(), k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_acceptance(k, &mut rng);
        let planner = UnboundedPlanner::new(40, &p, k).unwrap();
        for n in 1..40 {
            prop_assert!(planner.value(n + 1) >= planner.value(n) - 1e-12);
        }
    }

    #[test]
    fn speedup_decreases_with_depth(g in 1.0f64..20.0, n in 1usize..300, c in 0.001f64..1.0) {
        let m = CostModel::new(vec![(1, 1.0), (64, 1.2), (512, 6.0)], c, 1).unwrap();
        for d in 1..10 {
            prop_assert!(m.speedup(g, n, d + 1) < m.speedup(g, n, d));
        }
    }
}
