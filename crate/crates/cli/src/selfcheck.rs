//! Exhaustive oracles over small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sequoia_core::planner::{
    best_tree_bounded, brute_force_best_tree, feasibility_table, FixedStructure, UnboundedPlanner,
};
use sequoia_core::verifiers::exact_node_distribution;
use sequoia_core::{AcceptanceVector, Categorical, TreeTopology, VerifierKind};

use crate::error::CliError;

const TOL: f64 = 1e-9;

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct SelfcheckReport {
    pub seed: u64,
    pub instances: usize,
    pub checks: Vec<Check>,
}

fn internal(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// A random distribution over `vocab` tokens, with some entries zeroed.
fn random_dist(rng: &mut ChaCha8Rng, vocab: usize) -> Categorical {
    loop {
        let w: Vec<f64> = (0..vocab)
            .map(|_| {
                if rng.random_bool(0.25) {
                    0.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        if w.iter().sum::<f64>() > 0.0 {
            return Categorical::normalize(&w).expect("positive mass");
        }
    }
}

fn random_acceptance(rng: &mut ChaCha8Rng, k: usize) -> AcceptanceVector {
    let w: Vec<f64> = (0..=k).map(|_| rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w[..k].iter().map(|x| x / s).collect();
    p.sort_by(|a, b| b.total_cmp(a));
    AcceptanceVector::new(p).expect("sorted partial mass")
}

fn preservation(rng: &mut ChaCha8Rng, instances: usize) -> Result<Check, CliError> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let vocab = rng.random_range(1..=6);
        let p = random_dist(rng, vocab);
        let q = random_dist(rng, vocab);
        let k = rng.random_range(1..=vocab);
        for kind in VerifierKind::ALL {
            let res = exact_node_distribution(&p, &q, k, kind).map_err(internal)?;
            for (a, b) in res.output.iter().zip(p.probs()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(Check {
        name: "output distribution equals target".into(),
        passed: worst <= TOL,
        detail: format!("max deviation {worst:.2e} over {instances} instances, all verifiers"),
    })
}

fn optimal_transport(rng: &mut ChaCha8Rng, instances: usize) -> Result<Check, CliError> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let vocab = rng.random_range(1..=6);
        let p = random_dist(rng, vocab);
        let q = random_dist(rng, vocab);
        let tv = p.tv_distance(&q).map_err(internal)?;
        for kind in [VerifierKind::Sequoia, VerifierKind::SpecInfer] {
            let acc = exact_node_distribution(&p, &q, 1, kind).map_err(internal)?.acceptance();
            worst = worst.max((acc - (1.0 - tv)).abs());
        }
    }
    let naive = {
        let p = Categorical::new(vec![0.6, 0.4]).map_err(internal)?;
        exact_node_distribution(&p, &p, 1, VerifierKind::TopKNaive)
            .map_err(internal)?
            .acceptance()
    };
    Ok(Check {
        name: "single-child acceptance is 1 - TV".into(),
        passed: worst <= TOL && (naive - 0.6).abs() <= TOL,
        detail: format!("max deviation {worst:.2e}; top-k on P=Q=[0.6,0.4] accepts {naive:.6}"),
    })
}

fn cover(rng: &mut ChaCha8Rng, instances: usize) -> Result<Check, CliError> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let vocab = rng.random_range(1..=6);
        let q = random_dist(rng, vocab);
        // P restricted to the support of Q
        let w: Vec<f64> = q
            .probs()
            .iter()
            .map(|&x| if x > 0.0 { rng.random::<f64>() + 0.01 } else { 0.0 })
            .collect();
        let p = Categorical::normalize(&w).map_err(internal)?;
        let k = q.support_size();
        let acc = exact_node_distribution(&p, &q, k, VerifierKind::Sequoia)
            .map_err(internal)?
            .acceptance();
        worst = worst.max((1.0 - acc).abs());
    }
    let specinfer = {
        let p = Categorical::new(vec![1.0, 0.0]).map_err(internal)?;
        let q = Categorical::new(vec![0.5, 0.5]).map_err(internal)?;
        exact_node_distribution(&p, &q, 2, VerifierKind::SpecInfer)
            .map_err(internal)?
            .acceptance()
    };
    Ok(Check {
        name: "covering the draft support accepts surely".into(),
        passed: worst <= TOL && (specinfer - 0.75).abs() <= TOL,
        detail: format!("max shortfall {worst:.2e}; SpecInfer on P=[1,0], Q=[.5,.5], k=2 accepts {specinfer:.6}"),
    })
}

fn random_tree(rng: &mut ChaCha8Rng, size: usize, kmax: usize) -> TreeTopology {
    let mut t = TreeTopology::root_only();
    while t.len() < size {
        let open: Vec<usize> = (0..t.len()).filter(|&v| t.children(v).len() < kmax).collect();
        let parent = open[rng.random_range(0..open.len())];
        t = t.with_leaf(parent).expect("parent in range");
    }
    t
}

fn closed_form(rng: &mut ChaCha8Rng, instances: usize) -> Result<Check, CliError> {
    let trials = 20_000;
    let mut worst_z: f64 = 0.0;
    let cases = instances.min(50);
    for _ in 0..cases {
        let kmax = rng.random_range(1..=4);
        let p = random_acceptance(rng, kmax);
        let size = rng.random_range(1..=20);
        let t = random_tree(rng, size, kmax);
        let exact = t.expected_tokens(&p).map_err(internal)?;
        let (mean, se) = t
            .simulate_expected_tokens_with_error(&p, trials, rng)
            .map_err(internal)?;
        let z = if se > 0.0 {
            (mean - exact).abs() / se
        } else if mean == exact {
            0.0
        } else {
            f64::INFINITY
        };
        worst_z = worst_z.max(z);
    }
    Ok(Check {
        name: "expected tokens match simulation".into(),
        passed: worst_z <= 4.5,
        detail: format!("largest deviation {worst_z:.2} standard errors over {cases} trees, {trials} trials each"),
    })
}

fn dp_optimality(rng: &mut ChaCha8Rng, instances: usize) -> Result<Check, CliError> {
    let vectors = instances.clamp(1, 20);
    let mut worst: f64 = 0.0;
    for _ in 0..vectors {
        let p = random_acceptance(rng, 3);
        for kmax in 1..=3 {
            let planner = UnboundedPlanner::new(8, &p, kmax).map_err(internal)?;
            for n in 1..=8 {
                let brute = brute_force_best_tree(n, &p, kmax, None).map_err(internal)?;
                worst = worst.max((planner.value(n) - brute.value).abs());
                for layers in 1..=4 {
                    let brute = brute_force_best_tree(n, &p, kmax, Some(layers)).map_err(internal)?;
                    let dp = best_tree_bounded(n, layers, &p, kmax).map_err(internal)?;
                    worst = worst.max((dp.value - brute.value).abs());
                }
            }
        }
    }
    let r = feasibility_table(4, 3, 3);
    let seeds = r.get(1, 1, 0) && r.get(2, 2, 1) && r.get(3, 2, 2);
    Ok(Check {
        name: "tree DP matches brute force".into(),
        passed: worst <= TOL && seeds,
        detail: format!(
            "max gap {worst:.2e} over {vectors} vectors, n <= 8; feasibility seeds {}",
            if seeds { "ok" } else { "wrong" }
        ),
    })
}

fn structure_bounds(rng: &mut ChaCha8Rng, instances: usize) -> Result<Check, CliError> {
    let vectors = instances.clamp(1, 10);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..vectors {
        let p = random_acceptance(rng, 4);
        for s in [
            FixedStructure::Sequence,
            FixedStructure::KIndependent(4),
            FixedStructure::Binary,
            FixedStructure::KAry(4),
        ] {
            let bound = s.upper_bound(&p).map_err(internal)?;
            for n in [1usize, 4, 16, 64, 512] {
                let v = s.topology(n).expected_tokens(&p).map_err(internal)?;
                worst = worst.max(v - bound);
            }
        }
    }
    Ok(Check {
        name: "fixed structures respect their bounds".into(),
        passed: worst <= TOL,
        detail: format!("largest excess {worst:.2e} over {vectors} vectors, budgets up to 512"),
    })
}

pub fn run(seed: u64, instances: usize) -> Result<SelfcheckReport, CliError> {
    if instances == 0 {
        return Err(CliError::Input("--instances must be at least 1".into()));
    }
    type CheckFn = fn(&mut ChaCha8Rng, usize) -> Result<Check, CliError>;
    let checks: [CheckFn; 6] = [
        preservation,
        optimal_transport,
        cover,
        closed_form,
        dp_optimality,
        structure_bounds,
    ];
    let mut out = Vec::new();
    for (i, check) in checks.iter().enumerate() {
        // each check gets its own stream so adding one leaves the others unchanged
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        out.push(check(&mut rng, instances)?);
    }
    Ok(SelfcheckReport {
        seed,
        instances,
        checks: out,
    })
}
