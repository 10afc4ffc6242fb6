//! Browser front end for the planner and optimizer.
//!
//! Each export takes plain values and returns a JSON string. The logic lives in
//! the `*_json` functions so it can be tested natively; the `#[wasm_bindgen]`
//! wrappers only turn errors into JavaScript exceptions.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sequoia_core::optimizer::{fixed_size_rows, load_cost_model, parse_cost_csv, FixedSizeRow, SpeedupGrid};
use sequoia_core::planner::{best_tree_bounded, FixedStructure, UnboundedPlanner};
use sequoia_core::{AcceptanceVector, TreeTopology};

/// Largest budget the page may request; keeps each call interactive.
pub const MAX_BUDGET: usize = 1024;

fn parse_acceptance(text: &str) -> Result<AcceptanceVector, String> {
    let mut p: Vec<f64> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("{s:?} is not a number")))
        .collect::<Result<_, _>>()?;
    p.sort_by(|a, b| b.total_cmp(a));
    AcceptanceVector::new(p).map_err(|e| e.to_string())
}

fn check_budget(n: usize) -> Result<(), String> {
    if n == 0 || n > MAX_BUDGET {
        return Err(format!("budget must be between 1 and {MAX_BUDGET}"));
    }
    Ok(())
}

#[derive(Serialize)]
struct TreeView {
    value: f64,
    size: usize,
    layers: usize,
    parents: Vec<Option<usize>>,
    ranks: Vec<usize>,
    /// Path probability of each node under the acceptance vector.
    scores: Vec<f64>,
}

fn tree_view(t: &TreeTopology, p: &AcceptanceVector) -> Result<TreeView, String> {
    let scores = (0..t.len())
        .map(|v| t.score(v, p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    Ok(TreeView {
        value: t.expected_tokens(p).map_err(|e| e.to_string())?,
        size: t.len(),
        layers: t.layers(),
        parents: t.parents().to_vec(),
        ranks: t.ranks().to_vec(),
        scores,
    })
}

/// Optimal tree for a comma-separated acceptance vector. `layers = 0` leaves
/// the depth unbounded.
pub fn plan_tree_json(acceptance: &str, budget: usize, layers: usize) -> Result<String, String> {
    let p = parse_acceptance(acceptance)?;
    check_budget(budget)?;
    let plan = if layers == 0 {
        UnboundedPlanner::new(budget, &p, p.kmax())
            .map_err(|e| e.to_string())?
            .plan(budget)
    } else {
        best_tree_bounded(budget, layers, &p, p.kmax()).map_err(|e| e.to_string())?
    };
    let view = tree_view(&plan.topology, &p)?;
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[derive(Serialize)]
struct CurvePoint {
    budget: usize,
    sequoia: f64,
    k_independent: f64,
    binary: f64,
}

#[derive(Serialize)]
struct Curve {
    /// Rejection rates `r_k = (k + 1)^-b`.
    rejection: Vec<f64>,
    points: Vec<CurvePoint>,
    /// Closed-form cap of `k` independent chains.
    k_independent_bound: f64,
}

/// Expected tokens against budget for power-law acceptance with exponent `b`,
/// comparing the optimal tree with `k` independent chains and a binary tree.
pub fn scaling_curve_json(b: f64, k: usize, max_budget: usize) -> Result<String, String> {
    if !(b.is_finite() && b > 0.0) {
        return Err("exponent must be positive".into());
    }
    check_budget(max_budget)?;
    let kmax = 64;
    if k < 2 || k > kmax {
        return Err(format!("chains must be between 2 and {kmax}"));
    }
    let rejection: Vec<f64> = (1..=kmax).map(|i| ((i + 1) as f64).powf(-b)).collect();
    let p = AcceptanceVector::from_rejection_rates(&rejection).map_err(|e| e.to_string())?;
    let planner = UnboundedPlanner::new(max_budget, &p, kmax).map_err(|e| e.to_string())?;
    let chains = FixedStructure::KIndependent(k);
    let mut points = Vec::new();
    let mut n = 1;
    while n <= max_budget {
        points.push(CurvePoint {
            budget: n,
            sequoia: planner.value(n),
            k_independent: chains.topology(n).expected_tokens(&p).map_err(|e| e.to_string())?,
            binary: FixedStructure::Binary
                .topology(n)
                .expected_tokens(&p)
                .map_err(|e| e.to_string())?,
        });
        n *= 2;
    }
    let curve = Curve {
        rejection,
        points,
        k_independent_bound: chains.upper_bound(&p).map_err(|e| e.to_string())?,
    };
    Ok(serde_json::to_string(&curve).expect("curve serializes"))
}

#[derive(Serialize)]
struct OptimizerView {
    n: usize,
    d: usize,
    expected_tokens: f64,
    speedup: f64,
    fixed: Vec<FixedSizeRow>,
    tree: TreeView,
}

/// Hardware-aware `(n, d)` choice for a cost table with header `n,seconds`,
/// alongside the best depth at each power-of-two size.
pub fn optimize_json(
    acceptance: &str,
    cost_csv: &str,
    draft_seconds: f64,
    n_max: usize,
    d_max: usize,
) -> Result<String, String> {
    let p = parse_acceptance(acceptance)?;
    check_budget(n_max)?;
    if d_max == 0 || d_max > 32 {
        return Err("depth limit must be between 1 and 32".into());
    }
    let rows = parse_cost_csv(cost_csv).map_err(|e| e.to_string())?;
    let model = load_cost_model(&rows, draft_seconds, 1)
        .map_err(|e| e.to_string())?
        .model;
    let grid = SpeedupGrid::new(&p, &model, n_max, d_max, p.kmax()).map_err(|e| e.to_string())?;
    let best = grid.argmax();
    let sizes: Vec<usize> = std::iter::successors(Some(1usize), |n| Some(n * 2))
        .take_while(|&n| n <= n_max)
        .collect();
    let view = OptimizerView {
        n: best.n,
        d: best.d,
        expected_tokens: best.expected_tokens,
        speedup: best.speedup,
        fixed: fixed_size_rows(&grid, &sizes),
        tree: tree_view(&best.topology, &p)?,
    };
    Ok(serde_json::to_string(&view).expect("view serializes"))
}

#[wasm_bindgen]
pub fn plan_tree(acceptance: &str, budget: usize, layers: usize) -> Result<String, JsError> {
    plan_tree_json(acceptance, budget, layers).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn scaling_curve(b: f64, k: usize, max_budget: usize) -> Result<String, JsError> {
    scaling_curve_json(b, k, max_budget).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn optimize(
    acceptance: &str,
    cost_csv: &str,
    draft_seconds: f64,
    n_max: usize,
    d_max: usize,
) -> Result<String, JsError> {
    optimize_json(acceptance, cost_csv, draft_seconds, n_max, d_max).map_err(|e| JsError::new(&e))
}
