//! Optimal token trees under a size budget.
//!
//! `c(n)`, the best expected token count over trees of exactly `n` nodes, is
//! computed by splitting on the number of root children: `c_L(n)` is the best
//! value when the root has exactly `L` children, with
//!
//! ```text
//! c_1(n)     = 1 + p_1 c(n - 1)
//! c_{L+1}(n) = max_x  c_L(x) + p_{L+1} c(n - x)
//! c(n)       = max_L  c_L(n)
//! ```
//!
//! The depth-bounded variant keeps `T(m, l, b)`: the best value over trees of
//! exactly `m` nodes, at most `l` layers (the root alone is one layer), and
//! exactly `b` root children; infeasible cells hold `-inf`.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::tree::{AcceptanceVector, Shape, TreeError, TreeTopology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("no tree satisfies size <= {n} and depth <= {d}")]
    Infeasible { n: usize, d: usize },
    #[error("kmax = {kmax} exceeds the acceptance vector length {len}")]
    KmaxTooLarge { kmax: usize, len: usize },
    #[error("brute-force enumeration is limited to {limit} nodes, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("structure needs rank {k} but the acceptance vector has {len}")]
    RankOutOfRange { k: usize, len: usize },
    #[error("cannot parse structure {0:?}")]
    BadStructure(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// An optimal tree and its expected token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub value: f64,
    pub topology: TreeTopology,
    pub budget_used: usize,
}

fn check_kmax(p: &AcceptanceVector, kmax: usize) -> Result<(), PlanError> {
    if kmax > p.kmax() {
        return Err(PlanError::KmaxTooLarge { kmax, len: p.kmax() });
    }
    Ok(())
}

/// Unbounded-depth DP tables for sizes `1..=n`.
#[derive(Debug, Clone)]
pub struct UnboundedPlanner {
    p: Vec<f64>,
    kmax: usize,
    /// c[m], 1-based
    best: Vec<f64>,
    /// root-children count attaining c[m]
    best_branches: Vec<usize>,
    /// split[l][m]: size of the part holding the root and its first l-1 children
    split: Vec<Vec<usize>>,
}

impl UnboundedPlanner {
    pub fn new(n: usize, p: &AcceptanceVector, kmax: usize) -> Result<Self, PlanError> {
        if n == 0 {
            return Err(PlanError::ZeroBudget);
        }
        check_kmax(p, kmax)?;
        let pv = p.as_slice()[..kmax].to_vec();
        let mut best = vec![f64::NEG_INFINITY; n + 1];
        let mut best_branches = vec![0; n + 1];
        let mut by_branch = vec![vec![f64::NEG_INFINITY; n + 1]; kmax + 1];
        let mut split = vec![vec![0; n + 1]; kmax + 1];
        best[1] = 1.0;
        by_branch[0][1] = 1.0;
        for m in 2..=n {
            for l in 1..=kmax.min(m - 1) {
                let (value, x) = if l == 1 {
                    (1.0 + pv[0] * best[m - 1], 1)
                } else {
                    let mut top = (f64::NEG_INFINITY, 0);
                    for x in l..m {
                        let v = by_branch[l - 1][x] + pv[l - 1] * best[m - x];
                        if v > top.0 {
                            top = (v, x);
                        }
                    }
                    top
                };
                by_branch[l][m] = value;
                split[l][m] = x;
                if value > best[m] {
                    best[m] = value;
                    best_branches[m] = l;
                }
            }
        }
        Ok(UnboundedPlanner {
            p: pv,
            kmax,
            best,
            best_branches,
            split,
        })
    }

    pub fn max_size(&self) -> usize {
        self.best.len() - 1
    }

    /// `c(m)` for `1 <= m <= max_size`.
    pub fn value(&self, m: usize) -> f64 {
        self.best[m]
    }

    pub fn values(&self) -> &[f64] {
        &self.best[1..]
    }

    pub fn shape(&self, m: usize) -> Shape {
        let l = self.best_branches[m];
        Shape::with_children(self.children(l, m))
    }

    fn children(&self, l: usize, m: usize) -> Vec<Shape> {
        match l {
            0 => Vec::new(),
            1 => vec![self.shape(m - 1)],
            _ => {
                let x = self.split[l][m];
                let mut kids = self.children(l - 1, x);
                kids.push(self.shape(m - x));
                kids
            }
        }
    }

    pub fn plan(&self, m: usize) -> PlanResult {
        let topology = TreeTopology::from_shape(&self.shape(m));
        PlanResult {
            value: self.best[m],
            budget_used: topology.len(),
            topology,
        }
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn acceptance(&self) -> &[f64] {
        &self.p
    }
}

/// The tree of exactly `n` nodes, each with at most `kmax` children, that
/// maximises the expected number of generated tokens.
pub fn best_tree_unbounded(n: usize, p: &AcceptanceVector, kmax: usize) -> Result<PlanResult, PlanError> {
    Ok(UnboundedPlanner::new(n, p, kmax)?.plan(n))
}

/// Like [`best_tree_unbounded`] but over all sizes `<= n`; keeps the smallest
/// size attaining the optimum.
pub fn best_tree_unbounded_within(n: usize, p: &AcceptanceVector, kmax: usize) -> Result<PlanResult, PlanError> {
    let planner = UnboundedPlanner::new(n, p, kmax)?;
    let mut m_best = 1;
    for m in 2..=n {
        if planner.value(m) > planner.value(m_best) {
            m_best = m;
        }
    }
    Ok(planner.plan(m_best))
}

/// `R(m, l, b)`: whether some tree has exactly `m` nodes, at most `l` layers
/// and exactly `b` root children, when no node has more than `K` children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityTable {
    max_nodes: usize,
    max_layers: usize,
    max_branch: usize,
    cells: Vec<bool>,
}

impl FeasibilityTable {
    fn idx(&self, m: usize, l: usize, b: usize) -> usize {
        ((m - 1) * self.max_layers + (l - 1)) * (self.max_branch + 1) + b
    }

    pub fn get(&self, m: usize, l: usize, b: usize) -> bool {
        if m == 0 || m > self.max_nodes || l == 0 || l > self.max_layers || b > self.max_branch {
            return false;
        }
        self.cells[self.idx(m, l, b)]
    }

    fn any_branch(&self, m: usize, l: usize) -> bool {
        (0..=self.max_branch).any(|j| self.get(m, l, j))
    }
}

pub fn feasibility_table(max_nodes: usize, max_layers: usize, max_branch: usize) -> FeasibilityTable {
    assert!(max_nodes >= 1 && max_layers >= 1 && max_branch >= 1);
    let mut t = FeasibilityTable {
        max_nodes,
        max_layers,
        max_branch,
        cells: vec![false; max_nodes * max_layers * (max_branch + 1)],
    };
    for l in 1..=max_layers {
        let i = t.idx(1, l, 0);
        t.cells[i] = true;
    }
    for m in 2..=max_nodes {
        for l in 2..=max_layers {
            let one = t.any_branch(m - 1, l - 1);
            let i = t.idx(m, l, 1);
            t.cells[i] = one;
            for b in 2..=max_branch {
                let ok = (1..m).any(|y| t.get(y, l, b - 1) && t.any_branch(m - y, l - 1));
                let i = t.idx(m, l, b);
                t.cells[i] = ok;
            }
        }
    }
    t
}

/// `T(m, l, b)` with backpointers, plus `G(n, d) = max_{m <= n, b} T(m, d, b)`.
#[derive(Debug, Clone)]
pub struct BoundedPlanner {
    max_nodes: usize,
    max_layers: usize,
    max_branch: usize,
    values: Vec<f64>,
    back: Vec<u32>,
    /// best over b of T(m, l, b), and its b
    best: Vec<(f64, usize)>,
}

/// The value table of a [`BoundedPlanner`].
pub type ValueTable = BoundedPlanner;

impl BoundedPlanner {
    /// Fills the tables for sizes `1..=max_nodes` and layer limits `1..=max_layers`.
    pub fn new(max_nodes: usize, max_layers: usize, p: &AcceptanceVector, kmax: usize) -> Result<Self, PlanError> {
        if max_nodes == 0 {
            return Err(PlanError::ZeroBudget);
        }
        if max_layers == 0 {
            return Err(PlanError::Infeasible { n: max_nodes, d: 0 });
        }
        check_kmax(p, kmax)?;
        let pv = p.as_slice();
        let cells = max_nodes * max_layers * (kmax + 1);
        let mut t = BoundedPlanner {
            max_nodes,
            max_layers,
            max_branch: kmax,
            values: vec![f64::NEG_INFINITY; cells],
            back: vec![0; cells],
            best: vec![(f64::NEG_INFINITY, 0); max_nodes * max_layers],
        };
        for l in 1..=max_layers {
            let i = t.idx(1, l, 0);
            t.values[i] = 1.0;
            let bi = t.bidx(1, l);
            t.best[bi] = (1.0, 0);
        }
        for m in 2..=max_nodes {
            for l in 2..=max_layers {
                let mut top = (f64::NEG_INFINITY, 0);
                let sub = t.best[t.bidx(m - 1, l - 1)].0;
                if sub.is_finite() {
                    let v = 1.0 + pv[0] * sub;
                    let i = t.idx(m, l, 1);
                    t.values[i] = v;
                    top = (v, 1);
                }
                for b in 2..=kmax.min(m - 1) {
                    let mut cell = (f64::NEG_INFINITY, 0);
                    for y in b..m {
                        let left = t.values[t.idx(y, l, b - 1)];
                        let right = t.best[t.bidx(m - y, l - 1)].0;
                        if left.is_finite() && right.is_finite() {
                            let v = left + pv[b - 1] * right;
                            if v > cell.0 {
                                cell = (v, y);
                            }
                        }
                    }
                    if cell.0.is_finite() {
                        let i = t.idx(m, l, b);
                        t.values[i] = cell.0;
                        t.back[i] = cell.1 as u32;
                        if cell.0 > top.0 {
                            top = (cell.0, b);
                        }
                    }
                }
                let bi = t.bidx(m, l);
                t.best[bi] = top;
            }
        }
        Ok(t)
    }

    fn idx(&self, m: usize, l: usize, b: usize) -> usize {
        ((m - 1) * self.max_layers + (l - 1)) * (self.max_branch + 1) + b
    }

    fn bidx(&self, m: usize, l: usize) -> usize {
        (m - 1) * self.max_layers + (l - 1)
    }

    /// `T(m, l, b)`; `-inf` where infeasible or out of range.
    pub fn get(&self, m: usize, l: usize, b: usize) -> f64 {
        if m == 0 || m > self.max_nodes || l == 0 || l > self.max_layers || b > self.max_branch {
            return f64::NEG_INFINITY;
        }
        self.values[self.idx(m, l, b)]
    }

    pub fn max_nodes(&self) -> usize {
        self.max_nodes
    }

    pub fn max_layers(&self) -> usize {
        self.max_layers
    }

    /// Best size `m <= n` for layer limit `l`, smallest on ties.
    fn best_size(&self, n: usize, l: usize) -> usize {
        let mut m_best = 1;
        for m in 2..=n {
            if self.best[self.bidx(m, l)].0 > self.best[self.bidx(m_best, l)].0 {
                m_best = m;
            }
        }
        m_best
    }

    /// `G(n, d)`: best expected tokens over trees of at most `n` nodes and `d` layers.
    pub fn value(&self, n: usize, layers: usize) -> f64 {
        let m = self.best_size(n, layers);
        self.best[self.bidx(m, layers)].0
    }

    fn shape(&self, m: usize, l: usize) -> Shape {
        let b = self.best[self.bidx(m, l)].1;
        Shape::with_children(self.children(m, l, b))
    }

    fn children(&self, m: usize, l: usize, b: usize) -> Vec<Shape> {
        match b {
            0 => Vec::new(),
            1 => vec![self.shape(m - 1, l - 1)],
            _ => {
                let y = self.back[self.idx(m, l, b)] as usize;
                let mut kids = self.children(y, l, b - 1);
                kids.push(self.shape(m - y, l - 1));
                kids
            }
        }
    }

    pub fn plan(&self, n: usize, layers: usize) -> Result<PlanResult, PlanError> {
        if n == 0 {
            return Err(PlanError::ZeroBudget);
        }
        if layers == 0 || n > self.max_nodes || layers > self.max_layers {
            return Err(PlanError::Infeasible { n, d: layers });
        }
        let m = self.best_size(n, layers);
        let topology = TreeTopology::from_shape(&self.shape(m, layers));
        Ok(PlanResult {
            value: self.best[self.bidx(m, layers)].0,
            budget_used: topology.len(),
            topology,
        })
    }
}

/// Builds the value table `T(m, l, b)` for `m <= max_nodes`, `l <= max_layers`.
pub fn value_table(
    max_nodes: usize,
    max_layers: usize,
    p: &AcceptanceVector,
    kmax: usize,
) -> Result<ValueTable, PlanError> {
    BoundedPlanner::new(max_nodes, max_layers, p, kmax)
}

/// The best tree with at most `n` nodes and at most `max_layers` layers (a
/// root-only tree has one layer).
pub fn best_tree_bounded(
    n: usize,
    max_layers: usize,
    p: &AcceptanceVector,
    kmax: usize,
) -> Result<PlanResult, PlanError> {
    if max_layers == 0 {
        return Err(PlanError::Infeasible { n, d: 0 });
    }
    BoundedPlanner::new(n, max_layers, p, kmax)?.plan(n, max_layers)
}

/// Largest budget accepted by [`brute_force_best_tree`].
pub const BRUTE_FORCE_LIMIT: usize = 9;

/// Exhaustive search over every tree with at most `n` nodes, at most `kmax`
/// children per node and, optionally, at most `max_layers` layers.
pub fn brute_force_best_tree(
    n: usize,
    p: &AcceptanceVector,
    kmax: usize,
    max_layers: Option<usize>,
) -> Result<PlanResult, PlanError> {
    if n == 0 {
        return Err(PlanError::ZeroBudget);
    }
    if n > BRUTE_FORCE_LIMIT {
        return Err(PlanError::TooLarge {
            n,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    check_kmax(p, kmax)?;
    let layers = max_layers.unwrap_or(n);
    if layers == 0 {
        return Err(PlanError::Infeasible { n, d: 0 });
    }
    let mut best: Option<PlanResult> = None;
    for size in 1..=n {
        for shape in all_shapes(size, layers, kmax) {
            let topology = TreeTopology::from_shape(&shape);
            let value = topology.expected_tokens(p)?;
            if best.as_ref().is_none_or(|b| value > b.value) {
                best = Some(PlanResult {
                    value,
                    budget_used: size,
                    topology,
                });
            }
        }
    }
    best.ok_or(PlanError::Infeasible { n, d: layers })
}

/// Every ordered tree of exactly `size` nodes within the layer and branching limits.
pub fn all_shapes(size: usize, layers: usize, kmax: usize) -> Vec<Shape> {
    if size == 1 {
        return vec![Shape::leaf()];
    }
    if layers <= 1 || kmax == 0 {
        return Vec::new();
    }
    forests(size - 1, layers - 1, kmax, kmax)
        .into_iter()
        .map(Shape::with_children)
        .collect()
}

/// Ordered sequences of at most `remaining` sibling subtrees with `total` nodes.
fn forests(total: usize, layers: usize, kmax: usize, remaining: usize) -> Vec<Vec<Shape>> {
    if total == 0 {
        return vec![Vec::new()];
    }
    if remaining == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for first in 1..=total {
        let heads = all_shapes(first, layers, kmax);
        if heads.is_empty() {
            continue;
        }
        let tails = forests(total - first, layers, kmax, remaining - 1);
        for h in &heads {
            for t in &tails {
                let mut f = Vec::with_capacity(t.len() + 1);
                f.push(h.clone());
                f.extend(t.iter().cloned());
                out.push(f);
            }
        }
    }
    out
}

/// Handcrafted tree families used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FixedStructure {
    /// A single chain.
    Sequence,
    /// `k` chains of equal length hanging off the root.
    KIndependent(usize),
    /// A complete binary tree filled breadth-first.
    Binary,
    /// A complete `k`-ary tree filled breadth-first.
    KAry(usize),
}

impl FixedStructure {
    fn branching(self) -> usize {
        match self {
            FixedStructure::Sequence => 1,
            FixedStructure::KIndependent(k) | FixedStructure::KAry(k) => k,
            FixedStructure::Binary => 2,
        }
    }

    /// The member of this family with at most `n` nodes.
    pub fn topology(self, n: usize) -> TreeTopology {
        assert!(n >= 1, "a tree has at least one node");
        match self {
            FixedStructure::Sequence => TreeTopology::chain(n),
            FixedStructure::KIndependent(k) => {
                let len = (n - 1).checked_div(k).unwrap_or(0);
                let chain = |len: usize| {
                    let mut s = Shape::leaf();
                    for _ in 1..len {
                        s = Shape::with_children(vec![s]);
                    }
                    s
                };
                let kids = if len == 0 {
                    Vec::new()
                } else {
                    (0..k).map(|_| chain(len)).collect()
                };
                TreeTopology::from_shape(&Shape::with_children(kids))
            }
            FixedStructure::Binary | FixedStructure::KAry(_) => {
                let k = self.branching().max(1);
                let parents = std::iter::once(None).chain((1..n).map(|j| Some((j - 1) / k))).collect();
                let ranks = std::iter::once(0).chain((1..n).map(|j| (j - 1) % k + 1)).collect();
                TreeTopology::from_parts(parents, ranks).expect("complete k-ary layout is canonical")
            }
        }
    }

    /// Closed-form cap on the expected tokens of any member of the family.
    pub fn upper_bound(self, p: &AcceptanceVector) -> Result<f64, PlanError> {
        let k = self.branching();
        if k > p.kmax() || k == 0 {
            return Err(PlanError::RankOutOfRange { k, len: p.kmax() });
        }
        let inv = |x: f64| if x >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - x) };
        Ok(match self {
            FixedStructure::Sequence => inv(p.cumulative(1)),
            FixedStructure::KIndependent(k) => 1.0 + p.cumulative(k) * inv(p.cumulative(1)),
            FixedStructure::Binary => inv(p.cumulative(2)),
            FixedStructure::KAry(k) => inv(p.cumulative(k)),
        })
    }
}

impl fmt::Display for FixedStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FixedStructure::Sequence => f.write_str("sequence"),
            FixedStructure::KIndependent(k) => write!(f, "k_independent:{k}"),
            FixedStructure::Binary => f.write_str("binary"),
            FixedStructure::KAry(k) => write!(f, "k_ary:{k}"),
        }
    }
}

impl FromStr for FixedStructure {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || PlanError::BadStructure(s.to_string());
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (name, arg) {
            ("sequence", None) => Ok(FixedStructure::Sequence),
            ("binary", None) => Ok(FixedStructure::Binary),
            ("k_independent", Some(k)) if k >= 1 => Ok(FixedStructure::KIndependent(k)),
            ("k_ary", Some(k)) if k >= 1 => Ok(FixedStructure::KAry(k)),
            _ => Err(bad()),
        }
    }
}

/// Exact expected tokens of the family member with at most `n` nodes.
pub fn fixed_structure_value(kind: FixedStructure, n: usize, p: &AcceptanceVector) -> Result<f64, PlanError> {
    Ok(kind.topology(n).expected_tokens(p)?)
}

/// Closed-form upper bound for a fixed structure family.
pub fn structure_upper_bound(kind: FixedStructure, p: &AcceptanceVector) -> Result<f64, PlanError> {
    kind.upper_bound(p)
}
