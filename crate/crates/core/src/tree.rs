//! Token-tree topologies and the expected number of tokens they generate under
//! positional acceptance.
//!
//! Nodes are stored breadth-first: node 0 is the root, parents are
//! nondecreasing, and the children of a node carry ranks `1..=k` in order.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TreeError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("child rank {rank} exceeds acceptance vector length {kmax}")]
    RankOutOfRange { rank: usize, kmax: usize },
    #[error("node {node} is not in a tree of {size} nodes")]
    NodeOutOfRange { node: usize, size: usize },
    #[error("cannot parse topology: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AcceptanceError {
    #[error("acceptance vector is empty")]
    Empty,
    #[error("p_{rank} = {value} is not a probability")]
    OutOfRange { rank: usize, value: f64 },
    #[error("acceptance vector increases at rank {rank} ({prev} < {next})")]
    NotMonotone { rank: usize, prev: f64, next: f64 },
    #[error("cumulative acceptance P_{rank} = {sum} exceeds 1")]
    MassExceedsOne { rank: usize, sum: f64 },
}

const MONOTONE_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-9;

/// Per-rank acceptance probabilities `p_1 >= p_2 >= ...`.
///
/// `p_i` is the probability that the `i`-th child of an accepted node is the
/// one accepted, so the partial sums are probabilities of disjoint events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AcceptanceVector {
    p: Vec<f64>,
}

impl AcceptanceVector {
    pub fn new(p: Vec<f64>) -> Result<Self, AcceptanceError> {
        if p.is_empty() {
            return Err(AcceptanceError::Empty);
        }
        let mut sum = 0.0;
        for (i, &value) in p.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(AcceptanceError::OutOfRange { rank: i + 1, value });
            }
            if i > 0 && value > p[i - 1] + MONOTONE_TOL {
                return Err(AcceptanceError::NotMonotone {
                    rank: i + 1,
                    prev: p[i - 1],
                    next: value,
                });
            }
            sum += value;
            if sum > 1.0 + MASS_TOL {
                return Err(AcceptanceError::MassExceedsOne { rank: i + 1, sum });
            }
        }
        Ok(AcceptanceVector { p })
    }

    /// Builds the vector from rejection rates `r_1, r_2, ...` (with `r_0 = 1`).
    pub fn from_rejection_rates(r: &[f64]) -> Result<Self, AcceptanceError> {
        let mut prev = 1.0;
        let p = r
            .iter()
            .map(|&rk| {
                let pk = prev - rk;
                prev = rk;
                pk
            })
            .collect();
        AcceptanceVector::new(p)
    }

    /// Number of ranks covered.
    #[inline]
    pub fn kmax(&self) -> usize {
        self.p.len()
    }

    /// `p_rank`, 1-based.
    #[inline]
    pub fn get(&self, rank: usize) -> Option<f64> {
        rank.checked_sub(1).and_then(|i| self.p.get(i)).copied()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    /// `P_k = p_1 + ... + p_k`, clamped to `kmax`.
    pub fn cumulative(&self, k: usize) -> f64 {
        self.p.iter().take(k).sum()
    }

    /// Rejection rates `r_k = 1 - P_k` for `k = 1..=kmax`.
    pub fn rejection_rates(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.p
            .iter()
            .map(|x| {
                acc += x;
                (1.0 - acc).max(0.0)
            })
            .collect()
    }

    /// Keeps only the first `k` ranks.
    pub fn truncated(&self, k: usize) -> Result<Self, AcceptanceError> {
        AcceptanceVector::new(self.p.iter().take(k).copied().collect())
    }
}

impl TryFrom<Vec<f64>> for AcceptanceVector {
    type Error = AcceptanceError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        AcceptanceVector::new(v)
    }
}

impl From<AcceptanceVector> for Vec<f64> {
    fn from(a: AcceptanceVector) -> Self {
        a.p
    }
}

/// A nested tree description; children are listed in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Shape {
    pub children: Vec<Shape>,
}

impl Shape {
    pub fn leaf() -> Self {
        Shape::default()
    }

    pub fn with_children(children: Vec<Shape>) -> Self {
        Shape { children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(Shape::size).sum::<usize>()
    }
}

/// A rooted token tree with positional child ranks, stored breadth-first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeTopology {
    parents: Vec<Option<usize>>,
    ranks: Vec<usize>,
    children: Vec<Vec<usize>>,
    depths: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct TopologyJson {
    parents: Vec<Option<usize>>,
    ranks: Vec<usize>,
}

impl TreeTopology {
    pub fn root_only() -> Self {
        TreeTopology::from_parts(vec![None], vec![0]).expect("root-only tree is valid")
    }

    /// A chain of `size` nodes (the root followed by `size - 1` rank-1 children).
    pub fn chain(size: usize) -> Self {
        assert!(size >= 1, "a tree has at least one node");
        let parents = std::iter::once(None).chain((0..size - 1).map(Some)).collect();
        let ranks = std::iter::once(0).chain(std::iter::repeat_n(1, size - 1)).collect();
        TreeTopology::from_parts(parents, ranks).expect("chain is valid")
    }

    /// Validates a canonical breadth-first parent/rank listing.
    pub fn from_parts(parents: Vec<Option<usize>>, ranks: Vec<usize>) -> Result<Self, TreeError> {
        let bad = |msg: String| Err(TreeError::InvalidTopology(msg));
        if parents.is_empty() {
            return bad("tree has no nodes".into());
        }
        if parents.len() != ranks.len() {
            return bad(format!("{} parents but {} ranks", parents.len(), ranks.len()));
        }
        if parents[0].is_some() || ranks[0] != 0 {
            return bad("node 0 must be the root with rank 0".into());
        }
        let n = parents.len();
        let mut children = vec![Vec::new(); n];
        let mut depths = vec![0; n];
        for i in 1..n {
            let Some(par) = parents[i] else {
                return bad(format!("node {i} has no parent; only node 0 may be the root"));
            };
            if par >= i {
                return bad(format!("node {i} has parent {par}; parents must precede children"));
            }
            if i > 1 {
                if let Some(prev) = parents[i - 1] {
                    if par < prev {
                        return bad(format!("node {i} breaks breadth-first order"));
                    }
                }
            }
            let expected = children[par].len() + 1;
            if ranks[i] != expected {
                return bad(format!("node {i} has rank {}, expected {expected}", ranks[i]));
            }
            children[par].push(i);
            depths[i] = depths[par] + 1;
        }
        Ok(TreeTopology {
            parents,
            ranks,
            children,
            depths,
        })
    }

    /// Lays out a nested shape breadth-first.
    pub fn from_shape(shape: &Shape) -> Self {
        let mut parents = vec![None];
        let mut ranks = vec![0];
        let mut queue = std::collections::VecDeque::from([(shape, 0usize)]);
        while let Some((node, idx)) = queue.pop_front() {
            for (r, child) in node.children.iter().enumerate() {
                let child_idx = parents.len();
                parents.push(Some(idx));
                ranks.push(r + 1);
                queue.push_back((child, child_idx));
            }
        }
        TreeTopology::from_parts(parents, ranks).expect("breadth-first layout is canonical")
    }

    pub fn to_shape(&self) -> Shape {
        fn build(t: &TreeTopology, v: usize) -> Shape {
            Shape {
                children: t.children[v].iter().map(|&c| build(t, c)).collect(),
            }
        }
        build(self, 0)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.parents.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parent(&self, v: usize) -> Option<usize> {
        self.parents[v]
    }

    /// Child rank of `v` (0 for the root).
    pub fn rank(&self, v: usize) -> usize {
        self.ranks[v]
    }

    pub fn children(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Edge distance from the root.
    pub fn node_depth(&self, v: usize) -> usize {
        self.depths[v]
    }

    /// Maximum node depth; 0 for a root-only tree. Also the number of draft
    /// passes needed to grow the tree.
    pub fn depth(&self) -> usize {
        self.depths.iter().copied().max().unwrap_or(0)
    }

    /// Number of layers, counting the root layer.
    pub fn layers(&self) -> usize {
        self.depth() + 1
    }

    pub fn max_branching(&self) -> usize {
        self.children.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Nodes at edge depth `d`, in storage order.
    pub fn layer(&self, d: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&v| self.depths[v] == d)
    }

    /// Child ranks along the path root → `v`.
    pub fn path(&self, v: usize) -> Result<Vec<usize>, TreeError> {
        if v >= self.len() {
            return Err(TreeError::NodeOutOfRange {
                node: v,
                size: self.len(),
            });
        }
        let mut out = Vec::with_capacity(self.depths[v]);
        let mut cur = v;
        while let Some(par) = self.parents[cur] {
            out.push(self.ranks[cur]);
            cur = par;
        }
        out.reverse();
        Ok(out)
    }

    /// `f(v)`: product of acceptance probabilities along the path to `v`.
    pub fn score(&self, v: usize, p: &AcceptanceVector) -> Result<f64, TreeError> {
        self.path(v)?.into_iter().try_fold(1.0, |acc, rank| {
            p.get(rank)
                .map(|pr| acc * pr)
                .ok_or(TreeError::RankOutOfRange { rank, kmax: p.kmax() })
        })
    }

    /// `F(T) = Σ_v f(v)`, the expected number of tokens per verification step.
    pub fn expected_tokens(&self, p: &AcceptanceVector) -> Result<f64, TreeError> {
        // storage order visits parents first, so scores fill in one pass
        let mut scores = vec![0.0; self.len()];
        scores[0] = 1.0;
        for v in 1..self.len() {
            let rank = self.ranks[v];
            let pr = p.get(rank).ok_or(TreeError::RankOutOfRange { rank, kmax: p.kmax() })?;
            scores[v] = scores[self.parents[v].unwrap()] * pr;
        }
        Ok(scores.iter().sum())
    }

    /// Monte Carlo estimate of [`expected_tokens`](Self::expected_tokens).
    pub fn simulate_expected_tokens<R: Rng + ?Sized>(
        &self,
        p: &AcceptanceVector,
        trials: usize,
        rng: &mut R,
    ) -> Result<f64, TreeError> {
        self.simulate_expected_tokens_with_error(p, trials, rng)
            .map(|(mean, _)| mean)
    }

    /// Simulates the positional acceptance process; returns `(mean, standard error)`.
    ///
    /// At each accepted node one uniform draw selects which child, if any, is
    /// accepted: child `i` wins when the draw falls in `[P_{i-1}, P_i)`.
    pub fn simulate_expected_tokens_with_error<R: Rng + ?Sized>(
        &self,
        p: &AcceptanceVector,
        trials: usize,
        rng: &mut R,
    ) -> Result<(f64, f64), TreeError> {
        assert!(trials >= 1, "at least one trial");
        let k = self.max_branching();
        if k > p.kmax() {
            return Err(TreeError::RankOutOfRange {
                rank: k,
                kmax: p.kmax(),
            });
        }
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..trials {
            let mut node = 0;
            let mut count = 1.0;
            'walk: loop {
                let kids = &self.children[node];
                if kids.is_empty() {
                    break;
                }
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, &child) in kids.iter().enumerate() {
                    acc += p.as_slice()[i];
                    if u < acc {
                        node = child;
                        count += 1.0;
                        continue 'walk;
                    }
                }
                break;
            }
            sum += count;
            sum_sq += count * count;
        }
        let n = trials as f64;
        let mean = sum / n;
        let var = if trials > 1 {
            ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        Ok((mean, (var / n).sqrt()))
    }

    /// Returns a new tree with a leaf appended as the last child of `parent`.
    pub fn with_leaf(&self, parent: usize) -> Result<Self, TreeError> {
        if parent >= self.len() {
            return Err(TreeError::NodeOutOfRange {
                node: parent,
                size: self.len(),
            });
        }
        fn build(t: &TreeTopology, v: usize, target: usize) -> Shape {
            let mut children: Vec<Shape> = t.children[v].iter().map(|&c| build(t, c, target)).collect();
            if v == target {
                children.push(Shape::leaf());
            }
            Shape { children }
        }
        Ok(TreeTopology::from_shape(&build(self, 0, parent)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TopologyJson {
            parents: self.parents.clone(),
            ranks: self.ranks.clone(),
        })
        .expect("topology serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, TreeError> {
        let raw: TopologyJson = serde_json::from_str(s).map_err(|e| TreeError::Parse(e.to_string()))?;
        TreeTopology::from_parts(raw.parents, raw.ranks).map_err(|e| TreeError::Parse(e.to_string()))
    }
}

impl Serialize for TreeTopology {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TopologyJson {
            parents: self.parents.clone(),
            ranks: self.ranks.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for TreeTopology {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = TopologyJson::deserialize(d)?;
        TreeTopology::from_parts(raw.parents, raw.ranks).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn av(p: &[f64]) -> AcceptanceVector {
        AcceptanceVector::new(p.to_vec()).unwrap()
    }

    // root with children a (rank 1) and b (rank 2); b has three children
    fn sample_tree() -> TreeTopology {
        TreeTopology::from_shape(&Shape::with_children(vec![
            Shape::leaf(),
            Shape::with_children(vec![Shape::leaf(), Shape::leaf(), Shape::leaf()]),
        ]))
    }

    #[test]
    fn paths() {
        let t = sample_tree();
        assert_eq!(t.path(0).unwrap(), Vec::<usize>::new());
        assert_eq!(t.path(1).unwrap(), vec![1]);
        // third child of the root's second child
        assert_eq!(t.path(5).unwrap(), vec![2, 3]);
        assert!(matches!(t.path(9), Err(TreeError::NodeOutOfRange { .. })));
    }

    #[test]
    fn scores() {
        let p = av(&[0.7, 0.2]);
        let t = TreeTopology::from_shape(&Shape::with_children(vec![
            Shape::leaf(),
            Shape::with_children(vec![Shape::leaf()]),
        ]));
        assert_eq!(t.score(0, &p).unwrap(), 1.0);
        assert_eq!(t.score(1, &p).unwrap(), 0.7);
        assert!((t.score(3, &p).unwrap() - 0.14).abs() < 1e-15);
        assert_eq!(
            sample_tree().score(5, &p),
            Err(TreeError::RankOutOfRange { rank: 3, kmax: 2 })
        );
    }

    #[test]
    fn expected_tokens_hand_values() {
        let p = av(&[0.5, 0.25]);
        assert_eq!(TreeTopology::root_only().expected_tokens(&p).unwrap(), 1.0);
        let t = TreeTopology::from_shape(&Shape::with_children(vec![
            Shape::with_children(vec![Shape::leaf()]),
            Shape::leaf(),
        ]));
        assert!((t.expected_tokens(&p).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn chain_matches_geometric_sum() {
        let p = av(&[0.8]);
        for n in 1..20 {
            let want = (1.0 - 0.8f64.powi(n as i32)) / 0.2;
            let got = TreeTopology::chain(n).expected_tokens(&p).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn simulator_exact_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(
            TreeTopology::root_only()
                .simulate_expected_tokens(&av(&[0.5]), 100, &mut rng)
                .unwrap(),
            1.0
        );
        assert_eq!(
            TreeTopology::chain(4)
                .simulate_expected_tokens(&av(&[1.0]), 100, &mut rng)
                .unwrap(),
            4.0
        );
        assert_eq!(
            sample_tree()
                .simulate_expected_tokens(&av(&[0.0, 0.0, 0.0]), 100, &mut rng)
                .unwrap(),
            1.0
        );
    }

    #[test]
    fn codec_examples() {
        assert_eq!(TreeTopology::root_only().to_json(), r#"{"parents":[null],"ranks":[0]}"#);
        assert_eq!(
            TreeTopology::chain(2).to_json(),
            r#"{"parents":[null,0],"ranks":[0,1]}"#
        );
        assert!(matches!(TreeTopology::from_json("{"), Err(TreeError::Parse(_))));
        assert!(matches!(
            TreeTopology::from_json(r#"{"parents":[null,0],"ranks":[0,2]}"#),
            Err(TreeError::Parse(_))
        ));
        assert!(matches!(
            TreeTopology::from_json(r#"{"parents":[null,null],"ranks":[0,0]}"#),
            Err(TreeError::Parse(_))
        ));
    }

    #[test]
    fn breadth_first_order_is_enforced() {
        // node 2 hangs off node 1 but node 3 hangs off the root
        let r = TreeTopology::from_parts(vec![None, Some(0), Some(1), Some(0)], vec![0, 1, 1, 2]);
        assert!(r.is_err());
    }

    #[test]
    fn acceptance_vector_validation() {
        assert!(matches!(AcceptanceVector::new(vec![]), Err(AcceptanceError::Empty)));
        assert!(matches!(
            AcceptanceVector::new(vec![0.2, 0.3]),
            Err(AcceptanceError::NotMonotone { rank: 2, .. })
        ));
        assert!(matches!(
            AcceptanceVector::new(vec![0.6, 0.5]),
            Err(AcceptanceError::MassExceedsOne { rank: 2, .. })
        ));
        assert!(matches!(
            AcceptanceVector::new(vec![1.2]),
            Err(AcceptanceError::OutOfRange { .. })
        ));
        let a = AcceptanceVector::from_rejection_rates(&[0.5, 0.3, 0.2]).unwrap();
        assert_eq!(a.as_slice(), &[0.5, 0.2, 0.09999999999999998]);
        assert_eq!(a.rejection_rates().len(), 3);
    }

    fn arb_shape(max_nodes: usize) -> impl Strategy<Value = TreeTopology> {
        // random parent pointers, then re-sorted into canonical order
        prop::collection::vec(any::<prop::sample::Index>(), 0..max_nodes).prop_map(|picks| {
            let mut kids: Vec<Vec<usize>> = vec![Vec::new()];
            for (i, pick) in picks.iter().enumerate() {
                let par = pick.index(i + 1);
                kids[par].push(i + 1);
                kids.push(Vec::new());
            }
            fn build(kids: &[Vec<usize>], v: usize) -> Shape {
                Shape {
                    children: kids[v].iter().map(|&c| build(kids, c)).collect(),
                }
            }
            TreeTopology::from_shape(&build(&kids, 0))
        })
    }

    fn arb_acceptance() -> impl Strategy<Value = AcceptanceVector> {
        prop::collection::vec(0.01..1.0f64, 12).prop_map(|mut w| {
            w.sort_by(|a, b| b.total_cmp(a));
            let total: f64 = w.iter().sum::<f64>() * 1.25;
            AcceptanceVector::new(w.iter().map(|x| x / total).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn codec_round_trip(t in arb_shape(30)) {
            let back = TreeTopology::from_json(&t.to_json()).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(TreeTopology::from_shape(&t.to_shape()), t);
        }

        #[test]
        fn adding_a_leaf_adds_its_score(t in arb_shape(11), p in arb_acceptance(), pick in any::<prop::sample::Index>()) {
            let parent = pick.index(t.len());
            let bigger = t.with_leaf(parent).unwrap();
            let f_old = t.expected_tokens(&p).unwrap();
            let f_new = bigger.expected_tokens(&p).unwrap();
            // the new leaf's score is its parent's score times p at the new rank
            let leaf_score = t.score(parent, &p).unwrap() * p.get(t.children(parent).len() + 1).unwrap();
            prop_assert!((f_new - f_old - leaf_score).abs() < 1e-12);
            prop_assert!(f_new > f_old);
        }
    }
}
