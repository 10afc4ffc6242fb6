//! Node-level sampling and verification, recursive tree verification, and the
//! exact enumeration oracle that checks them.
//!
//! Three verifiers are provided:
//!
//! - **Sequoia**: children are drawn from the draft without replacement. A child
//!   `x` is accepted with probability `min(1, R[x] / D[x])`; on rejection the
//!   residual becomes `norm(max(R - D, 0))`, `x` is removed from `D`, and once
//!   `D` runs out of mass it is replaced by the uniform distribution over the
//!   tokens not yet rejected.
//! - **SpecInfer**: the same accept test with children drawn i.i.d. and `D` never
//!   modified.
//! - **Top-k**: children are the `k` most likely draft tokens; one token is drawn
//!   from the target and accepted if it is one of them.
//!
//! All three leave the output distribution equal to the target's.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::categorical::{uniform_over, Categorical, CategoricalError, TokenId, DEGENERATE_EPS};
use crate::tree::TreeTopology;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VerifyError {
    #[error("speculated children must be distinct, {0} appears twice")]
    MismatchedChildren(TokenId),
    #[error("child {0} has zero draft probability and cannot have been sampled")]
    ImpossibleChild(TokenId),
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("enumeration exceeded the budget of {budget} branches")]
    TooLarge { budget: usize },
    #[error("unsupported verifier {0:?}; expected sequoia, specinfer or topk")]
    UnsupportedVerifier(String),
    #[error(transparent)]
    Categorical(#[from] CategoricalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifierKind {
    Sequoia,
    SpecInfer,
    #[serde(rename = "topk")]
    TopKNaive,
}

impl VerifierKind {
    pub const ALL: [VerifierKind; 3] = [VerifierKind::Sequoia, VerifierKind::SpecInfer, VerifierKind::TopKNaive];

    pub fn name(self) -> &'static str {
        match self {
            VerifierKind::Sequoia => "sequoia",
            VerifierKind::SpecInfer => "specinfer",
            VerifierKind::TopKNaive => "topk",
        }
    }
}

impl fmt::Display for VerifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VerifierKind {
    type Err = VerifyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sequoia" => Ok(VerifierKind::Sequoia),
            "specinfer" => Ok(VerifierKind::SpecInfer),
            "topk" | "top-k" => Ok(VerifierKind::TopKNaive),
            _ => Err(VerifyError::UnsupportedVerifier(s.to_string())),
        }
    }
}

/// Outcome of verifying the children of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeOutcome {
    pub accepted: TokenId,
    /// 1-based rank of the accepted child; `None` when the token came from the
    /// residual (or the target) instead.
    pub accepted_child_rank: Option<usize>,
    /// Children examined (draft tokens) or target draws (top-k).
    pub draws_used: usize,
}

/// Result of verifying a whole token tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifiedResult {
    pub accepted_path: Vec<TokenId>,
    pub bonus_token: TokenId,
    pub tokens_generated: usize,
}

impl VerifiedResult {
    /// Accepted path followed by the bonus token.
    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.accepted_path
            .iter()
            .copied()
            .chain(std::iter::once(self.bonus_token))
    }
}

/// Any model that maps a context to a next-token distribution.
pub trait ConditionalModel {
    fn vocab_size(&self) -> usize;
    fn next_distribution(&self, context: &[TokenId]) -> &Categorical;
    /// Number of trailing context tokens the model looks at, if bounded.
    /// Callers may truncate contexts to this length.
    fn context_window(&self) -> Option<usize> {
        None
    }
}

fn check_distinct(children: &[TokenId], vocab: usize) -> Result<(), VerifyError> {
    let mut seen = BTreeSet::new();
    for &c in children {
        if c.0 >= vocab {
            return Err(CategoricalError::TokenOutOfRange { token: c.0, vocab }.into());
        }
        if !seen.insert(c) {
            return Err(VerifyError::MismatchedChildren(c));
        }
    }
    Ok(())
}

fn check_vocab(p: &Categorical, q: &Categorical) -> Result<(), VerifyError> {
    if p.vocab_size() != q.vocab_size() {
        return Err(CategoricalError::VocabMismatch {
            left: p.vocab_size(),
            right: q.vocab_size(),
        }
        .into());
    }
    Ok(())
}

/// `max(R - D, 0)` renormalised; `None` when the difference has no mass.
fn residual_step(r: &[f64], d: &[f64]) -> Option<Vec<f64>> {
    let mut out: Vec<f64> = r.iter().zip(d).map(|(a, b)| (a - b).max(0.0)).collect();
    let s: f64 = out.iter().sum();
    if s <= DEGENERATE_EPS {
        return None;
    }
    out.iter_mut().for_each(|x| *x /= s);
    Some(out)
}

/// Removes `x` from the draft and renormalises, falling back to uniform over the
/// non-rejected tokens once the draft has no mass left.
fn deplete_draft(d: &mut [f64], x: TokenId, rejected: &BTreeSet<TokenId>) {
    d[x.0] = 0.0;
    let s: f64 = d.iter().sum();
    if s <= DEGENERATE_EPS {
        match uniform_over(rejected, d.len()) {
            Ok(u) => d.copy_from_slice(u.probs()),
            // every token rejected; only reachable through rounding
            Err(_) => d.iter_mut().for_each(|v| *v = 0.0),
        }
    } else {
        d.iter_mut().for_each(|v| *v /= s);
    }
}

/// Sequoia node verification of children drawn without replacement from `q`.
pub fn sequoia_node_verify<R: Rng + ?Sized>(
    p: &Categorical,
    q: &Categorical,
    children: &[TokenId],
    rng: &mut R,
) -> Result<NodeOutcome, VerifyError> {
    check_vocab(p, q)?;
    check_distinct(children, p.vocab_size())?;
    let mut residual = p.probs().to_vec();
    let mut draft = q.probs().to_vec();
    let mut rejected = BTreeSet::new();
    for (i, &x) in children.iter().enumerate() {
        let d = draft[x.0];
        if d <= 0.0 {
            return Err(VerifyError::ImpossibleChild(x));
        }
        let u: f64 = rng.random();
        let accept = |rank| NodeOutcome {
            accepted: x,
            accepted_child_rank: Some(rank),
            draws_used: i + 1,
        };
        if u < residual[x.0] / d {
            return Ok(accept(i + 1));
        }
        match residual_step(&residual, &draft) {
            Some(next) => residual = next,
            // R == D, so the accept test above should have passed
            None => return Ok(accept(i + 1)),
        }
        rejected.insert(x);
        deplete_draft(&mut draft, x, &rejected);
    }
    let bonus = Categorical::normalize(&residual)?.sample(rng);
    Ok(NodeOutcome {
        accepted: bonus,
        accepted_child_rank: None,
        draws_used: children.len(),
    })
}

/// SpecInfer node verification of children drawn i.i.d. from `q`.
pub fn specinfer_node_verify<R: Rng + ?Sized>(
    p: &Categorical,
    q: &Categorical,
    children: &[TokenId],
    rng: &mut R,
) -> Result<NodeOutcome, VerifyError> {
    check_vocab(p, q)?;
    let mut residual = p.probs().to_vec();
    let draft = q.probs();
    for (i, &x) in children.iter().enumerate() {
        if x.0 >= draft.len() {
            return Err(CategoricalError::TokenOutOfRange {
                token: x.0,
                vocab: draft.len(),
            }
            .into());
        }
        let d = draft[x.0];
        if d <= 0.0 {
            return Err(VerifyError::ImpossibleChild(x));
        }
        let u: f64 = rng.random();
        let accept = NodeOutcome {
            accepted: x,
            accepted_child_rank: Some(i + 1),
            draws_used: i + 1,
        };
        if u < residual[x.0] / d {
            return Ok(accept);
        }
        match residual_step(&residual, draft) {
            Some(next) => residual = next,
            None => return Ok(accept),
        }
    }
    let bonus = Categorical::normalize(&residual)?.sample(rng);
    Ok(NodeOutcome {
        accepted: bonus,
        accepted_child_rank: None,
        draws_used: children.len(),
    })
}

/// Top-k naive verification: one target draw, accepted if it is a child.
pub fn topk_node_verify<R: Rng + ?Sized>(
    p: &Categorical,
    children: &[TokenId],
    rng: &mut R,
) -> Result<NodeOutcome, VerifyError> {
    check_distinct(children, p.vocab_size())?;
    let x = p.sample(rng);
    let rank = children.iter().position(|&c| c == x).map(|i| i + 1);
    Ok(NodeOutcome {
        accepted: x,
        accepted_child_rank: rank,
        draws_used: 1,
    })
}

/// Dispatches to the node verifier for `kind`.
pub fn node_verify<R: Rng + ?Sized>(
    kind: VerifierKind,
    p: &Categorical,
    q: &Categorical,
    children: &[TokenId],
    rng: &mut R,
) -> Result<NodeOutcome, VerifyError> {
    match kind {
        VerifierKind::Sequoia => sequoia_node_verify(p, q, children, rng),
        VerifierKind::SpecInfer => specinfer_node_verify(p, q, children, rng),
        VerifierKind::TopKNaive => topk_node_verify(p, children, rng),
    }
}

/// Speculates `k` children of a node from the draft distribution `q`, in rank
/// order, the way `kind` populates a tree.
///
/// For Sequoia the draws are without replacement; once the draft support is
/// exhausted the remaining tokens follow in uniformly random order, matching
/// the uniform fallback of the verifier.
pub fn draw_children<R: Rng + ?Sized>(
    kind: VerifierKind,
    q: &Categorical,
    k: usize,
    rng: &mut R,
) -> Result<Vec<TokenId>, CategoricalError> {
    let vocab = q.vocab_size();
    match kind {
        VerifierKind::Sequoia => {
            if k > vocab {
                return Err(CategoricalError::InsufficientSupport {
                    requested: k,
                    support: vocab,
                });
            }
            let support = q.support_size();
            let mut out = q.sample_without_replacement(k.min(support), rng)?;
            if k > support {
                let mut rest: Vec<TokenId> = (0..vocab).map(TokenId).filter(|t| q.prob(*t) == 0.0).collect();
                // partial Fisher-Yates
                for i in 0..(k - support) {
                    let j = rng.random_range(i..rest.len());
                    rest.swap(i, j);
                }
                out.extend_from_slice(&rest[..k - support]);
            }
            Ok(out)
        }
        VerifierKind::SpecInfer => Ok((0..k).map(|_| q.sample(rng)).collect()),
        VerifierKind::TopKNaive => {
            if k > vocab {
                return Err(CategoricalError::InsufficientSupport {
                    requested: k,
                    support: vocab,
                });
            }
            Ok(q.ranked().into_iter().take(k).collect())
        }
    }
}

/// Exact behaviour of one node verification.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactNodeResult {
    /// Distribution of the emitted token (accepted child or bonus).
    pub output: Vec<f64>,
    /// `accept_by_rank[i]`: probability that the child of rank `i + 1` is accepted.
    pub accept_by_rank: Vec<f64>,
}

impl ExactNodeResult {
    pub fn acceptance(&self) -> f64 {
        self.accept_by_rank.iter().sum()
    }

    /// `r_j = 1 - Σ_{i<=j} accept_by_rank[i]` for `j = 1..=k`.
    pub fn rejection_rates(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.accept_by_rank
            .iter()
            .map(|a| {
                acc += a;
                (1.0 - acc).max(0.0)
            })
            .collect()
    }
}

/// Default branch budget for [`exact_node_distribution`].
pub const EXACT_BUDGET: usize = 5_000_000;

/// Enumerates every draw sequence and accept/reject branch of one node
/// verification with `k` children, integrating the uniform accept thresholds
/// in closed form.
pub fn exact_node_distribution(
    p: &Categorical,
    q: &Categorical,
    k: usize,
    kind: VerifierKind,
) -> Result<ExactNodeResult, VerifyError> {
    exact_node_distribution_with_budget(p, q, k, kind, EXACT_BUDGET)
}

pub fn exact_node_distribution_with_budget(
    p: &Categorical,
    q: &Categorical,
    k: usize,
    kind: VerifierKind,
    budget: usize,
) -> Result<ExactNodeResult, VerifyError> {
    check_vocab(p, q)?;
    let vocab = p.vocab_size();
    let mut out = ExactNodeResult {
        output: vec![0.0; vocab],
        accept_by_rank: vec![0.0; k],
    };
    match kind {
        VerifierKind::TopKNaive => {
            if k > vocab {
                return Err(CategoricalError::InsufficientSupport {
                    requested: k,
                    support: vocab,
                }
                .into());
            }
            let children: Vec<TokenId> = q.ranked().into_iter().take(k).collect();
            for (x, &px) in p.probs().iter().enumerate() {
                out.output[x] += px;
                if let Some(i) = children.iter().position(|c| c.0 == x) {
                    out.accept_by_rank[i] += px;
                }
            }
        }
        VerifierKind::Sequoia => {
            if k > vocab {
                return Err(CategoricalError::InsufficientSupport {
                    requested: k,
                    support: vocab,
                }
                .into());
            }
            let mut walker = Enumerator {
                kind,
                k,
                budget,
                visited: 0,
                out: &mut out,
            };
            walker.visit(p.probs().to_vec(), q.probs().to_vec(), BTreeSet::new(), 0, 1.0)?;
        }
        // The SpecInfer residual after j rejections does not depend on which
        // tokens were rejected, so every branch at one step shares a state.
        VerifierKind::SpecInfer => specinfer_chain(p.probs(), q.probs(), k, &mut out),
    }
    Ok(out)
}

/// Branch-by-branch enumeration for any sampling verifier. Exponential in `k`;
/// used to cross-check the collapsed SpecInfer computation.
pub fn enumerate_node_distribution(
    p: &Categorical,
    q: &Categorical,
    k: usize,
    kind: VerifierKind,
    budget: usize,
) -> Result<ExactNodeResult, VerifyError> {
    if kind == VerifierKind::TopKNaive {
        return exact_node_distribution_with_budget(p, q, k, kind, budget);
    }
    check_vocab(p, q)?;
    if kind == VerifierKind::Sequoia && k > p.vocab_size() {
        return Err(CategoricalError::InsufficientSupport {
            requested: k,
            support: p.vocab_size(),
        }
        .into());
    }
    let mut out = ExactNodeResult {
        output: vec![0.0; p.vocab_size()],
        accept_by_rank: vec![0.0; k],
    };
    let mut walker = Enumerator {
        kind,
        k,
        budget,
        visited: 0,
        out: &mut out,
    };
    walker.visit(p.probs().to_vec(), q.probs().to_vec(), BTreeSet::new(), 0, 1.0)?;
    Ok(out)
}

fn specinfer_chain(p: &[f64], q: &[f64], k: usize, out: &mut ExactNodeResult) {
    let mut residual = p.to_vec();
    let mut mass = 1.0;
    for step in 0..k {
        let next = residual_step(&residual, q);
        let mut rejected = 0.0;
        for (x, &d) in q.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            let a = (residual[x] / d).min(1.0);
            let take = mass * d * a;
            let reject = mass * d * (1.0 - a);
            out.output[x] += take;
            out.accept_by_rank[step] += take;
            if next.is_none() {
                out.output[x] += reject;
                out.accept_by_rank[step] += reject;
            } else {
                rejected += reject;
            }
        }
        match next {
            Some(r) => residual = r,
            None => return,
        }
        mass = rejected;
        if mass <= 0.0 {
            return;
        }
    }
    for (o, r) in out.output.iter_mut().zip(&residual) {
        *o += mass * r;
    }
}

struct Enumerator<'a> {
    kind: VerifierKind,
    k: usize,
    budget: usize,
    visited: usize,
    out: &'a mut ExactNodeResult,
}

impl Enumerator<'_> {
    fn visit(
        &mut self,
        residual: Vec<f64>,
        draft: Vec<f64>,
        rejected: BTreeSet<TokenId>,
        step: usize,
        mass: f64,
    ) -> Result<(), VerifyError> {
        self.visited += 1;
        if self.visited > self.budget {
            return Err(VerifyError::TooLarge { budget: self.budget });
        }
        if step == self.k {
            for (o, r) in self.out.output.iter_mut().zip(&residual) {
                *o += mass * r;
            }
            return Ok(());
        }
        for x in 0..draft.len() {
            let d = draft[x];
            if d <= 0.0 {
                continue;
            }
            let drawn = mass * d;
            let a = (residual[x] / d).min(1.0);
            let reject = drawn * (1.0 - a);
            self.out.output[x] += drawn * a;
            self.out.accept_by_rank[step] += drawn * a;
            if reject <= 0.0 {
                continue;
            }
            let Some(next_residual) = residual_step(&residual, &draft) else {
                self.out.output[x] += reject;
                self.out.accept_by_rank[step] += reject;
                continue;
            };
            let (next_draft, next_rejected) = match self.kind {
                VerifierKind::Sequoia => {
                    let mut nd = draft.clone();
                    let mut nr = rejected.clone();
                    nr.insert(TokenId(x));
                    deplete_draft(&mut nd, TokenId(x), &nr);
                    (nd, nr)
                }
                _ => (draft.clone(), rejected.clone()),
            };
            self.visit(next_residual, next_draft, next_rejected, step + 1, reject)?;
        }
        Ok(())
    }
}

fn node_stream(master: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(node as u64);
    rng
}

/// Verifies a populated token tree from the root down.
///
/// `node_tokens[v]` is the token at node `v` (the root entry is ignored), and
/// `draft_dists[v]` / `target_dists[v]` are the conditionals at the prefix
/// ending in `v`. Each node draws from its own RNG stream derived from one
/// master seed taken from `rng`.
pub fn verify_tree<R: Rng + ?Sized>(
    topology: &TreeTopology,
    node_tokens: &[TokenId],
    draft_dists: &[Categorical],
    target_dists: &[Categorical],
    kind: VerifierKind,
    rng: &mut R,
) -> Result<VerifiedResult, VerifyError> {
    let n = topology.len();
    if node_tokens.len() != n || draft_dists.len() != n || target_dists.len() != n {
        return Err(VerifyError::TopologyMismatch(format!(
            "{n} nodes but {} tokens, {} draft and {} target distributions",
            node_tokens.len(),
            draft_dists.len(),
            target_dists.len()
        )));
    }
    let master: u64 = rng.random();
    let mut path = Vec::new();
    let mut node = 0;
    loop {
        let mut node_rng = node_stream(master, node);
        let kids = topology.children(node);
        if kids.is_empty() {
            let bonus = target_dists[node].sample(&mut node_rng);
            let tokens_generated = path.len() + 1;
            return Ok(VerifiedResult {
                accepted_path: path,
                bonus_token: bonus,
                tokens_generated,
            });
        }
        let child_tokens: Vec<TokenId> = kids.iter().map(|&c| node_tokens[c]).collect();
        let outcome = node_verify(
            kind,
            &target_dists[node],
            &draft_dists[node],
            &child_tokens,
            &mut node_rng,
        )
        .map_err(|e| match e {
            VerifyError::MismatchedChildren(t) => {
                VerifyError::TopologyMismatch(format!("node {node} has duplicate child token {t}"))
            }
            other => other,
        })?;
        match outcome.accepted_child_rank {
            Some(rank) => {
                path.push(outcome.accepted);
                node = kids[rank - 1];
            }
            None => {
                let tokens_generated = path.len() + 1;
                return Ok(VerifiedResult {
                    accepted_path: path,
                    bonus_token: outcome.accepted,
                    tokens_generated,
                });
            }
        }
    }
}

/// One step of classic sequence speculative decoding with `gamma` draft tokens.
///
/// Returns the accepted draft tokens followed by one final token from the
/// residual (or from the target after the last draft position).
pub fn sequence_spec_decode<M: ConditionalModel, R: Rng + ?Sized>(
    draft: &M,
    target: &M,
    prefix: &[TokenId],
    gamma: usize,
    rng: &mut R,
) -> Vec<TokenId> {
    assert!(gamma >= 1, "gamma must be at least 1");
    let mut context = prefix.to_vec();
    let mut proposals = Vec::with_capacity(gamma);
    let mut draft_dists = Vec::with_capacity(gamma);
    for _ in 0..gamma {
        let q = draft.next_distribution(&context).clone();
        let x = q.sample(rng);
        context.push(x);
        proposals.push(x);
        draft_dists.push(q);
    }
    let target_dists: Vec<&Categorical> = (0..=gamma)
        .map(|i| target.next_distribution(&context[..prefix.len() + i]))
        .collect();

    let mut accepted = 0;
    for i in 0..gamma {
        let x = proposals[i];
        let u: f64 = rng.random();
        if u < target_dists[i].prob(x) / draft_dists[i].prob(x) {
            accepted += 1;
        } else {
            break;
        }
    }
    let last = if accepted < gamma {
        target_dists[accepted]
            .residual(&draft_dists[accepted])
            .unwrap_or_else(|_| target_dists[accepted].clone())
    } else {
        target_dists[gamma].clone()
    };
    let mut out = proposals[..accepted].to_vec();
    out.push(last.sample(rng));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(v: &[f64]) -> Categorical {
        Categorical::new(v.to_vec()).unwrap()
    }

    fn exact(p: &[f64], q: &[f64], k: usize, kind: VerifierKind) -> ExactNodeResult {
        exact_node_distribution(&cat(p), &cat(q), k, kind).unwrap()
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("sequoia".parse::<VerifierKind>().unwrap(), VerifierKind::Sequoia);
        assert_eq!("specinfer".parse::<VerifierKind>().unwrap(), VerifierKind::SpecInfer);
        assert_eq!("topk".parse::<VerifierKind>().unwrap(), VerifierKind::TopKNaive);
        assert!(matches!(
            "spectr".parse::<VerifierKind>(),
            Err(VerifyError::UnsupportedVerifier(_))
        ));
        assert_eq!(serde_json::to_string(&VerifierKind::TopKNaive).unwrap(), "\"topk\"");
    }

    #[test]
    fn cover_counterexample() {
        let s = exact(&[1.0, 0.0], &[0.5, 0.5], 2, VerifierKind::Sequoia);
        assert!((s.acceptance() - 1.0).abs() < 1e-12);
        let si = exact(&[1.0, 0.0], &[0.5, 0.5], 2, VerifierKind::SpecInfer);
        assert!((si.acceptance() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn optimal_transport_hand_case() {
        let r = exact(&[0.6, 0.3, 0.1], &[0.3, 0.4, 0.3], 1, VerifierKind::Sequoia);
        assert!((r.acceptance() - 0.7).abs() < 1e-12);
        let t = exact(&[0.6, 0.4], &[0.6, 0.4], 1, VerifierKind::TopKNaive);
        assert!((t.acceptance() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn specinfer_two_draws_by_hand() {
        // P=[0.6,0.4], Q=[0.4,0.6]. First draw: token 0 always accepted (0.4);
        // token 1 accepted with 2/3 (mass 0.4), rejected with mass 0.2.
        // Residual after rejection is [1,0]; second draw accepts only token 0 (0.4).
        let r = exact(&[0.6, 0.4], &[0.4, 0.6], 2, VerifierKind::SpecInfer);
        assert!((r.accept_by_rank[0] - 0.8).abs() < 1e-12);
        assert!((r.accept_by_rank[1] - 0.2 * 0.4).abs() < 1e-12);
        for (o, p) in r.output.iter().zip([0.6, 0.4]) {
            assert!((o - p).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_children_emit_target() {
        for kind in VerifierKind::ALL {
            let r = exact(&[0.2, 0.8], &[0.9, 0.1], 0, kind);
            assert_eq!(r.output, vec![0.2, 0.8]);
            assert!(r.accept_by_rank.is_empty());
        }
    }

    #[test]
    fn identical_distributions_accept_first_child() {
        let p = cat(&[0.3, 0.3, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let kids = draw_children(VerifierKind::Sequoia, &p, 1, &mut rng).unwrap();
            let o = sequoia_node_verify(&p, &p, &kids, &mut rng).unwrap();
            assert_eq!(o.accepted_child_rank, Some(1));
            let o = specinfer_node_verify(&p, &p, &kids, &mut rng).unwrap();
            assert_eq!(o.accepted_child_rank, Some(1));
        }
    }

    #[test]
    fn topk_acceptance_is_child_mass() {
        let r = exact(&[0.5, 0.3, 0.2], &[0.1, 0.8, 0.1], 1, VerifierKind::TopKNaive);
        assert!((r.acceptance() - 0.3).abs() < 1e-12);
        let full = exact(&[0.5, 0.3, 0.2], &[0.1, 0.8, 0.1], 3, VerifierKind::TopKNaive);
        assert!((full.acceptance() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicate_children_rejected() {
        let p = cat(&[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sequoia_node_verify(&p, &p, &[TokenId(1), TokenId(1)], &mut rng),
            Err(VerifyError::MismatchedChildren(TokenId(1)))
        );
        assert!(topk_node_verify(&p, &[TokenId(0), TokenId(0)], &mut rng).is_err());
    }

    #[test]
    fn enumeration_budget() {
        let u = cat(&[0.25; 4]);
        let v = cat(&[0.1, 0.2, 0.3, 0.4]);
        assert_eq!(
            exact_node_distribution_with_budget(&u, &v, 4, VerifierKind::Sequoia, 10),
            Err(VerifyError::TooLarge { budget: 10 })
        );
        assert_eq!(
            enumerate_node_distribution(&u, &v, 4, VerifierKind::SpecInfer, 10),
            Err(VerifyError::TooLarge { budget: 10 })
        );
    }

    #[test]
    fn specinfer_chain_matches_enumeration() {
        let cases: [(&[f64], &[f64], usize); 4] = [
            (&[0.6, 0.4], &[0.4, 0.6], 3),
            (&[0.5, 0.3, 0.2, 0.0], &[0.1, 0.2, 0.3, 0.4], 4),
            (&[1.0, 0.0], &[0.5, 0.5], 2),
            (&[0.25, 0.25, 0.5], &[0.25, 0.25, 0.5], 3),
        ];
        for (p, q, k) in cases {
            let a = exact(p, q, k, VerifierKind::SpecInfer);
            let b = enumerate_node_distribution(&cat(p), &cat(q), k, VerifierKind::SpecInfer, 1 << 20).unwrap();
            for (x, y) in a.output.iter().zip(&b.output) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.accept_by_rank.iter().zip(&b.accept_by_rank) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sequoia_children_past_support_are_uniform_fallback() {
        let q = cat(&[0.0, 1.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kids = draw_children(VerifierKind::Sequoia, &q, 4, &mut rng).unwrap();
        assert_eq!(kids[0], TokenId(1));
        let set: BTreeSet<_> = kids.iter().copied().collect();
        assert_eq!(set.len(), 4);
        assert!(draw_children(VerifierKind::Sequoia, &q, 5, &mut rng).is_err());
    }

    #[test]
    fn verify_tree_shape_checks() {
        let t = TreeTopology::chain(2);
        let d = cat(&[0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = verify_tree(
            &t,
            &[TokenId(0)],
            std::slice::from_ref(&d),
            std::slice::from_ref(&d),
            VerifierKind::Sequoia,
            &mut rng,
        );
        assert!(matches!(err, Err(VerifyError::TopologyMismatch(_))));
        let r = verify_tree(
            &TreeTopology::root_only(),
            &[TokenId(0)],
            std::slice::from_ref(&d),
            std::slice::from_ref(&d),
            VerifierKind::Sequoia,
            &mut rng,
        )
        .unwrap();
        assert_eq!(r.tokens_generated, 1);
        assert!(r.accepted_path.is_empty());
    }
}
