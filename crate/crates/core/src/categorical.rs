//! Finite categorical distributions over a dense token vocabulary `0..V`.
//!
//! Every verifier in this crate works on the same small set of primitives: a
//! validated probability vector, the renormalised positive part of a difference
//! (the residual), and sampling with or without replacement from an explicit RNG.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sums at or below this are treated as zero mass.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Tolerance on `sum(probs) == 1` when constructing a [`Categorical`].
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CategoricalError {
    #[error("distribution must have at least one entry")]
    Empty,
    #[error("entry {index} is {value}, expected a finite non-negative number")]
    InvalidEntry { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1 within {NORMALIZATION_TOL}")]
    NotNormalized { sum: f64 },
    #[error("vector has total mass {sum}, too small to normalise")]
    DegenerateVector { sum: f64 },
    #[error("vocabulary sizes differ: {left} vs {right}")]
    VocabMismatch { left: usize, right: usize },
    #[error("requested {requested} distinct tokens but support has only {support}")]
    InsufficientSupport { requested: usize, support: usize },
    #[error("every token of the vocabulary is excluded")]
    EmptySupport,
    #[error("token {token} is outside a vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
}

/// Index of a token in the vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub usize);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// A probability vector indexed by token id. Serialises as a bare JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Categorical {
    probs: Vec<f64>,
}

fn check_entries(v: &[f64]) -> Result<f64, CategoricalError> {
    if v.is_empty() {
        return Err(CategoricalError::Empty);
    }
    let mut sum = 0.0;
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(CategoricalError::InvalidEntry { index, value });
        }
        sum += value;
    }
    Ok(sum)
}

impl Categorical {
    /// Validates an already-normalised probability vector.
    pub fn new(probs: Vec<f64>) -> Result<Self, CategoricalError> {
        let sum = check_entries(&probs)?;
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CategoricalError::NotNormalized { sum });
        }
        Ok(Categorical { probs })
    }

    /// Scales a non-negative vector to unit mass.
    pub fn normalize(v: &[f64]) -> Result<Self, CategoricalError> {
        let sum = check_entries(v)?;
        if sum <= DEGENERATE_EPS {
            return Err(CategoricalError::DegenerateVector { sum });
        }
        Ok(Categorical {
            probs: v.iter().map(|x| x / sum).collect(),
        })
    }

    pub fn point_mass(token: TokenId, vocab: usize) -> Result<Self, CategoricalError> {
        if token.0 >= vocab {
            return Err(CategoricalError::TokenOutOfRange { token: token.0, vocab });
        }
        let mut probs = vec![0.0; vocab];
        probs[token.0] = 1.0;
        Ok(Categorical { probs })
    }

    pub fn uniform(vocab: usize) -> Result<Self, CategoricalError> {
        uniform_over(&BTreeSet::new(), vocab)
    }

    #[inline]
    pub fn vocab_size(&self) -> usize {
        self.probs.len()
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs[token.0]
    }

    pub fn support(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| TokenId(i))
    }

    pub fn support_size(&self) -> usize {
        self.probs.iter().filter(|&&p| p > 0.0).count()
    }

    /// Tokens sorted by decreasing probability, ties by increasing id.
    pub fn ranked(&self) -> Vec<TokenId> {
        let mut ids: Vec<usize> = (0..self.probs.len()).collect();
        ids.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        ids.into_iter().map(TokenId).collect()
    }

    fn same_vocab(&self, other: &Categorical) -> Result<(), CategoricalError> {
        if self.vocab_size() != other.vocab_size() {
            return Err(CategoricalError::VocabMismatch {
                left: self.vocab_size(),
                right: other.vocab_size(),
            });
        }
        Ok(())
    }

    /// `norm(max(self - other, 0))`.
    pub fn residual(&self, other: &Categorical) -> Result<Categorical, CategoricalError> {
        self.same_vocab(other)?;
        let diff: Vec<f64> = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(r, d)| (r - d).max(0.0))
            .collect();
        Categorical::normalize(&diff)
    }

    /// Total variation distance `½ Σ |P_i − Q_i|`.
    pub fn tv_distance(&self, other: &Categorical) -> Result<f64, CategoricalError> {
        self.same_vocab(other)?;
        let l1: f64 = self.probs.iter().zip(&other.probs).map(|(p, q)| (p - q).abs()).sum();
        Ok((0.5 * l1).clamp(0.0, 1.0))
    }

    /// Draws one token by inverting the CDF.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return TokenId(i);
                }
            }
        }
        // u landed in the rounding gap above the accumulated mass
        TokenId(last_positive)
    }

    /// Draws `m` distinct tokens, distributed as `m` sequential draws that each
    /// remove the drawn token and renormalise.
    ///
    /// Uses exponential sort: each support token gets the key `E_i / p_i` with
    /// `E_i ~ Exp(1)`, and the `m` smallest keys are returned in ascending order.
    pub fn sample_without_replacement<R: Rng + ?Sized>(
        &self,
        m: usize,
        rng: &mut R,
    ) -> Result<Vec<TokenId>, CategoricalError> {
        let support = self.support_size();
        if m > support {
            return Err(CategoricalError::InsufficientSupport { requested: m, support });
        }
        let mut keyed: Vec<(f64, usize)> = Vec::with_capacity(support);
        for (i, &p) in self.probs.iter().enumerate() {
            // one uniform per vocabulary entry keeps the stream position independent of the support
            let u: f64 = rng.random();
            if p > 0.0 {
                let e = -(1.0 - u).ln();
                keyed.push((e / p, i));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(keyed.into_iter().take(m).map(|(_, i)| TokenId(i)).collect())
    }
}

impl TryFrom<Vec<f64>> for Categorical {
    type Error = CategoricalError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Categorical::new(v)
    }
}

impl From<Categorical> for Vec<f64> {
    fn from(c: Categorical) -> Self {
        c.probs
    }
}

/// Free-function form of [`Categorical::normalize`].
pub fn normalize(v: &[f64]) -> Result<Categorical, CategoricalError> {
    Categorical::normalize(v)
}

/// Uniform distribution over the tokens of `0..vocab` not in `excluded`.
pub fn uniform_over(excluded: &BTreeSet<TokenId>, vocab: usize) -> Result<Categorical, CategoricalError> {
    if vocab == 0 {
        return Err(CategoricalError::Empty);
    }
    let live = (0..vocab).filter(|i| !excluded.contains(&TokenId(*i))).count();
    if live == 0 {
        return Err(CategoricalError::EmptySupport);
    }
    let w = 1.0 / live as f64;
    let probs = (0..vocab)
        .map(|i| if excluded.contains(&TokenId(i)) { 0.0 } else { w })
        .collect();
    Ok(Categorical { probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cat(v: &[f64]) -> Categorical {
        Categorical::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&[0.5, 0.0]).unwrap().probs(), &[1.0, 0.0]);
        assert_eq!(normalize(&[0.25, 0.25, 0.5]).unwrap().probs(), &[0.25, 0.25, 0.5]);
        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(CategoricalError::DegenerateVector { .. })
        ));
        assert!(matches!(normalize(&[]), Err(CategoricalError::Empty)));
        assert!(matches!(
            normalize(&[-0.1, 1.0]),
            Err(CategoricalError::InvalidEntry { .. })
        ));
    }

    #[test]
    fn construction_rejects_unnormalized() {
        assert!(matches!(
            Categorical::new(vec![0.5, 0.6]),
            Err(CategoricalError::NotNormalized { .. })
        ));
        assert!(Categorical::new(vec![0.5, 0.5 + 1e-10]).is_ok());
    }

    #[test]
    fn residual_examples() {
        let r = cat(&[1.0, 0.0]).residual(&cat(&[0.5, 0.5])).unwrap();
        assert_eq!(r.probs(), &[1.0, 0.0]);
        let r = cat(&[0.6, 0.3, 0.1]).residual(&cat(&[0.2, 0.5, 0.3])).unwrap();
        assert!((r.probs()[0] - 1.0).abs() < 1e-15);
        assert_eq!(&r.probs()[1..], &[0.0, 0.0]);
        assert!(matches!(
            cat(&[0.6, 0.4]).residual(&cat(&[0.6, 0.4])),
            Err(CategoricalError::DegenerateVector { .. })
        ));
        assert!(matches!(
            cat(&[1.0]).residual(&cat(&[0.5, 0.5])),
            Err(CategoricalError::VocabMismatch { .. })
        ));
    }

    #[test]
    fn tv_examples() {
        assert_eq!(cat(&[1.0, 0.0]).tv_distance(&cat(&[0.5, 0.5])).unwrap(), 0.5);
        let p = cat(&[0.3, 0.7]);
        assert_eq!(p.tv_distance(&p).unwrap(), 0.0);
        assert_eq!(cat(&[1.0, 0.0]).tv_distance(&cat(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn point_masses_sample_deterministically() {
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(cat(&[1.0, 0.0]).sample(&mut rng), TokenId(0));
            assert_eq!(cat(&[0.0, 1.0]).sample(&mut rng), TokenId(1));
            assert_eq!(
                cat(&[1.0, 0.0, 0.0]).sample_without_replacement(1, &mut rng).unwrap(),
                vec![TokenId(0)]
            );
        }
    }

    #[test]
    fn fair_coin_within_three_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let d = cat(&[0.5, 0.5]);
        let ones = (0..n).filter(|_| d.sample(&mut rng) == TokenId(1)).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((ones - n as f64 * 0.5).abs() < 3.0 * sigma, "ones = {ones}");
    }

    #[test]
    fn without_replacement_insufficient_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            cat(&[0.5, 0.5, 0.0]).sample_without_replacement(3, &mut rng),
            Err(CategoricalError::InsufficientSupport {
                requested: 3,
                support: 2
            })
        );
    }

    #[test]
    fn uniform_over_examples() {
        let none = BTreeSet::new();
        assert_eq!(uniform_over(&none, 4).unwrap().probs(), &[0.25; 4]);
        let ex: BTreeSet<_> = [TokenId(0)].into();
        assert_eq!(uniform_over(&ex, 2).unwrap().probs(), &[0.0, 1.0]);
        let all: BTreeSet<_> = [TokenId(0), TokenId(1), TokenId(2)].into();
        assert_eq!(uniform_over(&all, 3), Err(CategoricalError::EmptySupport));
    }

    #[test]
    fn json_is_bare_array() {
        let c = cat(&[0.25, 0.75]);
        assert_eq!(serde_json::to_string(&c).unwrap(), "[0.25,0.75]");
        let back: Categorical = serde_json::from_str("[0.25,0.75]").unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<Categorical>("[0.3,0.3]").is_err());
    }

    fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], 1..=max_len)
            .prop_filter("needs mass", |v| v.iter().sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn residual_support_never_grows(
            (r, d) in (1usize..=8).prop_flat_map(|n| (
                prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], n),
                prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], n),
            ))
        ) {
            prop_assume!(r.iter().sum::<f64>() > 1e-6 && d.iter().sum::<f64>() > 1e-6);
            let r = normalize(&r).unwrap();
            let d = normalize(&d).unwrap();
            if let Ok(res) = r.residual(&d) {
                for (ri, xi) in r.probs().iter().zip(res.probs()) {
                    if *ri == 0.0 {
                        prop_assert_eq!(*xi, 0.0);
                    }
                }
            }
        }

        #[test]
        fn tv_symmetric_bounded(
            (a, b) in (1usize..=6).prop_flat_map(|n| (
                prop::collection::vec(0.001..1.0f64, n),
                prop::collection::vec(0.001..1.0f64, n),
            ))
        ) {
            let a = normalize(&a).unwrap();
            let b = normalize(&b).unwrap();
            let ab = a.tv_distance(&b).unwrap();
            prop_assert!((ab - b.tv_distance(&a).unwrap()).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(a.tv_distance(&a).unwrap(), 0.0);
        }

        #[test]
        fn normalize_is_scale_invariant(v in weights(8), k in 1e-3..1e3f64) {
            let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
            let a = normalize(&v).unwrap();
            let b = normalize(&scaled).unwrap();
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
