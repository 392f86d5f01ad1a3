//! Plackett-Luce logging policy.
//!
//! A banner is built by drawing products one at a time, without replacement,
//! from a candidate set, each remaining candidate being chosen with probability
//! proportional to its logging score. Given only the set of products that
//! ended up displayed, the policy induces a conditional distribution over the
//! orderings of that set. Sampling a whole ordering from it has no known
//! efficient algorithm, but the marginal "which product sits at rank `r`" can
//! be computed exactly with a dynamic program over subsets of the displayed
//! set:
//!
//! 1. `P(D_k = S)`, the probability that the first `|S|` draws are exactly the
//!    products of `S`, is the sum over the last-drawn product `p ∈ S` of
//!    `P(D_{k-1} = S \ p) · score_p / mass_outside(S \ p)`.
//! 2. `P(D_k = S, P_r = q)` for `|S| ≥ r` starts at `|S| = r` with `q` as the
//!    last draw, and grows by appending any product other than `q`.
//! 3. Bayes: `P(P_r = q | D) = P(D_n = D, P_r = q) / P(D_n = D)`.
//!
//! Total work is `O(n² · 2ⁿ)`; banners are capped at [`MAX_BANNER_SIZE`].
//!
//! Denominators are always evaluated as the mass of the candidates *not yet
//! drawn* (unlisted mass plus a sum over the remaining listed scores), never as
//! `total - drawn`, so no cancellation occurs when one score dominates.

use itertools::Itertools;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest banner handled by the subset dynamic program.
pub const MAX_BANNER_SIZE: usize = 16;

/// Largest banner handled by the permutation-enumeration oracle.
pub const MAX_ORACLE_SIZE: usize = 8;

/// Relative slack allowed when checking `total_score >= Σ listed scores`.
const TOTAL_SLACK: f64 = 1e-12;

/// Tolerance on the sum of a [`RankDistribution`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("score of candidate {index} must be finite and strictly positive, got {score}")]
    NonPositiveScore { index: usize, score: f64 },
    #[error("total score {total} is below the sum of listed scores {listed}")]
    TotalBelowListed { total: f64, listed: f64 },
    #[error("cannot draw {requested} products from {available} candidates")]
    NotEnoughCandidates { requested: usize, available: usize },
    #[error("sampling needs the full candidate list, but {unlisted} of score mass is unlisted")]
    IncompleteCandidateSet { unlisted: f64 },
    #[error("product {0} appears more than once")]
    DuplicateProduct(usize),
    #[error("product {index} is not one of the {len} candidates")]
    UnknownProduct { index: usize, len: usize },
    #[error("banner of {0} products exceeds the limit of {MAX_BANNER_SIZE}")]
    BannerTooLarge(usize),
    #[error("enumeration oracle is limited to {MAX_ORACLE_SIZE} products, got {0}")]
    OracleTooLarge(usize),
    #[error("rank {rank} is outside 1..={size}")]
    RankOutOfRange { rank: usize, size: usize },
    #[error("not a permutation of 0..{0}")]
    NotAPermutation(usize),
    #[error("invalid rank distribution: {0}")]
    InvalidDistribution(String),
}

pub type Result<T, E = PlError> = std::result::Result<T, E>;

/// Logging scores of the listed candidates plus the total score of the whole
/// candidate set.
///
/// The total may exceed the listed sum: logs only keep the displayed products
/// and the candidate mass as a single number, which is all the conditional
/// ordering distribution depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidateSet {
    scores: Vec<f64>,
    total_score: f64,
    unlisted: f64,
}

impl ScoredCandidateSet {
    /// A complete candidate set: the total is the sum of `scores`.
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        validate_scores(&scores)?;
        let total_score = scores.iter().sum();
        Ok(Self { scores, total_score, unlisted: 0.0 })
    }

    /// Listed candidates out of a larger set of total mass `total_score`.
    pub fn with_total(scores: Vec<f64>, total_score: f64) -> Result<Self> {
        validate_scores(&scores)?;
        let listed: f64 = scores.iter().sum();
        if !total_score.is_finite() || total_score < listed * (1.0 - TOTAL_SLACK) {
            return Err(PlError::TotalBelowListed { total: total_score, listed });
        }
        let unlisted = (total_score - listed).max(0.0);
        Ok(Self { scores, total_score, unlisted })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn total_score(&self) -> f64 {
        self.total_score
    }

    /// Score mass of candidates that are not listed.
    pub fn unlisted_mass(&self) -> f64 {
        self.unlisted
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn check_products(&self, products: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.scores.len()];
        for &p in products {
            if p >= self.scores.len() {
                return Err(PlError::UnknownProduct { index: p, len: self.scores.len() });
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(PlError::DuplicateProduct(p));
            }
        }
        Ok(())
    }

    /// Mass of every candidate outside `products` (listed or not).
    fn mass_outside(&self, products: &[usize]) -> f64 {
        let mut inside = vec![false; self.scores.len()];
        for &p in products {
            inside[p] = true;
        }
        self.unlisted + self.scores.iter().zip(&inside).filter(|(_, &i)| !i).map(|(s, _)| s).sum::<f64>()
    }
}

fn validate_scores(scores: &[f64]) -> Result<()> {
    if scores.is_empty() {
        return Err(PlError::EmptyCandidates);
    }
    for (index, &score) in scores.iter().enumerate() {
        if !(score.is_finite() && score > 0.0) {
            return Err(PlError::NonPositiveScore { index, score });
        }
    }
    Ok(())
}

/// A permutation of banner positions: `ranks[i]` is the index of the product
/// shown at rank `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Ordering(Vec<usize>);

impl Ordering {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        let n = ranks.len();
        let mut seen = vec![false; n];
        for &p in &ranks {
            if p >= n || std::mem::replace(&mut seen[p], true) {
                return Err(PlError::NotAPermutation(n));
            }
        }
        Ok(Self(ranks))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Product at 1-based `rank`.
    pub fn product_at(&self, rank: usize) -> usize {
        self.0[rank - 1]
    }

    /// 1-based rank of `product`.
    pub fn rank_of(&self, product: usize) -> usize {
        self.0.iter().position(|&p| p == product).expect("product in ordering") + 1
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Subset of at most [`MAX_BANNER_SIZE`] displayed products as a bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SubsetMask(u32);

impl SubsetMask {
    pub const EMPTY: Self = Self(0);

    /// All of `0..n`.
    pub fn full(n: usize) -> Self {
        debug_assert!(n <= MAX_BANNER_SIZE);
        Self(((1u64 << n) - 1) as u32)
    }

    /// Checks that only the low `n` bits are set.
    pub fn from_bits(bits: u32, n: usize) -> Option<Self> {
        (n <= MAX_BANNER_SIZE && bits & !Self::full(n).0 == 0).then_some(Self(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        Self(self.0 | 1 << i)
    }

    pub fn without(self, i: usize) -> Self {
        Self(self.0 & !(1 << i))
    }

    /// Members in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            (bits != 0).then(|| {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                i
            })
        })
    }
}

/// `P(P_r = p | D)` for every displayed product `p` at one rank `r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDistribution {
    rank: usize,
    probs: Vec<f64>,
}

impl RankDistribution {
    pub fn new(rank: usize, mut probs: Vec<f64>) -> Result<Self> {
        if rank == 0 || rank > probs.len() {
            return Err(PlError::RankOutOfRange { rank, size: probs.len() });
        }
        for p in probs.iter_mut() {
            if !(p.is_finite() && *p >= 0.0 && *p <= 1.0 + 1e-12) {
                return Err(PlError::InvalidDistribution(format!("entry {p} outside [0, 1]")));
            }
            *p = p.min(1.0);
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(PlError::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self { rank, probs })
    }

    /// 1-based rank this distribution describes.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Indexed by displayed-product index.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Draws a banner of `n` products from a complete candidate set.
pub fn sample_banner<R: Rng + ?Sized>(candidates: &ScoredCandidateSet, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n > candidates.len() {
        return Err(PlError::NotEnoughCandidates { requested: n, available: candidates.len() });
    }
    if candidates.unlisted > TOTAL_SLACK * candidates.total_score {
        return Err(PlError::IncompleteCandidateSet { unlisted: candidates.unlisted });
    }
    let scores = candidates.scores();
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut banner = Vec::with_capacity(n);
    for _ in 0..n {
        let mass: f64 = remaining.iter().map(|&i| scores[i]).sum();
        let mut target = rng.random::<f64>() * mass;
        // Rounding can leave `target` a hair above the last cumulative bound.
        let mut slot = remaining.len() - 1;
        for (k, &i) in remaining.iter().enumerate() {
            if target < scores[i] {
                slot = k;
                break;
            }
            target -= scores[i];
        }
        banner.push(remaining.remove(slot));
    }
    Ok(banner)
}

/// Log-probability that sequential draws produce exactly `banner`, in order.
pub fn banner_log_prob(candidates: &ScoredCandidateSet, banner: &[usize]) -> Result<f64> {
    candidates.check_products(banner)?;
    let scores = candidates.scores();
    let mut log_prob = 0.0;
    for (i, &p) in banner.iter().enumerate() {
        log_prob += scores[p].ln() - candidates.mass_outside(&banner[..i]).ln();
    }
    Ok(log_prob)
}

/// Subset-DP state for one displayed set: scores, the mass left after each
/// prefix set, and `P(D_|S| = S)` for every subset `S`.
#[derive(Debug, Clone)]
pub struct PlacementModel {
    scores: Vec<f64>,
    /// Candidate mass outside `S`, indexed by mask.
    remaining: Vec<f64>,
    /// `P(D_|S| = S)`, indexed by mask.
    prefix: Vec<f64>,
}

impl PlacementModel {
    /// `displayed` lists candidate indices; products are re-indexed `0..n` in
    /// that order.
    pub fn new(candidates: &ScoredCandidateSet, displayed: &[usize]) -> Result<Self> {
        let n = displayed.len();
        if n == 0 {
            return Err(PlError::EmptyCandidates);
        }
        if n > MAX_BANNER_SIZE {
            return Err(PlError::BannerTooLarge(n));
        }
        candidates.check_products(displayed)?;
        let scores: Vec<f64> = displayed.iter().map(|&p| candidates.scores()[p]).collect();
        let full = SubsetMask::full(n).bits() as usize;

        let mut remaining = vec![0.0; full + 1];
        remaining[full] = candidates.mass_outside(displayed);
        for mask in (0..full).rev() {
            let i = mask.trailing_ones() as usize;
            remaining[mask] = remaining[mask | 1 << i] + scores[i];
        }

        let mut prefix = vec![0.0; full + 1];
        prefix[0] = 1.0;
        for mask in 1..=full {
            prefix[mask] = SubsetMask(mask as u32)
                .iter()
                .map(|p| {
                    let prev = mask & !(1 << p);
                    prefix[prev] * scores[p] / remaining[prev]
                })
                .sum();
        }
        Ok(Self { scores, remaining, prefix })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `P(D_|S| = S)`: the first `|S|` draws are the products of `subset`.
    pub fn prefix_probability(&self, subset: SubsetMask) -> f64 {
        self.prefix[subset.bits() as usize]
    }

    /// `P(D = displayed)`.
    pub fn displayed_probability(&self) -> f64 {
        self.prefix[self.prefix.len() - 1]
    }

    /// `P(P_rank = p | D)` for every displayed product.
    pub fn rank_distribution(&self, rank: usize) -> Result<RankDistribution> {
        let n = self.len();
        if rank == 0 || rank > n {
            return Err(PlError::RankOutOfRange { rank, size: n });
        }
        let full = self.prefix.len() - 1;

        // Joint table `P(D_|S| = S, P_rank = q)`, stored only for |S| >= rank
        // and only for q in S: entry `offsets[S] + position of q within S`.
        let mut offsets = vec![u32::MAX; full + 1];
        let mut len = 0u32;
        for (mask, offset) in offsets.iter_mut().enumerate() {
            let k = mask.count_ones();
            if k as usize >= rank {
                *offset = len;
                len += k;
            }
        }
        let mut joint = vec![0.0; len as usize];

        for mask in 0..=full {
            let set = SubsetMask(mask as u32);
            if set.len() < rank {
                continue;
            }
            let base = offsets[mask] as usize;
            if set.len() == rank {
                for (pos, q) in set.iter().enumerate() {
                    let prev = mask & !(1 << q);
                    joint[base + pos] = self.prefix[prev] * self.scores[q] / self.remaining[prev];
                }
            } else {
                for p in set.iter() {
                    let prev = mask & !(1 << p);
                    let step = self.scores[p] / self.remaining[prev];
                    let prev_base = offsets[prev] as usize;
                    for (prev_pos, q) in SubsetMask(prev as u32).iter().enumerate() {
                        let pos = prev_pos + usize::from(q > p);
                        joint[base + pos] += joint[prev_base + prev_pos] * step;
                    }
                }
            }
        }

        let top = offsets[full] as usize;
        let evidence = self.displayed_probability();
        let probs = joint[top..top + n].iter().map(|j| j / evidence).collect();
        RankDistribution::new(rank, probs)
    }
}

/// `P(P_rank = p | D = displayed)` via the subset dynamic program.
pub fn conditional_rank_probs(
    candidates: &ScoredCandidateSet,
    displayed: &[usize],
    rank: usize,
) -> Result<RankDistribution> {
    if displayed.len() > MAX_BANNER_SIZE {
        return Err(PlError::BannerTooLarge(displayed.len()));
    }
    if rank == 0 || rank > displayed.len() {
        return Err(PlError::RankOutOfRange { rank, size: displayed.len() });
    }
    PlacementModel::new(candidates, displayed)?.rank_distribution(rank)
}

/// Conditional distribution over all orderings of `displayed`, by explicit
/// enumeration of the `n!` orderings. Orderings index into `displayed`.
pub fn brute_force_ordering_distribution(
    candidates: &ScoredCandidateSet,
    displayed: &[usize],
) -> Result<Vec<(Ordering, f64)>> {
    let n = displayed.len();
    if n == 0 {
        return Err(PlError::EmptyCandidates);
    }
    if n > MAX_ORACLE_SIZE {
        return Err(PlError::OracleTooLarge(n));
    }
    candidates.check_products(displayed)?;
    let scores: Vec<f64> = displayed.iter().map(|&p| candidates.scores()[p]).collect();
    let outside = candidates.mass_outside(displayed);

    let mut weighted: Vec<(Ordering, f64)> = (0..n)
        .permutations(n)
        .map(|perm| {
            // Mass left before each draw, accumulated from the back.
            let mut left = outside;
            let mut weight = 1.0;
            for &p in perm.iter().rev() {
                left += scores[p];
                weight *= scores[p] / left;
            }
            (Ordering(perm), weight)
        })
        .collect();
    let norm: f64 = weighted.iter().map(|(_, w)| w).sum();
    for (_, w) in weighted.iter_mut() {
        *w /= norm;
    }
    Ok(weighted)
}

/// Rank marginals of [`brute_force_ordering_distribution`], one per rank.
pub fn brute_force_all_ranks(candidates: &ScoredCandidateSet, displayed: &[usize]) -> Result<Vec<RankDistribution>> {
    let n = displayed.len();
    let mut table = vec![vec![0.0; n]; n];
    for (ordering, w) in brute_force_ordering_distribution(candidates, displayed)? {
        for (r, &p) in ordering.as_slice().iter().enumerate() {
            table[r][p] += w;
        }
    }
    table.into_iter().enumerate().map(|(r, probs)| RankDistribution::new(r + 1, probs)).collect()
}

/// `P(P_rank = p | D = displayed)` by enumerating all orderings.
pub fn brute_force_rank_probs(
    candidates: &ScoredCandidateSet,
    displayed: &[usize],
    rank: usize,
) -> Result<RankDistribution> {
    if displayed.len() > MAX_ORACLE_SIZE {
        return Err(PlError::OracleTooLarge(displayed.len()));
    }
    if rank == 0 || rank > displayed.len() {
        return Err(PlError::RankOutOfRange { rank, size: displayed.len() });
    }
    let mut all = brute_force_all_ranks(candidates, displayed)?;
    Ok(all.swap_remove(rank - 1))
}

/// Categorical draw of a displayed-product index.
pub fn sample_rank_product<R: Rng + ?Sized>(dist: &RankDistribution, rng: &mut R) -> usize {
    WeightedIndex::new(dist.probs()).expect("validated rank distribution has positive mass").sample(rng)
}
