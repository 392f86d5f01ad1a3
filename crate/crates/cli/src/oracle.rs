//! `oracle`: randomized self-check of the placement dynamic program against
//! explicit enumeration of orderings.

use anyhow::bail;
use rand::seq::index;
use rand::Rng;
use rankbias::pl::{self, PlacementModel, ScoredCandidateSet, SubsetMask, MAX_ORACLE_SIZE};
use rankbias::rng::{self, Purpose};
use rayon::prelude::*;
use serde::Serialize;

pub const TOLERANCE: f64 = 1e-10;

/// Spread between the smallest and largest score of an adversarial instance.
pub const ADVERSARIAL_RATIO: f64 = 1e6;

/// Most unlisted candidates added around a displayed set.
const MAX_EXTRA_CANDIDATES: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Deviations {
    /// DP rank marginals against brute-force marginals.
    pub rank: f64,
    /// Rows (over products) and columns (over ranks) of the marginal table
    /// summing to one.
    pub normalization: f64,
    /// `P(D = displayed)` against the summed probability of its orderings.
    pub evidence: f64,
    /// `Σ_{|S| = k} P(D_k = S) = 1` when every candidate is displayed.
    pub prefix_partition: f64,
}

impl Deviations {
    fn max(self, other: Self) -> Self {
        Self {
            rank: self.rank.max(other.rank),
            normalization: self.normalization.max(other.normalization),
            evidence: self.evidence.max(other.evidence),
            prefix_partition: self.prefix_partition.max(other.prefix_partition),
        }
    }

    pub fn worst(&self) -> f64 {
        self.rank.max(self.normalization).max(self.evidence).max(self.prefix_partition)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub max_n: usize,
    pub trials: usize,
    pub seed: u64,
    pub instances: usize,
    /// Log-uniform scores in `[1e-3, 1e3]`.
    pub random: Deviations,
    /// Scores at both ends of a `1e6` range within one banner.
    pub adversarial: Deviations,
    pub worst_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn instance(n: usize, trial: usize, seed: u64) -> (ScoredCandidateSet, Vec<usize>, bool) {
    let mut rng = rng::derived(seed, Purpose::Oracle, (n as u64) << 32 | trial as u64);
    let adversarial = trial % 2 == 1;
    let m = n + rng.random_range(0..=MAX_EXTRA_CANDIDATES);
    let (low, high) = (1e-3, 1e-3 * ADVERSARIAL_RATIO);
    let mut scores: Vec<f64> = (0..m)
        .map(|_| {
            if adversarial {
                if rng.random::<bool>() {
                    high
                } else {
                    low
                }
            } else {
                10f64.powf(rng.random_range(-3.0..=3.0))
            }
        })
        .collect();
    if adversarial && n >= 2 {
        scores[0] = low;
        scores[1] = high;
    }
    // Sampled indices come in random order, so the extremes land anywhere.
    let mut displayed = index::sample(&mut rng, m, n).into_vec();
    if adversarial && n >= 2 && !displayed.contains(&0) {
        displayed[0] = 0;
    }
    if adversarial && n >= 2 && !displayed.contains(&1) {
        let slot = displayed.iter().position(|&p| p != 0).expect("n >= 2");
        displayed[slot] = 1;
    }
    let candidates = ScoredCandidateSet::new(scores).expect("positive scores");
    (candidates, displayed, adversarial)
}

/// Summed probability of every draw sequence of the not yet `used` products,
/// enumerated depth first. Each denominator is summed afresh rather than
/// obtained by subtraction.
fn sequence_mass(scores: &[f64], unlisted: f64, used: &mut [bool], prefix: f64) -> f64 {
    let left: f64 = unlisted + scores.iter().zip(used.iter()).filter(|(_, &u)| !u).map(|(s, _)| s).sum::<f64>();
    let mut total = 0.0;
    let mut leaf = true;
    for p in 0..scores.len() {
        if !used[p] {
            leaf = false;
            used[p] = true;
            total += sequence_mass(scores, unlisted, used, prefix * scores[p] / left);
            used[p] = false;
        }
    }
    if leaf {
        prefix
    } else {
        total
    }
}

fn check(candidates: &ScoredCandidateSet, displayed: &[usize]) -> anyhow::Result<Deviations> {
    let n = displayed.len();
    let model = PlacementModel::new(candidates, displayed)?;
    let brute = pl::brute_force_all_ranks(candidates, displayed)?;
    let mut dev = Deviations::default();

    let mut column_sums = vec![0.0; n];
    for (r, expected) in brute.iter().enumerate() {
        let dp = model.rank_distribution(r + 1)?;
        for (p, (a, b)) in dp.probs().iter().zip(expected.probs()).enumerate() {
            dev.rank = dev.rank.max((a - b).abs());
            column_sums[p] += a;
        }
        dev.normalization = dev.normalization.max((dp.probs().iter().sum::<f64>() - 1.0).abs());
    }
    for s in column_sums {
        dev.normalization = dev.normalization.max((s - 1.0).abs());
    }

    let own: Vec<f64> = displayed.iter().map(|&p| candidates.scores()[p]).collect();
    let outside = candidates.unlisted_mass()
        + (0..candidates.len()).filter(|i| !displayed.contains(i)).map(|i| candidates.scores()[i]).sum::<f64>();
    let evidence = sequence_mass(&own, outside, &mut vec![false; n], 1.0);
    dev.evidence = (model.displayed_probability() - evidence).abs();

    let full = PlacementModel::new(&ScoredCandidateSet::new(own)?, &(0..n).collect::<Vec<_>>())?;
    let mut by_size = vec![0.0; n + 1];
    for bits in 0..1u32 << n {
        let subset = SubsetMask::from_bits(bits, n).expect("bits within n");
        by_size[subset.len()] += full.prefix_probability(subset);
    }
    for total in by_size {
        dev.prefix_partition = dev.prefix_partition.max((total - 1.0).abs());
    }
    Ok(dev)
}

/// Runs `trials` instances for every banner size `1..=max_n`. Odd trials use
/// adversarial scores.
pub fn run(max_n: usize, trials: usize, seed: u64) -> anyhow::Result<OracleReport> {
    if max_n == 0 || max_n > MAX_ORACLE_SIZE {
        bail!("--max-n must lie in 1..={MAX_ORACLE_SIZE}, got {max_n}");
    }
    let jobs: Vec<(usize, usize)> = (1..=max_n).flat_map(|n| (0..trials).map(move |t| (n, t))).collect();
    let results = jobs
        .par_iter()
        .map(|&(n, t)| {
            let (candidates, displayed, adversarial) = instance(n, t, seed);
            check(&candidates, &displayed).map(|d| (adversarial, d))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let (mut random, mut adversarial) = (Deviations::default(), Deviations::default());
    for (is_adversarial, d) in results {
        if is_adversarial {
            adversarial = adversarial.max(d);
        } else {
            random = random.max(d);
        }
    }
    let worst_deviation = random.worst().max(adversarial.worst());
    Ok(OracleReport {
        max_n,
        trials,
        seed,
        instances: jobs.len(),
        random,
        adversarial,
        worst_deviation,
        tolerance: TOLERANCE,
        passed: worst_deviation <= TOLERANCE,
    })
}
