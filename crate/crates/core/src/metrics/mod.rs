//! Pairwise disagreement (PD) and counterfactual disagreement (CD).
//!
//! Both metrics draw one clicked product `P₊` and one negative `P₋` per banner
//! and report how often the evaluated model scores `P₊` strictly below `P₋`,
//! conditional on the draw not being rejected. They differ only in how `P₋`
//! is chosen:
//!
//! - PD: uniformly among the non-clicked products of the banner.
//! - CD: the product found at the clicked rank in an independent resample of
//!   the ordering from the logging policy, given the displayed set. The draw
//!   comes from [`crate::pl::conditional_rank_probs`].
//!
//! `cd-exact` replaces CD's single draw by its expectation under the rank
//! distribution; the dataset-level value is then a ratio of summed numerators
//! to summed acceptance masses.
//!
//! Values are disagreements: lower is better, 0.5 for an uninformative model.
//! Model-score ties are exact `==` comparisons, so every metric is invariant
//! under strictly increasing transforms of the model scores.

mod record;

pub use record::{BannerRecord, DisplayedProduct, ModelError, RecordDefect, ScoringModel, MIN_SCORE_SHARE};

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pl::{self, PlError, RankDistribution};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Pairwise disagreement, uniform negative.
    Pd,
    /// Counterfactual disagreement, Monte-Carlo negative.
    Cd,
    /// Counterfactual disagreement, negative marginalized exactly.
    CdExact,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Pd, MetricKind::Cd, MetricKind::CdExact];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Pd => "pd",
            MetricKind::Cd => "cd",
            MetricKind::CdExact => "cd-exact",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pd" => Ok(MetricKind::Pd),
            "cd" => Ok(MetricKind::Cd),
            "cd-exact" | "cd_exact" => Ok(MetricKind::CdExact),
            other => Err(format!("unknown metric {other:?}, expected pd, cd or cd-exact")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rejection {
    /// No click, or no non-clicked product to compare with.
    NoPair,
    /// The resampled negative is the clicked product itself.
    SameProduct,
    /// The model scores both products equally.
    TiedScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleOutcome {
    /// `disagree` is true when the model scores the clicked product strictly
    /// below the negative.
    Accepted {
        disagree: bool,
    },
    Rejected(Rejection),
}

impl SampleOutcome {
    fn compare(positive: f64, negative: f64) -> Self {
        if positive == negative {
            SampleOutcome::Rejected(Rejection::TiedScore)
        } else {
            SampleOutcome::Accepted { disagree: positive < negative }
        }
    }
}

/// Expected outcome of one CD draw: `numerator / acceptance_mass` is the
/// disagreement conditional on acceptance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contribution {
    pub numerator: f64,
    pub acceptance_mass: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub accepted: u64,
    pub rejected_no_pair: u64,
    pub rejected_same_product: u64,
    pub rejected_tied_score: u64,
}

impl SampleCounts {
    fn record(&mut self, outcome: SampleOutcome) {
        match outcome {
            SampleOutcome::Accepted { .. } => self.accepted += 1,
            SampleOutcome::Rejected(Rejection::NoPair) => self.rejected_no_pair += 1,
            SampleOutcome::Rejected(Rejection::SameProduct) => self.rejected_same_product += 1,
            SampleOutcome::Rejected(Rejection::TiedScore) => self.rejected_tied_score += 1,
        }
    }

    pub fn rejected(&self) -> u64 {
        self.rejected_no_pair + self.rejected_same_product + self.rejected_tied_score
    }
}

impl fmt::Display for SampleCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accepted={} rejected_no_pair={} rejected_same_product={} rejected_tied_score={}",
            self.accepted, self.rejected_no_pair, self.rejected_same_product, self.rejected_tied_score
        )
    }
}

/// Dataset-level value of one metric for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub kind: MetricKind,
    pub value: f64,
    pub std_error: f64,
    pub accepted: u64,
    pub rejected_no_pair: u64,
    pub rejected_same_product: u64,
    pub rejected_tied_score: u64,
    /// Banners evaluated.
    pub banners: u64,
    /// Draws per banner (1 for `cd-exact`).
    pub resamples: u32,
}

impl MetricEstimate {
    pub fn counts(&self) -> SampleCounts {
        SampleCounts {
            accepted: self.accepted,
            rejected_no_pair: self.rejected_no_pair,
            rejected_same_product: self.rejected_same_product,
            rejected_tied_score: self.rejected_tied_score,
        }
    }

    /// Share of samples that had a (clicked, other) pair but were rejected.
    pub fn rejection_rate(&self) -> f64 {
        let rejected = self.rejected_same_product + self.rejected_tied_score;
        let with_pair = self.accepted + rejected;
        if with_pair == 0 {
            0.0
        } else {
            rejected as f64 / with_pair as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("model {model:?} has no score for product {product:?}")]
    MissingScore { model: String, product: String },
    #[error("banner {banner_id:?} has no click")]
    NoClick { banner_id: String },
    #[error(
        "rank distribution (rank {got_rank}, {got_len} products) does not match \
         banner (clicked rank {want_rank}, {want_len} products)"
    )]
    RankDistributionMismatch { got_rank: usize, got_len: usize, want_rank: usize, want_len: usize },
    #[error("banner {banner_id:?}: {source}")]
    Policy { banner_id: String, source: PlError },
    #[error("resamples per banner must be positive")]
    ZeroResamples,
    #[error("metric undefined: no accepted samples ({0})")]
    Undefined(SampleCounts),
}

fn model_scores(record: &BannerRecord, model: &ScoringModel) -> Result<Vec<f64>, MetricError> {
    record
        .displayed
        .iter()
        .map(|p| {
            model.score(&p.product_id).ok_or_else(|| MetricError::MissingScore {
                model: model.name().to_owned(),
                product: p.product_id.clone(),
            })
        })
        .collect()
}

fn check_rank_distribution(record: &BannerRecord, clicked: usize, dist: &RankDistribution) -> Result<(), MetricError> {
    if dist.rank() != clicked + 1 || dist.len() != record.len() {
        return Err(MetricError::RankDistributionMismatch {
            got_rank: dist.rank(),
            got_len: dist.len(),
            want_rank: clicked + 1,
            want_len: record.len(),
        });
    }
    Ok(())
}

/// One draw of pairwise disagreement.
pub fn pd_sample<R: Rng + ?Sized>(
    record: &BannerRecord,
    model: &ScoringModel,
    rng: &mut R,
) -> Result<SampleOutcome, MetricError> {
    let scores = model_scores(record, model)?;
    let n = scores.len();
    let Some(clicked) = record.clicked_index().filter(|_| n >= 2) else {
        return Ok(SampleOutcome::Rejected(Rejection::NoPair));
    };
    let mut negative = rng.random_range(0..n - 1);
    if negative >= clicked {
        negative += 1;
    }
    Ok(SampleOutcome::compare(scores[clicked], scores[negative]))
}

/// One draw of counterfactual disagreement; `rank_dist` is the conditional
/// distribution of the product at the clicked rank.
pub fn cd_sample<R: Rng + ?Sized>(
    record: &BannerRecord,
    model: &ScoringModel,
    rank_dist: &RankDistribution,
    rng: &mut R,
) -> Result<SampleOutcome, MetricError> {
    let scores = model_scores(record, model)?;
    let Some(clicked) = record.clicked_index().filter(|_| scores.len() >= 2) else {
        return Ok(SampleOutcome::Rejected(Rejection::NoPair));
    };
    check_rank_distribution(record, clicked, rank_dist)?;
    let negative = pl::sample_rank_product(rank_dist, rng);
    if negative == clicked {
        return Ok(SampleOutcome::Rejected(Rejection::SameProduct));
    }
    Ok(SampleOutcome::compare(scores[clicked], scores[negative]))
}

/// Expectation of [`cd_sample`] over the negative draw.
pub fn cd_exact_contribution(
    record: &BannerRecord,
    model: &ScoringModel,
    rank_dist: &RankDistribution,
) -> Result<Contribution, MetricError> {
    let scores = model_scores(record, model)?;
    let clicked = record.clicked_index().ok_or_else(|| MetricError::NoClick { banner_id: record.banner_id.clone() })?;
    check_rank_distribution(record, clicked, rank_dist)?;
    let positive = scores[clicked];
    let mut contribution = Contribution { numerator: 0.0, acceptance_mass: 0.0 };
    // The clicked product itself is skipped by the tie test.
    for (&score, &prob) in scores.iter().zip(rank_dist.probs()) {
        if score != positive {
            contribution.acceptance_mass += prob;
            if positive < score {
                contribution.numerator += prob;
            }
        }
    }
    Ok(contribution)
}

/// Conditional distribution at the clicked rank, for a banner with a click
/// and at least two products.
pub fn clicked_rank_distribution(record: &BannerRecord) -> Result<Option<RankDistribution>, MetricError> {
    let Some(rank) = record.clicked_rank.filter(|_| record.len() >= 2) else {
        return Ok(None);
    };
    let policy_error = |source| MetricError::Policy { banner_id: record.banner_id.clone(), source };
    let candidates = record.candidate_set().map_err(policy_error)?;
    let displayed: Vec<usize> = (0..record.len()).collect();
    pl::conditional_rank_probs(&candidates, &displayed, rank).map(Some).map_err(policy_error)
}

/// A log prepared for repeated evaluation. Rank distributions depend only on
/// the logging policy, so they are computed once (lazily, in parallel) and
/// shared by every model and CD variant.
pub struct EvaluationSet<'a> {
    records: &'a [BannerRecord],
    rank_dists: OnceLock<Result<Vec<Option<RankDistribution>>, MetricError>>,
}

impl<'a> EvaluationSet<'a> {
    pub fn new(records: &'a [BannerRecord]) -> Self {
        Self { records, rank_dists: OnceLock::new() }
    }

    pub fn records(&self) -> &'a [BannerRecord] {
        self.records
    }

    pub fn rank_distributions(&self) -> Result<&[Option<RankDistribution>], MetricError> {
        self.rank_dists
            .get_or_init(|| self.records.par_iter().map(clicked_rank_distribution).collect())
            .as_deref()
            .map_err(Clone::clone)
    }

    /// Estimates `kind` for `model`. Banner `b` draws from a stream keyed by
    /// `(seed, metric family, banner id)`, so results do not depend on which
    /// other banners or models are evaluated alongside.
    pub fn estimate(
        &self,
        model: &ScoringModel,
        kind: MetricKind,
        resamples: u32,
        seed: u64,
    ) -> Result<MetricEstimate, MetricError> {
        if resamples == 0 {
            return Err(MetricError::ZeroResamples);
        }
        let mut counts = SampleCounts::default();
        // Per-banner (disagreements, acceptances), kept for clustered errors.
        let mut clusters: Vec<(f64, f64)> = Vec::new();

        match kind {
            MetricKind::Pd | MetricKind::Cd => {
                let (purpose, dists) = match kind {
                    MetricKind::Pd => (Purpose::PairwiseMetric, None),
                    _ => (Purpose::CounterfactualMetric, Some(self.rank_distributions()?)),
                };
                for (i, record) in self.records.iter().enumerate() {
                    let mut rng = rng::derived(seed, purpose, rng::label_key(&record.banner_id));
                    let (mut disagree, mut accepted) = (0.0, 0.0);
                    for _ in 0..resamples {
                        let outcome = match dists.and_then(|d| d[i].as_ref()) {
                            Some(dist) => cd_sample(record, model, dist, &mut rng)?,
                            None if kind == MetricKind::Cd => {
                                model_scores(record, model)?;
                                SampleOutcome::Rejected(Rejection::NoPair)
                            }
                            None => pd_sample(record, model, &mut rng)?,
                        };
                        counts.record(outcome);
                        if let SampleOutcome::Accepted { disagree: d } = outcome {
                            accepted += 1.0;
                            disagree += f64::from(u8::from(d));
                        }
                    }
                    if accepted > 0.0 {
                        clusters.push((disagree, accepted));
                    }
                }
            }
            MetricKind::CdExact => {
                let dists = self.rank_distributions()?;
                for (record, dist) in self.records.iter().zip(dists) {
                    let Some(dist) = dist else {
                        model_scores(record, model)?;
                        counts.rejected_no_pair += 1;
                        continue;
                    };
                    let c = cd_exact_contribution(record, model, dist)?;
                    if c.acceptance_mass > 0.0 {
                        counts.accepted += 1;
                        clusters.push((c.numerator, c.acceptance_mass));
                    } else if dist.probs()[record.clicked_index().unwrap_or(0)] >= 1.0 {
                        counts.rejected_same_product += 1;
                    } else {
                        counts.rejected_tied_score += 1;
                    }
                }
            }
        }

        if counts.accepted == 0 {
            return Err(MetricError::Undefined(counts));
        }
        let banners = self.records.len() as u64;
        let numerator: f64 = clusters.iter().map(|c| c.0).sum();
        let mass: f64 = clusters.iter().map(|c| c.1).sum();
        let value = numerator / mass;
        let std_error = if kind != MetricKind::CdExact && resamples == 1 {
            (value * (1.0 - value) / counts.accepted as f64).sqrt()
        } else {
            ratio_std_error(&clusters, value, mass, banners)
        };
        Ok(MetricEstimate {
            kind,
            value,
            std_error,
            accepted: counts.accepted,
            rejected_no_pair: counts.rejected_no_pair,
            rejected_same_product: counts.rejected_same_product,
            rejected_tied_score: counts.rejected_tied_score,
            banners,
            resamples: if kind == MetricKind::CdExact { 1 } else { resamples },
        })
    }
}

/// Delta-method standard error of `Σy / Σx` with banners as clusters. Banners
/// absent from `clusters` have `x = y = 0` and only count towards `banners`.
fn ratio_std_error(clusters: &[(f64, f64)], ratio: f64, mass: f64, banners: u64) -> f64 {
    let residual: f64 = clusters.iter().map(|&(y, x)| (y - ratio * x).powi(2)).sum();
    let correction = if banners > 1 { banners as f64 / (banners - 1) as f64 } else { 1.0 };
    (residual * correction).sqrt() / mass
}

/// Estimates `kind` for `model` over `records`. See [`EvaluationSet::estimate`].
pub fn estimate_metric(
    records: &[BannerRecord],
    model: &ScoringModel,
    kind: MetricKind,
    resamples: u32,
    seed: u64,
) -> Result<MetricEstimate, MetricError> {
    EvaluationSet::new(records).estimate(model, kind, resamples, seed)
}
