//! Logged banners and the scoring models evaluated against them.

use std::collections::{hash_map::Entry, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pl::{PlError, ScoredCandidateSet, MAX_BANNER_SIZE};

/// Smallest accepted `logging_score / total_candidate_score`.
///
/// Keeps every Plackett-Luce factor above this bound so products of at most
/// [`MAX_BANNER_SIZE`] of them stay far from underflow.
pub const MIN_SCORE_SHARE: f64 = 1e-9;

/// Relative slack on `total_candidate_score >= Σ logging scores`.
const TOTAL_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayedProduct {
    pub product_id: String,
    pub logging_score: f64,
}

impl DisplayedProduct {
    pub fn new(product_id: impl Into<String>, logging_score: f64) -> Self {
        Self { product_id: product_id.into(), logging_score }
    }
}

/// One logged impression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BannerRecord {
    pub banner_id: String,
    /// Products in display order, rank 1 first.
    pub displayed: Vec<DisplayedProduct>,
    /// Logging-score mass of the whole candidate set the banner was drawn from.
    pub total_candidate_score: f64,
    /// 1-based rank of the single click, if any.
    pub clicked_rank: Option<usize>,
    /// The displayed order was a uniform shuffle rather than the policy's order.
    pub shuffled: bool,
}

/// Why a record cannot be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordDefect {
    #[error("malformed line")]
    Malformed,
    #[error("empty banner")]
    EmptyBanner,
    #[error("banner too large")]
    BannerTooLarge,
    #[error("duplicate product")]
    DuplicateProduct,
    #[error("non-positive score")]
    NonPositiveScore,
    #[error("score share below range")]
    ScoreShareOutOfRange,
    #[error("total below displayed sum")]
    TotalBelowDisplayed,
    #[error("clicked rank out of range")]
    ClickedRankOutOfRange,
    #[error("multiple clicks")]
    MultipleClicks,
}

impl BannerRecord {
    pub fn len(&self) -> usize {
        self.displayed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.displayed.is_empty()
    }

    /// 0-based index of the clicked product.
    pub fn clicked_index(&self) -> Option<usize> {
        self.clicked_rank.map(|r| r - 1)
    }

    pub fn validate(&self) -> Result<(), RecordDefect> {
        let n = self.displayed.len();
        if n == 0 {
            return Err(RecordDefect::EmptyBanner);
        }
        if n > MAX_BANNER_SIZE {
            return Err(RecordDefect::BannerTooLarge);
        }
        for (i, p) in self.displayed.iter().enumerate() {
            if self.displayed[..i].iter().any(|q| q.product_id == p.product_id) {
                return Err(RecordDefect::DuplicateProduct);
            }
        }
        if self
            .displayed
            .iter()
            .map(|p| p.logging_score)
            .chain([self.total_candidate_score])
            .any(|s| !(s.is_finite() && s > 0.0))
        {
            return Err(RecordDefect::NonPositiveScore);
        }
        let listed: f64 = self.displayed.iter().map(|p| p.logging_score).sum();
        if self.total_candidate_score < listed * (1.0 - TOTAL_SLACK) {
            return Err(RecordDefect::TotalBelowDisplayed);
        }
        if self.displayed.iter().any(|p| p.logging_score < MIN_SCORE_SHARE * self.total_candidate_score) {
            return Err(RecordDefect::ScoreShareOutOfRange);
        }
        if let Some(rank) = self.clicked_rank {
            if rank == 0 || rank > n {
                return Err(RecordDefect::ClickedRankOutOfRange);
            }
        }
        Ok(())
    }

    /// Displayed logging scores with the candidate mass, as seen by the policy.
    pub fn candidate_set(&self) -> Result<ScoredCandidateSet, PlError> {
        ScoredCandidateSet::with_total(
            self.displayed.iter().map(|p| p.logging_score).collect(),
            self.total_candidate_score,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("product id {0:?} is empty or contains whitespace")]
    InvalidProductId(String),
    #[error("product {0:?} is scored twice")]
    DuplicateProduct(String),
    #[error("score for product {product:?} is not finite: {score}")]
    NonFiniteScore { product: String, score: f64 },
    #[error("model name {0:?} is empty or spans several lines")]
    InvalidName(String),
}

/// Scores of the model under evaluation, keyed by product id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    name: String,
    scores: HashMap<String, f64>,
}

impl ScoringModel {
    pub fn new<I, S>(name: impl Into<String>, scores: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let name = name.into();
        if name.trim().is_empty() || name.contains(['\n', '\r']) {
            return Err(ModelError::InvalidName(name));
        }
        let mut map = HashMap::new();
        for (id, score) in scores {
            let id = id.into();
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(ModelError::InvalidProductId(id));
            }
            if !score.is_finite() {
                return Err(ModelError::NonFiniteScore { product: id, score });
            }
            match map.entry(id) {
                Entry::Occupied(e) => return Err(ModelError::DuplicateProduct(e.key().clone())),
                Entry::Vacant(e) => {
                    e.insert(score);
                }
            }
        }
        Ok(Self { name, scores: map })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn score(&self, product_id: &str) -> Option<f64> {
        self.scores.get(product_id).copied()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Entries sorted by product id.
    pub fn sorted_entries(&self) -> Vec<(&str, f64)> {
        let mut entries: Vec<(&str, f64)> = self.scores.iter().map(|(k, &v)| (k.as_str(), v)).collect();
        entries.sort_unstable_by(|a, b| a.0.cmp(b.0));
        entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> BannerRecord {
        BannerRecord {
            banner_id: "b1".into(),
            displayed: vec![DisplayedProduct::new("a", 1.0), DisplayedProduct::new("b", 2.0)],
            total_candidate_score: 10.0,
            clicked_rank: Some(2),
            shuffled: false,
        }
    }

    #[test]
    fn valid_record() {
        assert_eq!(record().validate(), Ok(()));
        assert_eq!(record().clicked_index(), Some(1));
    }

    #[test]
    fn defects() {
        let mut r = record();
        r.displayed[1].product_id = "a".into();
        assert_eq!(r.validate(), Err(RecordDefect::DuplicateProduct));

        let mut r = record();
        r.displayed[0].logging_score = 0.0;
        assert_eq!(r.validate(), Err(RecordDefect::NonPositiveScore));

        let mut r = record();
        r.total_candidate_score = 2.5;
        assert_eq!(r.validate(), Err(RecordDefect::TotalBelowDisplayed));

        let mut r = record();
        r.clicked_rank = Some(3);
        assert_eq!(r.validate(), Err(RecordDefect::ClickedRankOutOfRange));
        r.clicked_rank = Some(0);
        assert_eq!(r.validate(), Err(RecordDefect::ClickedRankOutOfRange));

        let mut r = record();
        r.displayed = (0..17).map(|i| DisplayedProduct::new(format!("p{i}"), 1.0)).collect();
        r.total_candidate_score = 20.0;
        r.clicked_rank = None;
        assert_eq!(r.validate(), Err(RecordDefect::BannerTooLarge));

        let mut r = record();
        r.displayed.clear();
        assert_eq!(r.validate(), Err(RecordDefect::EmptyBanner));

        let mut r = record();
        r.total_candidate_score = 1e10;
        assert_eq!(r.validate(), Err(RecordDefect::ScoreShareOutOfRange));
    }

    #[test]
    fn total_equal_to_displayed_sum_is_valid() {
        let mut r = record();
        r.displayed =
            vec![DisplayedProduct::new("a", 0.1), DisplayedProduct::new("b", 0.2), DisplayedProduct::new("c", 0.7)];
        // 0.1 + 0.2 + 0.7 rounds differently depending on summation order.
        r.total_candidate_score = 0.7 + 0.2 + 0.1;
        assert_eq!(r.validate(), Ok(()));
    }

    #[test]
    fn model_construction() {
        let m = ScoringModel::new("m", [("a", 1.0), ("b", -2.0)]).unwrap();
        assert_eq!(m.score("b"), Some(-2.0));
        assert_eq!(m.score("c"), None);
        assert_eq!(m.sorted_entries(), vec![("a", 1.0), ("b", -2.0)]);
        assert!(matches!(ScoringModel::new("m", [("a", 1.0), ("a", 2.0)]), Err(ModelError::DuplicateProduct(_))));
        assert!(matches!(ScoringModel::new("m", [("a b", 1.0)]), Err(ModelError::InvalidProductId(_))));
        assert!(matches!(ScoringModel::new("m", [("a", f64::NAN)]), Err(ModelError::NonFiniteScore { .. })));
        assert!(matches!(ScoringModel::new(" ", [("a", 1.0)]), Err(ModelError::InvalidName(_))));
    }
}
