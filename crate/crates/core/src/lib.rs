//! Pairwise ranking metrics that stay meaningful on logs collected without
//! uniform shuffling.
//!
//! The logging policy is assumed to be a Plackett-Luce sampler: the displayed
//! set and its order are drawn jointly, product by product, proportionally to
//! logging scores. Two metrics are provided:
//!
//! - **pairwise disagreement** (PD): the clicked product is compared with a
//!   uniformly drawn non-clicked product of the same banner. Unbiased only on
//!   uniformly shuffled traffic.
//! - **counterfactual disagreement** (CD): the clicked product at rank `r` is
//!   compared with the product found at rank `r` in an independent resample
//!   of the ordering from the logging policy, conditioned on the displayed
//!   set. A pair `(a, b)` at rank `r` is then observed more often than
//!   `(b, a)` exactly when `a` has the higher click-through rate at `r`.
//!
//! Resampling a full ordering from the conditional policy has no known
//! efficient algorithm, but CD only needs the product at one rank. [`pl`]
//! computes that marginal exactly with an `O(n² · 2ⁿ)` subset dynamic program.
//!
//! Modules:
//! - [`pl`]: Plackett-Luce sampling, banner likelihoods, conditional rank
//!   distributions and brute-force oracles.
//! - [`metrics`]: banner records, scoring models and the PD / CD estimators.
//! - [`sim`]: synthetic traffic with a position-based click model and a zoo of
//!   scoring models of graded quality.
//! - [`logio`]: line-delimited log and model file formats with validating
//!   ingestion.
//! - [`stats`]: correlation coefficients and small numeric helpers.

pub mod logio;
pub mod metrics;
pub mod pl;
pub mod rng;
pub mod sim;
pub mod stats;

pub use metrics::{BannerRecord, DisplayedProduct, MetricEstimate, MetricKind, ScoringModel};
pub use pl::{RankDistribution, ScoredCandidateSet};
