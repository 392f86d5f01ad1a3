//! Synthetic traffic with known ground truth.
//!
//! The world is a catalog of products, each with a click relevance in `[0, 1]`
//! and a *logging bias*: a product-level preference of the logging policy that
//! is unrelated to relevance. For every banner:
//!
//! 1. a pool of candidates is drawn uniformly from the catalog;
//! 2. each candidate gets a log-uniform logging score whose latent position
//!    mixes relevance, logging bias and per-banner noise;
//! 3. the displayed products and their order are drawn with the Plackett-Luce
//!    sampler; a fixed share of banners is then uniformly shuffled;
//! 4. at most one click is drawn from the position-based model: rank `r` is
//!    clicked with probability `examination[r] · relevance[product at r]`,
//!    and nothing is clicked with the remaining probability.
//!
//! The logging bias is what lets a model "chase" the logging policy: scoring
//! products by it correlates with display rank, which plain pairwise
//! disagreement rewards on unshuffled traffic.

use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{BannerRecord, DisplayedProduct, ScoringModel};
use crate::pl::{self, ScoredCandidateSet, MAX_BANNER_SIZE};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(
        "banner size {size} can reach a total click probability of {total:.6} > 1 \
         (examination × relevance too large)"
    )]
    ClickMassExceeded { size: usize, total: f64 },
}

fn config_error(msg: impl Into<String>) -> SimError {
    SimError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeWeight {
    pub size: usize,
    pub weight: f64,
}

/// Logging scores are `min_score · (max_score / min_score)^latent` with
/// `latent = relevance_weight · relevance_unit + bias_weight · logging_bias
/// + (1 − relevance_weight − bias_weight) · noise`, all terms in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoggingSpec {
    pub min_score: f64,
    pub max_score: f64,
    pub relevance_weight: f64,
    pub bias_weight: f64,
}

impl Default for LoggingSpec {
    fn default() -> Self {
        Self { min_score: 1.0, max_score: 1e5, relevance_weight: 0.3, bias_weight: 0.6 }
    }
}

/// Relevance drawn uniformly in `[min, max]` per product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelevanceSpec {
    pub min: f64,
    pub max: f64,
}

impl Default for RelevanceSpec {
    fn default() -> Self {
        Self { min: 0.02, max: 0.3 }
    }
}

/// Examination probability per rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExaminationSpec {
    /// `top / rank^exponent`.
    Power {
        top: f64,
        exponent: f64,
    },
    Flat {
        value: f64,
    },
    /// One value per rank, rank 1 first.
    Explicit {
        values: Vec<f64>,
    },
}

impl Default for ExaminationSpec {
    fn default() -> Self {
        ExaminationSpec::Power { top: 1.0, exponent: 1.5 }
    }
}

impl ExaminationSpec {
    /// Curve over ranks `1..=len`.
    pub fn curve(&self, len: usize) -> Result<Vec<f64>, SimError> {
        let curve: Vec<f64> = match self {
            ExaminationSpec::Power { top, exponent } => (1..=len).map(|r| top / (r as f64).powf(*exponent)).collect(),
            ExaminationSpec::Flat { value } => vec![*value; len],
            ExaminationSpec::Explicit { values } => {
                if values.len() < len {
                    return Err(config_error(format!(
                        "explicit examination curve has {} ranks, banners need {len}",
                        values.len()
                    )));
                }
                values[..len].to_vec()
            }
        };
        if curve.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(config_error("examination probabilities must lie in [0, 1]"));
        }
        Ok(curve)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZooSpec {
    /// Total number of models, oracle and pure noise included.
    pub count: usize,
    /// Noise standard deviation of the noisiest ladder model, in units of the
    /// relevance range.
    pub max_noise: f64,
    /// How many models mix in the logging bias.
    pub bias_chasers: usize,
}

impl Default for ZooSpec {
    fn default() -> Self {
        Self { count: 40, max_noise: 1.0, bias_chasers: 12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub num_banners: usize,
    pub catalog_size: usize,
    /// Candidates drawn from the catalog for each banner.
    pub candidate_pool_size: usize,
    pub banner_sizes: Vec<SizeWeight>,
    pub logging: LoggingSpec,
    pub relevance: RelevanceSpec,
    pub examination: ExaminationSpec,
    /// Exactly `round(shuffle_fraction · num_banners)` banners are shuffled.
    pub shuffle_fraction: f64,
    pub zoo: ZooSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            num_banners: 200_000,
            catalog_size: 1_000,
            candidate_pool_size: 8,
            banner_sizes: vec![SizeWeight { size: 6, weight: 1.0 }],
            logging: LoggingSpec::default(),
            relevance: RelevanceSpec::default(),
            examination: ExaminationSpec::default(),
            shuffle_fraction: 0.05,
            zoo: ZooSpec::default(),
        }
    }
}

impl SimConfig {
    pub fn max_banner_size(&self) -> usize {
        self.banner_sizes.iter().map(|s| s.size).max().unwrap_or(0)
    }

    pub fn shuffled_count(&self) -> usize {
        (self.shuffle_fraction * self.num_banners as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.banner_sizes.is_empty() {
            return Err(config_error("banner_sizes is empty"));
        }
        for s in &self.banner_sizes {
            if s.size == 0 || s.size > MAX_BANNER_SIZE {
                return Err(config_error(format!("banner size {} outside 1..={MAX_BANNER_SIZE}", s.size)));
            }
            if !(s.weight.is_finite() && s.weight >= 0.0) {
                return Err(config_error("banner size weights must be finite and non-negative"));
            }
        }
        if self.banner_sizes.iter().all(|s| s.weight == 0.0) {
            return Err(config_error("banner size weights sum to zero"));
        }
        if self.candidate_pool_size < self.max_banner_size() {
            return Err(config_error("candidate_pool_size is smaller than the largest banner"));
        }
        if self.catalog_size < self.candidate_pool_size {
            return Err(config_error("catalog_size is smaller than candidate_pool_size"));
        }
        let l = &self.logging;
        if !(l.min_score > 0.0 && l.max_score >= l.min_score && l.max_score.is_finite()) {
            return Err(config_error("logging scores need 0 < min_score <= max_score"));
        }
        if l.max_score / l.min_score > 1e6 {
            return Err(config_error("logging score range wider than 1e6"));
        }
        if !(l.relevance_weight >= 0.0 && l.bias_weight >= 0.0 && l.relevance_weight + l.bias_weight <= 1.0) {
            return Err(config_error("logging weights must be non-negative and sum to at most 1"));
        }
        let r = &self.relevance;
        if !(0.0 <= r.min && r.min <= r.max && r.max <= 1.0) {
            return Err(config_error("relevance needs 0 <= min <= max <= 1"));
        }
        if !(0.0..=1.0).contains(&self.shuffle_fraction) {
            return Err(config_error("shuffle_fraction must lie in [0, 1]"));
        }
        self.examination.curve(self.max_banner_size())?;
        Ok(())
    }
}

/// Position-based click model: the click probability of product `p` at rank
/// `r` is `examination[r - 1] · relevance[p]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickModel {
    pub examination: Vec<f64>,
    pub relevance: BTreeMap<String, f64>,
}

impl ClickModel {
    /// Click probability at 1-based `rank`.
    pub fn click_probability(&self, rank: usize, product_id: &str) -> Option<f64> {
        Some(self.examination.get(rank.checked_sub(1)?)? * self.relevance.get(product_id)?)
    }

    /// Largest total click probability of any banner of `size` products drawn
    /// from the catalog: sorted examination paired with sorted relevance.
    pub fn max_click_mass(&self, size: usize) -> f64 {
        let mut exam: Vec<f64> = self.examination[..size].to_vec();
        exam.sort_by(|a, b| b.total_cmp(a));
        let mut rel: Vec<f64> = self.relevance.values().copied().collect();
        rel.sort_by(|a, b| b.total_cmp(a));
        exam.iter().zip(&rel).map(|(e, r)| e * r).sum()
    }
}

/// Everything the simulator knows and the evaluator must not read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub click_model: ClickModel,
    /// Product-level preference of the logging policy, in `[0, 1]`.
    pub logging_bias: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub records: Vec<BannerRecord>,
    pub truth: GroundTruth,
}

pub fn product_id(index: usize) -> String {
    format!("p{index:05}")
}

pub fn banner_id(index: usize) -> String {
    format!("b{index:07}")
}

struct Catalog {
    ids: Vec<String>,
    relevance: Vec<f64>,
    relevance_unit: Vec<f64>,
    bias: Vec<f64>,
}

fn build_catalog(config: &SimConfig) -> Catalog {
    let mut rng = rng::derived(config.seed, Purpose::Simulation, u64::MAX);
    let (lo, hi) = (config.relevance.min, config.relevance.max);
    let n = config.catalog_size;
    let relevance: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    let bias: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let relevance_unit = relevance.iter().map(|r| if hi > lo { (r - lo) / (hi - lo) } else { 0.5 }).collect();
    Catalog { ids: (0..n).map(product_id).collect(), relevance, relevance_unit, bias }
}

/// Banner `index` is shuffled when `floor((index + 1)·k / n) > floor(index·k / n)`:
/// exactly `k` banners, spread evenly.
fn is_shuffled(index: usize, shuffled: usize, total: usize) -> bool {
    let (i, k, n) = (index as u128, shuffled as u128, total as u128);
    (i + 1) * k / n > i * k / n
}

struct BannerContext<'a> {
    config: &'a SimConfig,
    catalog: &'a Catalog,
    examination: &'a [f64],
    shuffled: usize,
}

impl BannerContext<'_> {
    fn generate(&self, index: usize) -> BannerRecord {
        let config = self.config;
        let mut rng = rng::derived(config.seed, Purpose::Simulation, index as u64);

        let size = if config.banner_sizes.len() == 1 {
            config.banner_sizes[0].size
        } else {
            let total: f64 = config.banner_sizes.iter().map(|s| s.weight).sum();
            let mut target = rng.random::<f64>() * total;
            config
                .banner_sizes
                .iter()
                .find(|s| {
                    target -= s.weight;
                    target < 0.0 && s.weight > 0.0
                })
                .unwrap_or_else(|| config.banner_sizes.iter().rfind(|s| s.weight > 0.0).unwrap())
                .size
        };

        let pool = index::sample(&mut rng, config.catalog_size, config.candidate_pool_size).into_vec();
        let l = &config.logging;
        let noise_weight = (1.0 - l.relevance_weight - l.bias_weight).max(0.0);
        let log_range = (l.max_score / l.min_score).ln();
        let scores: Vec<f64> = pool
            .iter()
            .map(|&p| {
                let latent = l.relevance_weight * self.catalog.relevance_unit[p]
                    + l.bias_weight * self.catalog.bias[p]
                    + noise_weight * rng.random::<f64>();
                l.min_score * (latent * log_range).exp()
            })
            .collect();
        let candidates = ScoredCandidateSet::new(scores).expect("simulated scores are positive");
        let mut order = pl::sample_banner(&candidates, size, &mut rng).expect("pool holds the banner");

        let shuffled = is_shuffled(index, self.shuffled, config.num_banners);
        if shuffled {
            order.shuffle(&mut rng);
        }

        let mut u = rng.random::<f64>();
        let mut clicked_rank = None;
        for (r, &c) in order.iter().enumerate() {
            u -= self.examination[r] * self.catalog.relevance[pool[c]];
            if u < 0.0 {
                clicked_rank = Some(r + 1);
                break;
            }
        }

        BannerRecord {
            banner_id: banner_id(index),
            displayed: order
                .iter()
                .map(|&c| DisplayedProduct::new(self.catalog.ids[pool[c]].clone(), candidates.scores()[c]))
                .collect(),
            total_candidate_score: candidates.total_score(),
            clicked_rank,
            shuffled,
        }
    }
}

/// Generates `config.num_banners` banners in index order. Each banner draws
/// from its own stream, so the output does not depend on thread scheduling.
pub fn simulate_logs(config: &SimConfig) -> Result<Simulation, SimError> {
    config.validate()?;
    let catalog = build_catalog(config);
    let examination = config.examination.curve(config.max_banner_size())?;
    let click_model = ClickModel {
        examination: examination.clone(),
        relevance: catalog.ids.iter().cloned().zip(catalog.relevance.iter().copied()).collect(),
    };
    for s in &config.banner_sizes {
        let total = click_model.max_click_mass(s.size);
        if total > 1.0 {
            return Err(SimError::ClickMassExceeded { size: s.size, total });
        }
    }

    let context =
        BannerContext { config, catalog: &catalog, examination: &examination, shuffled: config.shuffled_count() };
    let records = (0..config.num_banners).into_par_iter().map(|i| context.generate(i)).collect();
    let truth = GroundTruth {
        click_model,
        logging_bias: catalog.ids.iter().cloned().zip(catalog.bias.iter().copied()).collect(),
    };
    Ok(Simulation { records, truth })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZooFamily {
    /// Scores are the true relevances.
    Oracle,
    /// Independent Gaussian scores.
    Noise,
    /// Relevance plus Gaussian noise.
    Ladder,
    /// Relevance blended with the logging policy's product bias.
    BiasChasing,
}

#[derive(Debug, Clone)]
pub struct ZooModel {
    pub model: ScoringModel,
    pub family: ZooFamily,
    /// Gaussian noise level in relevance-range units (infinite for pure noise).
    pub noise: f64,
    /// Weight of the logging bias in the model's score.
    pub bias_mix: f64,
}

/// Noise added to bias-chasing models.
const BIAS_CHASER_NOISE: f64 = 0.1;

/// Oracle, pure noise, a ladder of increasingly noisy relevance models and a
/// set of models blending relevance with the logging bias.
pub fn generate_model_zoo(truth: &GroundTruth, spec: &ZooSpec, seed: u64) -> Result<Vec<ZooModel>, SimError> {
    if spec.count < 2 {
        return Err(config_error("a model zoo needs at least 2 models"));
    }
    if !(spec.max_noise.is_finite() && spec.max_noise >= 0.0) {
        return Err(config_error("max_noise must be finite and non-negative"));
    }
    let relevance = &truth.click_model.relevance;
    let (lo, hi) = relevance.values().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    let unit = |r: f64| if hi > lo { (r - lo) / (hi - lo) } else { 0.5 };
    let bias_of = |id: &str| truth.logging_bias.get(id).copied().unwrap_or(0.5);

    let remaining = spec.count - 2;
    let chasers = spec.bias_chasers.min(remaining);
    let ladder = remaining - chasers;

    let mut zoo = Vec::with_capacity(spec.count);
    let mut push =
        |family: ZooFamily, noise: f64, bias_mix: f64, label: String, score: &dyn Fn(&str, f64, f64) -> f64| {
            let index = zoo.len();
            let mut rng = rng::derived(seed, Purpose::ModelZoo, index as u64);
            let name = format!("m{index:02}-{label}");
            let scores = relevance.iter().map(|(id, &r)| {
                let z: f64 = rng.sample(StandardNormal);
                (id.clone(), score(id, r, z))
            });
            let model = ScoringModel::new(name, scores).expect("finite zoo scores");
            zoo.push(ZooModel { model, family, noise, bias_mix });
        };

    push(ZooFamily::Oracle, 0.0, 0.0, "oracle".into(), &|_, r, _| r);
    push(ZooFamily::Noise, f64::INFINITY, 0.0, "noise".into(), &|_, _, z| z);
    for k in 1..=ladder {
        let noise = spec.max_noise * k as f64 / ladder as f64;
        push(ZooFamily::Ladder, noise, 0.0, format!("ladder-{noise:.3}"), &|_, r, z| unit(r) + noise * z);
    }
    for j in 1..=chasers {
        let mix = j as f64 / chasers as f64;
        push(ZooFamily::BiasChasing, BIAS_CHASER_NOISE, mix, format!("bias-{mix:.3}"), &|id, r, z| {
            (1.0 - mix) * unit(r) + mix * bias_of(id) + BIAS_CHASER_NOISE * z
        });
    }
    Ok(zoo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrRow {
    pub banner_size: usize,
    pub rank: usize,
    pub impressions: u64,
    pub clicks: u64,
    pub ctr: f64,
}

/// Click-through rate per (banner size, rank), sorted by size then rank.
pub fn ctr_by_rank<'a>(records: impl IntoIterator<Item = &'a BannerRecord>) -> Vec<CtrRow> {
    let mut table: BTreeMap<(usize, usize), (u64, u64)> = BTreeMap::new();
    for record in records {
        let n = record.len();
        for rank in 1..=n {
            let cell = table.entry((n, rank)).or_default();
            cell.0 += 1;
            cell.1 += u64::from(record.clicked_rank == Some(rank));
        }
    }
    table
        .into_iter()
        .map(|((banner_size, rank), (impressions, clicks))| CtrRow {
            banner_size,
            rank,
            impressions,
            clicks,
            ctr: if impressions == 0 { 0.0 } else { clicks as f64 / impressions as f64 },
        })
        .collect()
}
