//! Statistical properties of simulated traffic against the known click model.

use rankbias::sim::{self, ExaminationSpec, SimConfig, SizeWeight, ZooFamily, ZooSpec};
use rankbias::stats;

fn config(num_banners: usize, examination: ExaminationSpec) -> SimConfig {
    SimConfig { seed: 77, num_banners, examination, ..SimConfig::default() }
}

#[test]
fn flat_examination_gives_rank_independent_ctr_on_shuffled_traffic() {
    let cfg = SimConfig { shuffle_fraction: 1.0, ..config(200_000, ExaminationSpec::Flat { value: 0.15 }) };
    let simulation = sim::simulate_logs(&cfg).unwrap();
    let rows = sim::ctr_by_rank(&simulation.records);
    let clicks: f64 = rows.iter().map(|r| r.clicks as f64).sum();
    let impressions: f64 = rows.iter().map(|r| r.impressions as f64).sum();
    let pooled = clicks / impressions;
    for row in &rows {
        let sd = (pooled * (1.0 - pooled) / row.impressions as f64).sqrt();
        assert!((row.ctr - pooled).abs() < 3.5 * sd, "rank {} ctr {} vs pooled {pooled}", row.rank, row.ctr);
    }
}

#[test]
fn steep_examination_gives_strictly_decreasing_ctr() {
    let simulation = sim::simulate_logs(&config(100_000, ExaminationSpec::default())).unwrap();
    let rows = sim::ctr_by_rank(&simulation.records);
    assert_eq!(rows.len(), 6);
    for pair in rows.windows(2) {
        assert!(pair[0].ctr > pair[1].ctr, "{pair:?}");
    }
}

#[test]
fn ctr_ratio_matches_the_click_model() {
    let cfg = SimConfig {
        banner_sizes: vec![SizeWeight { size: 2, weight: 1.0 }],
        ..config(400_000, ExaminationSpec::Explicit { values: vec![0.5, 0.25] })
    };
    let simulation = sim::simulate_logs(&cfg).unwrap();
    let relevance = &simulation.truth.click_model.relevance;
    let n = simulation.records.len() as f64;
    let mut mean_rel = [0.0; 2];
    let mut clicks = [0.0f64; 2];
    for record in &simulation.records {
        for (r, p) in record.displayed.iter().enumerate() {
            mean_rel[r] += relevance[&p.product_id] / n;
        }
        if let Some(rank) = record.clicked_rank {
            clicks[rank - 1] += 1.0;
        }
    }
    let observed = clicks[0] / clicks[1];
    let expected = 2.0 * mean_rel[0] / mean_rel[1];
    // Delta-method standard deviation of a ratio of two counts.
    let sd = observed * (1.0 / clicks[0] + 1.0 / clicks[1]).sqrt();
    assert!((observed - expected).abs() < 3.0 * sd, "observed {observed}, expected {expected} +- {sd}");
}

#[test]
fn more_relevant_products_are_clicked_more_at_a_fixed_rank() {
    let cfg = SimConfig { shuffle_fraction: 1.0, ..config(200_000, ExaminationSpec::default()) };
    let simulation = sim::simulate_logs(&cfg).unwrap();
    let relevance = &simulation.truth.click_model.relevance;
    // Rank-1 CTR of the least and most relevant thirds of the catalog.
    let mut sorted: Vec<f64> = relevance.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let (low_cut, high_cut) = (sorted[sorted.len() / 3], sorted[2 * sorted.len() / 3]);
    let (mut low, mut high) = ((0.0, 0.0), (0.0, 0.0));
    for record in &simulation.records {
        let rel = relevance[&record.displayed[0].product_id];
        let clicked = f64::from(u8::from(record.clicked_rank == Some(1)));
        if rel < low_cut {
            low = (low.0 + clicked, low.1 + 1.0);
        } else if rel > high_cut {
            high = (high.0 + clicked, high.1 + 1.0);
        }
    }
    assert!(high.0 / high.1 > low.0 / low.1 + 0.05, "high {high:?} low {low:?}");
}

#[test]
fn shuffled_banners_show_every_product_at_every_rank_uniformly() {
    let cfg = SimConfig { shuffle_fraction: 1.0, ..config(60_000, ExaminationSpec::default()) };
    let simulation = sim::simulate_logs(&cfg).unwrap();
    // Rank of the highest-scored displayed product should be uniform over 1..=6.
    let mut counts = [0.0f64; 6];
    for record in &simulation.records {
        let top = (0..record.len())
            .max_by(|&a, &b| record.displayed[a].logging_score.total_cmp(&record.displayed[b].logging_score))
            .unwrap();
        counts[top] += 1.0;
    }
    let expected = simulation.records.len() as f64 / 6.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 99.9% quantile of chi-square with 5 degrees of freedom.
    assert!(chi2 < 20.52, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn unshuffled_banners_favour_high_logging_scores_at_the_top() {
    let cfg = SimConfig { shuffle_fraction: 0.0, ..config(20_000, ExaminationSpec::default()) };
    let simulation = sim::simulate_logs(&cfg).unwrap();
    let top_is_best = simulation
        .records
        .iter()
        .filter(|r| r.displayed.iter().all(|p| p.logging_score <= r.displayed[0].logging_score))
        .count();
    assert!(top_is_best as f64 > 2.0 * simulation.records.len() as f64 / 6.0);
}

#[test]
fn bias_chasing_models_track_the_logging_policy() {
    let cfg = config(1, ExaminationSpec::default());
    let simulation = sim::simulate_logs(&cfg).unwrap();
    let zoo = sim::generate_model_zoo(&simulation.truth, &ZooSpec::default(), 3).unwrap();
    let chaser = zoo.iter().rfind(|m| m.family == ZooFamily::BiasChasing).unwrap();
    let oracle = zoo.iter().find(|m| m.family == ZooFamily::Oracle).unwrap();
    let ids: Vec<&String> = simulation.truth.logging_bias.keys().collect();
    let bias: Vec<f64> = ids.iter().map(|id| simulation.truth.logging_bias[*id]).collect();
    let chaser_scores: Vec<f64> = ids.iter().map(|id| chaser.model.score(id).unwrap()).collect();
    let oracle_scores: Vec<f64> = ids.iter().map(|id| oracle.model.score(id).unwrap()).collect();
    assert!(stats::spearman(&chaser_scores, &bias).unwrap() > 0.9);
    assert!(stats::spearman(&oracle_scores, &bias).unwrap().abs() < 0.1);
}
