//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any criterion fails.
//!
//! Run alone with `cargo test -p rankbias-cli --test acceptance`.

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::index;
use rand::Rng;
use rankbias::metrics::EvaluationSet;
use rankbias::pl::{self, PlacementModel, ScoredCandidateSet};
use rankbias::rng::{self, Purpose};
use rankbias::sim::{self, LoggingSpec, SimConfig, ZooFamily};
use rankbias::{BannerRecord, MetricKind, ScoringModel};
use rankbias_cli::compare::{compare_rows, ColumnSpec};
use rankbias_cli::sweep::{self, SweepOptions};
use rankbias_cli::{load_log, simulate, MetricRow, RowStatus, Subset};
use tempfile::TempDir;

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

fn mark(passed: bool) -> &'static str {
    if passed {
        "ok"
    } else {
        "FAILED"
    }
}

fn log_uniform<R: Rng>(rng: &mut R) -> f64 {
    10f64.powf(rng.random_range(-3.0..=3.0))
}

/// Random candidate set with `n` displayed products and up to `extra`
/// products left out of the banner.
fn random_instance(n: usize, extra: usize, index: u64) -> (ScoredCandidateSet, Vec<usize>, usize) {
    let mut rng = rng::derived(SEED, Purpose::Oracle, index);
    let m = n + rng.random_range(0..=extra);
    let scores = (0..m).map(|_| log_uniform(&mut rng)).collect();
    let displayed = index::sample(&mut rng, m, n).into_vec();
    let rank = rng.random_range(1..=n);
    (ScoredCandidateSet::new(scores).unwrap(), displayed, rank)
}

// ---------------------------------------------------------------------------
// 1-3: the placement dynamic program

fn dp_correctness() -> Outcome {
    let start = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_rankbias"))
        .args(["oracle", "--max-n", "8", "--trials", "200", "--seed", "1"])
        .output()
        .expect("running the oracle command");
    let elapsed = start.elapsed();
    let report: serde_json::Value = match serde_json::from_slice(&output.stdout) {
        Ok(v) => v,
        Err(e) => return Outcome::new(false, format!("unreadable oracle report: {e}")),
    };
    let worst = report["worst_deviation"].as_f64().unwrap_or(f64::INFINITY);
    let passed = output.status.success() && worst <= 1e-10 && elapsed < Duration::from_secs(10);
    Outcome::new(
        passed,
        format!(
            "oracle --max-n 8 --trials 200: exit {}, worst deviation {worst:.2e} (<= 1e-10), {:.2} s (< 10 s)",
            output.status.code().unwrap_or(-1),
            elapsed.as_secs_f64()
        ),
    )
}

fn normalization_and_symmetry() -> Outcome {
    let mut worst_sum = 0.0f64;
    for i in 0..1000u64 {
        let mut rng = rng::derived(SEED, Purpose::Oracle, 1 << 40 | i);
        let n = rng.random_range(2..=16);
        let (candidates, displayed, rank) = random_instance(n, 4, 1 << 41 | i);
        let dist = pl::conditional_rank_probs(&candidates, &displayed, rank).unwrap();
        worst_sum = worst_sum.max((dist.probs().iter().sum::<f64>() - 1.0).abs());
    }

    let mut worst_uniform = 0.0f64;
    for n in 2..=16 {
        for extra in [0, 3] {
            let candidates = ScoredCandidateSet::new(vec![2.5; n + extra]).unwrap();
            let displayed: Vec<usize> = (0..n).collect();
            let model = PlacementModel::new(&candidates, &displayed).unwrap();
            for rank in 1..=n {
                let dist = model.rank_distribution(rank).unwrap();
                for p in dist.probs() {
                    worst_uniform = worst_uniform.max((p - 1.0 / n as f64).abs());
                }
            }
        }
    }
    Outcome::new(
        worst_sum <= 1e-9 && worst_uniform <= 1e-12,
        format!(
            "1000 random instances n in 2..=16: worst |sum - 1| {worst_sum:.2e} (<= 1e-9); \
             uniform scores: worst |p - 1/n| {worst_uniform:.2e} (<= 1e-12)"
        ),
    )
}

fn complexity() -> Outcome {
    let (candidates, displayed, _) = random_instance(16, 4, 1 << 42);
    let mut slowest = Duration::ZERO;
    for rank in 1..=16 {
        let start = Instant::now();
        let dist = pl::conditional_rank_probs(&candidates, &displayed, rank).unwrap();
        let elapsed = start.elapsed();
        assert_eq!(dist.len(), 16);
        slowest = slowest.max(elapsed);
    }
    Outcome::new(
        slowest < Duration::from_millis(100),
        format!("n = 16, slowest clicked rank: {:.1} ms (< 100 ms)", slowest.as_secs_f64() * 1e3),
    )
}

// ---------------------------------------------------------------------------
// 4, 5, 7: calibration properties on dedicated simulations

fn zoo_member(config: &SimConfig, truth: &sim::GroundTruth, family: ZooFamily) -> ScoringModel {
    sim::generate_model_zoo(truth, &config.zoo, config.seed)
        .unwrap()
        .into_iter()
        .find(|m| m.family == family)
        .unwrap()
        .model
}

fn random_model_calibration() -> Outcome {
    let config = SimConfig { seed: SEED, shuffle_fraction: 1.0, ..SimConfig::default() };
    let simulation = sim::simulate_logs(&config).unwrap();
    let noise = zoo_member(&config, &simulation.truth, ZooFamily::Noise);
    let shuffled = Subset::Shuffled.filter(&simulation.records);
    let est = EvaluationSet::new(&shuffled).estimate(&noise, MetricKind::Pd, 1, SEED).unwrap();
    let z = (est.value - 0.5) / est.std_error;
    Outcome::new(
        z.abs() <= 3.0,
        format!(
            "pure-noise PD on {} shuffled banners: {:.4} +- {:.4} (z = {z:+.2}, |z| <= 3)",
            shuffled.len(),
            est.value,
            est.std_error
        ),
    )
}

fn uniform_shuffle_equivalence() -> Outcome {
    let logging = LoggingSpec { min_score: 1.0, max_score: 1.0, ..LoggingSpec::default() };
    let config = SimConfig { seed: SEED + 1, logging, ..SimConfig::default() };
    let simulation = sim::simulate_logs(&config).unwrap();
    let set = EvaluationSet::new(&simulation.records);
    let zoo = sim::generate_model_zoo(&simulation.truth, &config.zoo, config.seed).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    for member in &zoo {
        let pd = set.estimate(&member.model, MetricKind::Pd, 1, SEED).unwrap();
        let cd = set.estimate(&member.model, MetricKind::Cd, 1, SEED).unwrap();
        let z = (cd.value - pd.value) / pd.std_error.hypot(cd.std_error);
        passed &= z.abs() <= 3.0;
        parts.push(format!("{} z = {z:+.2}", member.model.name()));
    }
    Outcome::new(
        passed,
        format!(
            "equal logging scores, {} banners, (cd - pd) / combined SE within 3 for {} models: {}",
            simulation.records.len(),
            parts.len(),
            parts.join(", ")
        ),
    )
}

/// Displayed set {0, 1, 2, 3} out of six candidates.
const PAIR_SCORES: [f64; 6] = [1.0, 2.5, 4.0, 0.7, 0.3, 0.5];
const PAIR_EXAMINATION: [f64; 4] = [0.9, 0.5, 0.3, 0.2];
const PAIR_RELEVANCE: [f64; 4] = [0.2, 0.35, 0.5, 0.3];
const PAIR_BANNERS: usize = 1_000_000;

fn pair_direction() -> Outcome {
    // Analytic part: P(P+ = a, P- = b, R = r) = q_r(a) CTR_r(a) q_r(b).
    let mut analytic_checks = 0u64;
    let mut analytic_ok = true;
    for i in 0..2000u64 {
        let mut rng = rng::derived(SEED, Purpose::Oracle, 1 << 43 | i);
        let n = rng.random_range(2..=4);
        let (candidates, displayed, _) = random_instance(n, 3, 1 << 44 | i);
        let exam: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..=1.0)).collect();
        let mut rel: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=0.25)).collect();
        if i % 4 == 0 {
            rel[1] = rel[0];
        }
        let model = PlacementModel::new(&candidates, &displayed).unwrap();
        for r in 1..=n {
            let q = model.rank_distribution(r).unwrap();
            let q = q.probs();
            for a in 0..n {
                for b in 0..n {
                    if a == b || q[a] == 0.0 || q[b] == 0.0 {
                        continue;
                    }
                    let (ctr_a, ctr_b) = (exam[r - 1] * rel[a], exam[r - 1] * rel[b]);
                    let forward = q[a] * q[b] * ctr_a;
                    let backward = q[a] * q[b] * ctr_b;
                    analytic_ok &= (forward > backward) == (ctr_a > ctr_b);
                    analytic_ok &= (forward == backward) == (ctr_a == ctr_b);
                    analytic_checks += 1;
                }
            }
        }
    }

    // Simulated part: the conditional ordering is drawn by rejection, keeping
    // only Plackett-Luce draws whose displayed set is {0, 1, 2, 3}.
    let candidates = ScoredCandidateSet::new(PAIR_SCORES.to_vec()).unwrap();
    let displayed = [0, 1, 2, 3];
    let model = PlacementModel::new(&candidates, &displayed).unwrap();
    let dists: Vec<_> = (1..=4).map(|r| model.rank_distribution(r).unwrap()).collect();
    let mut counts = [[[0u64; 4]; 4]; 4];
    let mut rng = rng::derived(SEED, Purpose::Simulation, 1 << 45);
    let mut accepted = 0;
    while accepted < PAIR_BANNERS {
        let banner = pl::sample_banner(&candidates, 4, &mut rng).unwrap();
        if banner.iter().any(|&p| p >= 4) {
            continue;
        }
        accepted += 1;
        let mut u = rng.random::<f64>();
        for (r, &p) in banner.iter().enumerate() {
            u -= PAIR_EXAMINATION[r] * PAIR_RELEVANCE[p];
            if u < 0.0 {
                let negative = pl::sample_rank_product(&dists[r], &mut rng);
                if negative != p {
                    counts[r][p][negative] += 1;
                }
                break;
            }
        }
    }
    let n = PAIR_BANNERS as f64;
    let mut worst_z = 0.0f64;
    let mut sign_ok = true;
    for (r, dist) in dists.iter().enumerate() {
        let q = dist.probs();
        for a in 0..4 {
            for b in a + 1..4 {
                let p_ab = q[a] * PAIR_EXAMINATION[r] * PAIR_RELEVANCE[a] * q[b];
                let p_ba = q[b] * PAIR_EXAMINATION[r] * PAIR_RELEVANCE[b] * q[a];
                let expected = n * (p_ab - p_ba);
                let sd = (n * (p_ab + p_ba - (p_ab - p_ba).powi(2))).sqrt();
                let observed = counts[r][a][b] as f64 - counts[r][b][a] as f64;
                let z = (observed - expected) / sd;
                worst_z = worst_z.max(z.abs());
                if expected.abs() > 3.0 * sd {
                    sign_ok &= observed.signum() == expected.signum();
                }
            }
        }
    }
    Outcome::new(
        analytic_ok && worst_z <= 3.0 && sign_ok,
        format!(
            "analytic iff-CTR holds on {analytic_checks} (rank, pair) cases: {}; \
             {PAIR_BANNERS} simulated banners, worst |z| of pair-count differences {worst_z:.2} (<= 3)",
            mark(analytic_ok)
        ),
    )
}

// ---------------------------------------------------------------------------
// 6, 8, 9: the desk-scale experiment, run end to end through files

struct Experiment {
    _dir: TempDir,
    log: PathBuf,
    models_dir: PathBuf,
    rows: Vec<MetricRow>,
    elapsed: Duration,
    setup_error: Option<String>,
}

fn experiment() -> Experiment {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("experiment.jsonl");
    let models_dir = dir.path().join("models");
    let config = SimConfig { seed: SEED, ..SimConfig::default() };
    let start = Instant::now();
    let options = SweepOptions {
        metrics: MetricKind::ALL.to_vec(),
        subsets: vec![Subset::Shuffled, Subset::NonShuffled],
        seed: SEED,
        resamples: 1,
    };
    let result = simulate::simulate_to(&config, &log, None, Some(&models_dir))
        .and_then(|_| sweep::run(&log, &models_dir, &options));
    let elapsed = start.elapsed();
    let (rows, setup_error) = match result {
        Ok(out) => (out.rows, None),
        Err(e) => (Vec::new(), Some(format!("{e:#}"))),
    };
    Experiment { _dir: dir, log, models_dir, rows, elapsed, setup_error }
}

fn column(spec: &str) -> ColumnSpec {
    spec.parse().unwrap()
}

fn bias_correction(exp: &Experiment) -> Outcome {
    if let Some(e) = &exp.setup_error {
        return Outcome::new(false, format!("experiment failed: {e}"));
    }
    let models = exp.rows.iter().filter(|r| r.metric == MetricKind::Pd && r.subset == Subset::Shuffled).count();
    let start = Instant::now();
    let cd = compare_rows(&exp.rows, column("cd:non-shuffled"), column("pd:shuffled")).unwrap();
    let pd = compare_rows(&exp.rows, column("pd:non-shuffled"), column("pd:shuffled")).unwrap();
    let total = exp.elapsed + start.elapsed();
    let (rho_cd, rho_pd) = (cd.spearman.unwrap_or(f64::NAN), pd.spearman.unwrap_or(f64::NAN));
    let all_ok = exp.rows.iter().all(|r| r.status == RowStatus::Ok);
    Outcome::new(
        all_ok && models == 40 && rho_cd >= 0.9 && rho_pd <= rho_cd - 0.15 && total < Duration::from_secs(300),
        format!(
            "{models} models: spearman(cd non-shuffled, pd shuffled) = {rho_cd:.3} (>= 0.9); \
             spearman(pd non-shuffled, pd shuffled) = {rho_pd:.3} (<= {:.3}); \
             simulate + sweep + compare {:.1} s (< 300 s)",
            rho_cd - 0.15,
            total.as_secs_f64()
        ),
    )
}

fn find<'a>(rows: &'a [MetricRow], model: &str, metric: MetricKind, subset: Subset) -> &'a MetricRow {
    rows.iter().find(|r| r.model == model && r.metric == metric && r.subset == subset).unwrap()
}

fn model_names(rows: &[MetricRow]) -> Vec<String> {
    let mut names: Vec<String> = rows.iter().map(|r| r.model.clone()).collect();
    names.dedup();
    names
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len().is_multiple_of(2) {
        (values[mid - 1] + values[mid]) / 2.0
    } else {
        values[mid]
    }
}

fn variance_accounting(exp: &Experiment) -> Outcome {
    if let Some(e) = &exp.setup_error {
        return Outcome::new(false, format!("experiment failed: {e}"));
    }
    let mut inflation = Vec::new();
    let mut rejection = Vec::new();
    for model in model_names(&exp.rows) {
        let pd = find(&exp.rows, &model, MetricKind::Pd, Subset::NonShuffled);
        let cd = find(&exp.rows, &model, MetricKind::Cd, Subset::NonShuffled);
        inflation.push((cd.std_error.unwrap() / pd.std_error.unwrap()).powi(2));
        rejection.push(cd.rejection_rate.unwrap());
    }
    let factor = median(inflation.clone());
    let (lo, hi) = inflation.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Outcome::new(
        (1.5..=4.0).contains(&factor),
        format!(
            "non-shuffled banners: CD rejection rate {:.3}; effective-sample inflation (SE_cd / SE_pd)^2 \
             median {factor:.3} over {} models (range {lo:.3}..{hi:.3}), expected in [1.5, 4]",
            median(rejection),
            inflation.len()
        ),
    )
}

fn estimator_consistency(exp: &Experiment) -> Outcome {
    if let Some(e) = &exp.setup_error {
        return Outcome::new(false, format!("experiment failed: {e}"));
    }
    let mut worst_z = 0.0f64;
    let mut pairs = 0;
    for model in model_names(&exp.rows) {
        for subset in [Subset::Shuffled, Subset::NonShuffled] {
            let cd = find(&exp.rows, &model, MetricKind::Cd, subset);
            let exact = find(&exp.rows, &model, MetricKind::CdExact, subset);
            let combined = cd.std_error.unwrap().hypot(exact.std_error.unwrap());
            worst_z = worst_z.max((cd.value.unwrap() - exact.value.unwrap()).abs() / combined);
            pairs += 1;
        }
    }

    // Two independent passes over the log, each with fresh rank distributions.
    let records: Vec<BannerRecord> = Subset::NonShuffled.filter(&load_log(&exp.log).unwrap().records);
    let models: Vec<ScoringModel> = rankbias::logio::model_files(&exp.models_dir)
        .unwrap()
        .iter()
        .map(|f| rankbias::logio::read_model(f).unwrap())
        .collect();
    let pass = |seed: u64| -> Vec<u64> {
        let set = EvaluationSet::new(&records);
        models
            .iter()
            .map(|m| set.estimate(m, MetricKind::CdExact, 1, seed).unwrap())
            .flat_map(|e| [e.value.to_bits(), e.std_error.to_bits()])
            .collect()
    };
    let first = pass(1);
    let identical = first == pass(1) && first == pass(999);
    Outcome::new(
        worst_z <= 3.0 && identical,
        format!(
            "{pairs} (model, subset) pairs: worst |cd - cd-exact| / combined SE {worst_z:.2} (<= 3); \
             cd-exact bit-identical across runs and seeds: {}",
            mark(identical)
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, outcome: Outcome| {
        let verdict = if outcome.passed { "PASS" } else { "FAIL" };
        println!("criterion {id} [{name}] {verdict}: {}", outcome.detail);
        results.push((id, name, outcome));
    };

    report(1, "dp-correctness", dp_correctness());
    report(2, "normalization-symmetry", normalization_and_symmetry());
    report(3, "complexity", complexity());
    report(4, "random-model-calibration", random_model_calibration());
    report(5, "uniform-shuffle-equivalence", uniform_shuffle_equivalence());
    let exp = experiment();
    report(6, "bias-correction", bias_correction(&exp));
    report(7, "pair-direction", pair_direction());
    report(8, "variance-accounting", variance_accounting(&exp));
    report(9, "estimator-consistency", estimator_consistency(&exp));

    let failed: Vec<String> = results.iter().filter(|r| !r.2.passed).map(|r| format!("{} [{}]", r.0, r.1)).collect();
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() { String::new() } else { format!(" ({})", failed.join(", ")) }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
