//! `simulate`: synthetic log, ground truth and model zoo from a config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rankbias::logio::{self, LogHeader, MODEL_EXTENSION};
use rankbias::sim::{self, GroundTruth, SimConfig, ZooFamily};
use serde::{Deserialize, Serialize};

/// Reads a simulator config. `.json` files are JSON, anything else is TOML.
/// Missing fields take their default values.
pub fn load_config(path: &Path) -> anyhow::Result<SimConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: SimConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
    } else {
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
    };
    config.validate()?;
    Ok(config)
}

/// Zoo model description stored alongside the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEntry {
    pub name: String,
    pub family: ZooFamily,
    /// Noise level in relevance-range units; absent for the pure-noise model.
    pub noise: Option<f64>,
    pub bias_mix: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    #[serde(flatten)]
    pub truth: GroundTruth,
    pub models: Vec<ZooEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub log: PathBuf,
    pub truth: PathBuf,
    pub models_dir: PathBuf,
    pub banners: usize,
    pub shuffled: usize,
    pub clicks: usize,
    pub models: usize,
}

/// `<out stem>.truth.json` next to the log.
pub fn default_truth_path(out: &Path) -> PathBuf {
    out.with_extension("truth.json")
}

/// `<out stem>-models/` next to the log.
pub fn default_models_dir(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "log".into());
    out.with_file_name(format!("{stem}-models"))
}

pub fn run(
    config_path: &Path,
    out: &Path,
    truth_path: Option<&Path>,
    models_dir: Option<&Path>,
) -> anyhow::Result<SimulateReport> {
    let config = load_config(config_path)?;
    simulate_to(&config, out, truth_path, models_dir)
}

/// Writes the log, the ground truth and one model file per zoo member.
pub fn simulate_to(
    config: &SimConfig,
    out: &Path,
    truth_path: Option<&Path>,
    models_dir: Option<&Path>,
) -> anyhow::Result<SimulateReport> {
    let truth_path = truth_path.map_or_else(|| default_truth_path(out), Path::to_owned);
    let models_dir = models_dir.map_or_else(|| default_models_dir(out), Path::to_owned);
    if truth_path == out {
        bail!("ground-truth path must differ from the log path");
    }

    let simulation = sim::simulate_logs(config)?;
    let header = LogHeader::new(concat!("rankbias simulate ", env!("CARGO_PKG_VERSION")))
        .with_seed(config.seed)
        .with_config(serde_json::to_value(config)?);
    logio::write_logs(out, &header, &simulation.records)?;

    let zoo = sim::generate_model_zoo(&simulation.truth, &config.zoo, config.seed)?;
    std::fs::create_dir_all(&models_dir).with_context(|| format!("creating {}", models_dir.display()))?;
    let mut entries = Vec::with_capacity(zoo.len());
    for member in &zoo {
        let file = format!("{}.{MODEL_EXTENSION}", member.model.name());
        logio::write_model(models_dir.join(&file), &member.model)?;
        entries.push(ZooEntry {
            name: member.model.name().to_owned(),
            family: member.family,
            noise: member.noise.is_finite().then_some(member.noise),
            bias_mix: member.bias_mix,
            file,
        });
    }
    let truth = TruthFile { truth: simulation.truth, models: entries };
    logio::write_json(&truth_path, &truth)?;

    Ok(SimulateReport {
        log: out.to_owned(),
        truth: truth_path,
        models_dir,
        banners: simulation.records.len(),
        shuffled: simulation.records.iter().filter(|r| r.shuffled).count(),
        clicks: simulation.records.iter().filter(|r| r.clicked_rank.is_some()).count(),
        models: zoo.len(),
    })
}
