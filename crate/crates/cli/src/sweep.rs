//! `sweep`: every model of a directory against every requested metric and
//! subset, one CSV row per combination.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rankbias::logio::{self, IngestReport};
use rankbias::metrics::EvaluationSet;
use rankbias::{MetricKind, ScoringModel};
use rayon::prelude::*;

use crate::{load_log, MetricRow, RowStatus, Subset};

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub metrics: Vec<MetricKind>,
    pub subsets: Vec<Subset>,
    pub seed: u64,
    pub resamples: u32,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// Ordered by model file, then metric, then subset, as requested.
    pub rows: Vec<MetricRow>,
    pub ingest: IngestReport,
}

impl SweepOutput {
    pub fn failures(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.status != RowStatus::Ok)
    }
}

fn file_label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn run(log: &Path, models_dir: &Path, options: &SweepOptions) -> anyhow::Result<SweepOutput> {
    let files = logio::model_files(models_dir)?;
    if files.is_empty() {
        bail!("no .{} files in {}", logio::MODEL_EXTENSION, models_dir.display());
    }
    let contents = load_log(log)?;
    let models: Vec<(PathBuf, Result<ScoringModel, String>)> = files
        .into_iter()
        .map(|f| {
            let model = logio::read_model(&f).map_err(|e| e.to_string());
            (f, model)
        })
        .collect();
    let rows = sweep_models(&contents.records, &models, options);
    Ok(SweepOutput { rows, ingest: contents.report })
}

/// Evaluates already loaded models. Entries holding an error produce `error`
/// rows for every combination.
pub fn sweep_models(
    records: &[rankbias::BannerRecord],
    models: &[(PathBuf, Result<ScoringModel, String>)],
    options: &SweepOptions,
) -> Vec<MetricRow> {
    let subsets: Vec<(Subset, Vec<rankbias::BannerRecord>)> =
        options.subsets.iter().map(|&s| (s, s.filter(records))).collect();
    let sets: Vec<EvaluationSet<'_>> = subsets.iter().map(|(_, r)| EvaluationSet::new(r)).collect();

    let subset_count = subsets.len();
    let jobs: Vec<(usize, MetricKind, usize)> = (0..models.len())
        .flat_map(|m| options.metrics.iter().flat_map(move |&k| (0..subset_count).map(move |s| (m, k, s))))
        .collect();

    jobs.into_par_iter()
        .map(|(m, kind, s)| {
            let subset = subsets[s].0;
            match &models[m].1 {
                Ok(model) => {
                    let result = sets[s].estimate(model, kind, options.resamples, options.seed);
                    MetricRow::from_result(model.name(), kind, subset, subsets[s].1.len(), options.resamples, result)
                }
                Err(message) => MetricRow::failed(&file_label(&models[m].0), kind, subset, message.clone()),
            }
        })
        .collect()
}

pub fn read_rows(path: &Path) -> anyhow::Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    reader.deserialize().collect::<Result<Vec<MetricRow>, _>>().with_context(|| format!("parsing {}", path.display()))
}
