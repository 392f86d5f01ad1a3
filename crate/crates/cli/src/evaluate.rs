//! `evaluate`: one metric for one model on one subset of a log.

use std::path::Path;

use anyhow::Context;
use rankbias::logio::{self, IngestReport};
use rankbias::metrics::{EvaluationSet, MetricError};
use rankbias::MetricKind;
use serde::Serialize;

use crate::{load_log, MetricRow, RowStatus, Subset};

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationReport {
    #[serde(flatten)]
    pub row: MetricRow,
    pub seed: u64,
    pub ingest: IngestReport,
}

impl EvaluationReport {
    pub fn is_defined(&self) -> bool {
        self.row.status == RowStatus::Ok
    }
}

/// Fails on unreadable inputs and on models that miss a product of the
/// evaluated banners. An undefined metric is a report, not an error, so that
/// its rejection breakdown can still be printed.
pub fn run(
    log: &Path,
    model: &Path,
    metric: MetricKind,
    subset: Subset,
    seed: u64,
    resamples: u32,
) -> anyhow::Result<EvaluationReport> {
    let contents = load_log(log)?;
    let model = logio::read_model(model).context("reading model")?;
    let records = subset.filter(&contents.records);
    let result = EvaluationSet::new(&records).estimate(&model, metric, resamples, seed);
    if let Err(e) = &result {
        if !matches!(e, MetricError::Undefined(_)) {
            return Err(e.clone()).context(format!("evaluating {}", model.name()));
        }
    }
    let row = MetricRow::from_result(model.name(), metric, subset, records.len(), resamples, result);
    Ok(EvaluationReport { row, seed, ingest: contents.report })
}
