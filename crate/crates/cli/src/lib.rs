//! Library side of the `rankbias` command-line tool.
//!
//! Each command is a plain function returning a serializable report, so the
//! binary only parses arguments, prints and picks an exit status.

pub mod compare;
pub mod ctr;
pub mod evaluate;
pub mod oracle;
pub mod simulate;
pub mod sweep;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::Context;
use rankbias::logio::{self, LogContents};
use rankbias::metrics::{MetricError, SampleCounts};
use rankbias::{BannerRecord, MetricEstimate, MetricKind};
use serde::{Deserialize, Serialize};

/// Which banners of a log a command looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    Shuffled,
    NonShuffled,
    All,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Shuffled => "shuffled",
            Subset::NonShuffled => "non-shuffled",
            Subset::All => "all",
        }
    }

    pub fn contains(self, record: &BannerRecord) -> bool {
        match self {
            Subset::Shuffled => record.shuffled,
            Subset::NonShuffled => !record.shuffled,
            Subset::All => true,
        }
    }

    pub fn filter(self, records: &[BannerRecord]) -> Vec<BannerRecord> {
        records.iter().filter(|r| self.contains(r)).cloned().collect()
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shuffled" => Ok(Subset::Shuffled),
            "non-shuffled" | "non_shuffled" => Ok(Subset::NonShuffled),
            "all" => Ok(Subset::All),
            other => Err(format!("unknown subset {other:?}, expected shuffled, non-shuffled or all")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowStatus {
    Ok,
    /// No accepted sample, so the metric has no value.
    Undefined,
    Error,
}

/// One metric value for one model on one subset of a log. Shared by
/// `evaluate` (as JSON) and `sweep` (as a CSV row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub metric: MetricKind,
    pub subset: Subset,
    pub status: RowStatus,
    pub value: Option<f64>,
    pub std_error: Option<f64>,
    pub accepted: u64,
    pub rejected_no_pair: u64,
    pub rejected_same_product: u64,
    pub rejected_tied_score: u64,
    /// Rejected share among samples that had a pair to compare.
    pub rejection_rate: Option<f64>,
    pub banners: u64,
    pub resamples: u32,
    /// Failure message for `undefined` and `error` rows, empty otherwise.
    pub error: String,
}

fn rejection_rate(counts: &SampleCounts) -> Option<f64> {
    let rejected = counts.rejected_same_product + counts.rejected_tied_score;
    let with_pair = counts.accepted + rejected;
    (with_pair > 0).then(|| rejected as f64 / with_pair as f64)
}

impl MetricRow {
    pub fn from_result(
        model: &str,
        metric: MetricKind,
        subset: Subset,
        banners: usize,
        resamples: u32,
        result: Result<MetricEstimate, MetricError>,
    ) -> Self {
        let mut row = MetricRow {
            model: model.to_owned(),
            metric,
            subset,
            status: RowStatus::Ok,
            value: None,
            std_error: None,
            accepted: 0,
            rejected_no_pair: 0,
            rejected_same_product: 0,
            rejected_tied_score: 0,
            rejection_rate: None,
            banners: banners as u64,
            resamples: if metric == MetricKind::CdExact { 1 } else { resamples },
            error: String::new(),
        };
        match result {
            Ok(estimate) => {
                row.value = Some(estimate.value);
                row.std_error = Some(estimate.std_error);
                row.set_counts(&estimate.counts());
            }
            Err(MetricError::Undefined(counts)) => {
                row.status = RowStatus::Undefined;
                row.set_counts(&counts);
                row.error = MetricError::Undefined(counts).to_string();
            }
            Err(e) => {
                row.status = RowStatus::Error;
                row.error = e.to_string();
            }
        }
        row
    }

    /// Row for a model that could not be loaded at all.
    pub fn failed(model: &str, metric: MetricKind, subset: Subset, error: String) -> Self {
        let mut row = Self::from_result(model, metric, subset, 0, 1, Err(MetricError::ZeroResamples));
        row.error = error;
        row
    }

    fn set_counts(&mut self, counts: &SampleCounts) {
        self.accepted = counts.accepted;
        self.rejected_no_pair = counts.rejected_no_pair;
        self.rejected_same_product = counts.rejected_same_product;
        self.rejected_tied_score = counts.rejected_tied_score;
        self.rejection_rate = rejection_rate(counts);
    }
}

/// Reads a log, failing on unreadable files but not on rejected records,
/// which are counted in the returned report.
pub fn load_log(path: &Path) -> anyhow::Result<LogContents> {
    logio::read_logs(path).with_context(|| format!("reading log {}", path.display()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Pretty JSON followed by a newline.
pub fn to_json<T: Serialize>(value: &T) -> anyhow::Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}
