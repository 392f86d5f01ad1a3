//! `compare`: correlation between two metric columns of a sweep CSV.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use anyhow::bail;
use rankbias::stats;
use rankbias::MetricKind;
use serde::Serialize;

use crate::sweep::read_rows;
use crate::{MetricRow, RowStatus, Subset};

/// A column of a sweep, written `metric:subset`, for example `pd:shuffled`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnSpec {
    pub metric: MetricKind,
    pub subset: Subset,
}

impl FromStr for ColumnSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (metric, subset) =
            s.split_once(':').ok_or_else(|| format!("column {s:?} is not of the form metric:subset"))?;
        Ok(Self { metric: metric.parse()?, subset: subset.parse()? })
    }
}

impl fmt::Display for ColumnSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.metric, self.subset)
    }
}

impl Serialize for ColumnSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Point {
    pub model: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub x: ColumnSpec,
    pub y: ColumnSpec,
    pub pairs: usize,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Why the correlations are missing, if they are.
    pub error: Option<String>,
    pub points: Vec<Point>,
}

impl Comparison {
    pub fn is_defined(&self) -> bool {
        self.error.is_none()
    }
}

fn column(rows: &[MetricRow], spec: ColumnSpec) -> anyhow::Result<BTreeMap<&str, f64>> {
    let mut values = BTreeMap::new();
    for row in rows.iter().filter(|r| r.metric == spec.metric && r.subset == spec.subset) {
        if let (RowStatus::Ok, Some(v)) = (row.status, row.value) {
            if values.insert(row.model.as_str(), v).is_some() {
                bail!("model {:?} appears twice in column {spec}", row.model);
            }
        }
    }
    Ok(values)
}

/// Pairs the two columns by model name; models missing a defined value in
/// either column are skipped.
pub fn compare_rows(rows: &[MetricRow], x: ColumnSpec, y: ColumnSpec) -> anyhow::Result<Comparison> {
    let xs = column(rows, x)?;
    let ys = column(rows, y)?;
    let points: Vec<Point> = xs
        .iter()
        .filter_map(|(&model, &xv)| ys.get(model).map(|&yv| Point { model: model.to_owned(), x: xv, y: yv }))
        .collect();
    let xv: Vec<f64> = points.iter().map(|p| p.x).collect();
    let yv: Vec<f64> = points.iter().map(|p| p.y).collect();
    let (pearson, spearman, error) = match (stats::pearson(&xv, &yv), stats::spearman(&xv, &yv)) {
        (Ok(p), Ok(s)) => (Some(p), Some(s), None),
        (Err(e), _) | (_, Err(e)) => (None, None, Some(e.to_string())),
    };
    Ok(Comparison { x, y, pairs: points.len(), pearson, spearman, error, points })
}

pub fn run(csv: &Path, x: ColumnSpec, y: ColumnSpec) -> anyhow::Result<Comparison> {
    compare_rows(&read_rows(csv)?, x, y)
}
