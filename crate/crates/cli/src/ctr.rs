//! `ctr-by-rank`: click-through rate per banner size and rank.

use std::path::Path;

use anyhow::Context;
use rankbias::logio::IngestReport;
use rankbias::sim::{self, CtrRow};

use crate::{load_log, write_csv, Subset};

/// Column names, also written when there is no row.
const HEADER: &str = "banner_size,rank,impressions,clicks,ctr";

pub fn run(log: &Path, subset: Subset, out: &Path) -> anyhow::Result<(Vec<CtrRow>, IngestReport)> {
    let contents = load_log(log)?;
    let rows = sim::ctr_by_rank(contents.records.iter().filter(|r| subset.contains(r)));
    if rows.is_empty() {
        std::fs::write(out, format!("{HEADER}\n")).with_context(|| format!("writing {}", out.display()))?;
    } else {
        write_csv(out, &rows)?;
    }
    Ok((rows, contents.report))
}
