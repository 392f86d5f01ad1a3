//! Log and model file formats.
//!
//! Logs are UTF-8, one JSON object per line. The first line is a header; every
//! following line is one banner:
//!
//! ```text
//! {"format":"rankbias-log","version":1,"generator":"rankbias simulate","seed":7,"config":{...}}
//! {"banner_id":"b0000000","displayed":[["p0042",3.5],["p0007",1.25]],"total_candidate_score":20.5,"clicked_rank":2,"shuffled":false}
//! ```
//!
//! `clicked_rank` is a 1-based rank or `null`. Readers also accept an array of
//! ranks so that multi-click impressions can be counted and rejected rather
//! than failing the whole line.
//!
//! Model files are text, one `<product-id><TAB><score>` line per product:
//!
//! ```text
//! # rankbias-model 1
//! # name: oracle
//! p0000    0.731
//! p0001    -1.5e-3
//! ```
//!
//! See `docs/formats.md` for the full description.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{BannerRecord, DisplayedProduct, ModelError, RecordDefect, ScoringModel};

pub const LOG_FORMAT: &str = "rankbias-log";
pub const LOG_VERSION: u32 = 1;
pub const MODEL_MAGIC: &str = "# rankbias-model 1";
const MODEL_NAME_PREFIX: &str = "# name: ";
pub const MODEL_EXTENSION: &str = "model";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{}: line {line}: {source}", path.display())]
    Io { path: PathBuf, line: u64, source: io::Error },
    #[error("{}: missing header line", path.display())]
    MissingHeader { path: PathBuf },
    #[error("{}: unreadable header: {reason}", path.display())]
    BadHeader { path: PathBuf, reason: String },
    #[error("{}: unsupported log format {format:?} version {version}", path.display())]
    UnsupportedVersion { path: PathBuf, format: String, version: u32 },
    #[error("{}: record {banner_id:?} is invalid: {defect}", path.display())]
    InvalidRecord { path: PathBuf, banner_id: String, defect: RecordDefect },
    #[error("{}: line {line}: {reason}", path.display())]
    ModelSyntax { path: PathBuf, line: u64, reason: String },
    #[error("{}: {source}", path.display())]
    Model { path: PathBuf, source: ModelError },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_error(path: &Path, line: u64) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.to_owned(), line, source }
}

/// First line of a log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub generator: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Free-form generator configuration, echoed for provenance.
    #[serde(default)]
    pub config: serde_json::Value,
}

impl LogHeader {
    pub fn new(generator: impl Into<String>) -> Self {
        Self {
            format: LOG_FORMAT.to_owned(),
            version: LOG_VERSION,
            generator: generator.into(),
            seed: None,
            config: serde_json::Value::Null,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum ClickField {
    One(u64),
    Many(Vec<u64>),
}

#[derive(Debug, Serialize, Deserialize)]
struct WireRecord {
    banner_id: String,
    displayed: Vec<(String, f64)>,
    total_candidate_score: f64,
    clicked_rank: Option<ClickField>,
    shuffled: bool,
}

impl From<&BannerRecord> for WireRecord {
    fn from(r: &BannerRecord) -> Self {
        Self {
            banner_id: r.banner_id.clone(),
            displayed: r.displayed.iter().map(|p| (p.product_id.clone(), p.logging_score)).collect(),
            total_candidate_score: r.total_candidate_score,
            clicked_rank: r.clicked_rank.map(|c| ClickField::One(c as u64)),
            shuffled: r.shuffled,
        }
    }
}

impl TryFrom<WireRecord> for BannerRecord {
    type Error = RecordDefect;

    fn try_from(w: WireRecord) -> Result<Self, RecordDefect> {
        let clicked_rank = match w.clicked_rank {
            None => None,
            Some(ClickField::One(r)) => Some(r),
            Some(ClickField::Many(ranks)) => match ranks[..] {
                [] => None,
                [r] => Some(r),
                _ => return Err(RecordDefect::MultipleClicks),
            },
        };
        let clicked_rank =
            clicked_rank.map(|r| usize::try_from(r).map_err(|_| RecordDefect::ClickedRankOutOfRange)).transpose()?;
        let record = BannerRecord {
            banner_id: w.banner_id,
            displayed: w.displayed.into_iter().map(|(id, s)| DisplayedProduct::new(id, s)).collect(),
            total_candidate_score: w.total_candidate_score,
            clicked_rank,
            shuffled: w.shuffled,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Per-reason counts of records rejected at ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: u64,
    pub rejected: BTreeMap<RecordDefect, u64>,
}

impl IngestReport {
    pub fn total_rejected(&self) -> u64 {
        self.rejected.values().sum()
    }

    pub fn rejected_for(&self, defect: RecordDefect) -> u64 {
        self.rejected.get(&defect).copied().unwrap_or(0)
    }
}

/// Streams valid records from a log, counting and skipping invalid lines.
pub struct LogReader<R> {
    input: R,
    path: PathBuf,
    line: u64,
    header: LogHeader,
    report: IngestReport,
    buf: String,
}

impl LogReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(io_error(path, 0))?;
        Self::new(BufReader::new(file), path)
    }
}

impl<R: BufRead> LogReader<R> {
    /// Reads and checks the header. `path` is only used in error messages.
    pub fn new(mut input: R, path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let path = path.into();
        let mut buf = String::new();
        if input.read_line(&mut buf).map_err(io_error(&path, 1))? == 0 {
            return Err(LogError::MissingHeader { path });
        }
        let header: LogHeader = serde_json::from_str(buf.trim_end())
            .map_err(|e| LogError::BadHeader { path: path.clone(), reason: e.to_string() })?;
        if header.format != LOG_FORMAT || header.version != LOG_VERSION {
            return Err(LogError::UnsupportedVersion { path, format: header.format, version: header.version });
        }
        Ok(Self { input, path, line: 1, header, report: IngestReport::default(), buf })
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    /// Counts so far; complete once the iterator is exhausted.
    pub fn report(&self) -> &IngestReport {
        &self.report
    }
}

impl<R: BufRead> Iterator for LogReader<R> {
    type Item = Result<BannerRecord, LogError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            self.line += 1;
            match self.input.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(io_error(&self.path, self.line)(e))),
            }
            let text = self.buf.trim_end_matches(['\n', '\r']);
            if text.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<WireRecord>(text)
                .map_err(|_| RecordDefect::Malformed)
                .and_then(BannerRecord::try_from);
            match parsed {
                Ok(record) => {
                    self.report.accepted += 1;
                    return Some(Ok(record));
                }
                Err(defect) => *self.report.rejected.entry(defect).or_insert(0) += 1,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogContents {
    pub header: LogHeader,
    pub records: Vec<BannerRecord>,
    pub report: IngestReport,
}

/// Reads every valid record of a log file, in file order.
pub fn read_logs(path: impl AsRef<Path>) -> Result<LogContents, LogError> {
    let mut reader = LogReader::open(path)?;
    let records = reader.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok(LogContents { header: reader.header.clone(), records, report: reader.report.clone() })
}

/// Writes a header followed by one line per record.
pub struct LogWriter<W: Write> {
    out: W,
    path: PathBuf,
    line: u64,
}

impl LogWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, header: &LogHeader) -> Result<Self, LogError> {
        let path = path.as_ref();
        let file = File::create(path).map_err(io_error(path, 0))?;
        Self::new(BufWriter::new(file), path, header)
    }
}

impl<W: Write> LogWriter<W> {
    pub fn new(out: W, path: impl Into<PathBuf>, header: &LogHeader) -> Result<Self, LogError> {
        let mut writer = Self { out, path: path.into(), line: 0 };
        writer.write_line(header)?;
        Ok(writer)
    }

    fn write_line<T: Serialize>(&mut self, value: &T) -> Result<(), LogError> {
        self.line += 1;
        let mut text =
            serde_json::to_string(value).map_err(|source| LogError::Json { path: self.path.clone(), source })?;
        text.push('\n');
        self.out.write_all(text.as_bytes()).map_err(io_error(&self.path, self.line))
    }

    pub fn write_record(&mut self, record: &BannerRecord) -> Result<(), LogError> {
        record.validate().map_err(|defect| LogError::InvalidRecord {
            path: self.path.clone(),
            banner_id: record.banner_id.clone(),
            defect,
        })?;
        self.write_line(&WireRecord::from(record))
    }

    /// Flushes and returns the underlying writer.
    pub fn finish(mut self) -> Result<W, LogError> {
        self.out.flush().map_err(io_error(&self.path, self.line))?;
        Ok(self.out)
    }
}

pub fn write_logs<'a>(
    path: impl AsRef<Path>,
    header: &LogHeader,
    records: impl IntoIterator<Item = &'a BannerRecord>,
) -> Result<(), LogError> {
    let mut writer = LogWriter::create(path, header)?;
    for record in records {
        writer.write_record(record)?;
    }
    writer.finish().map(drop)
}

/// Serializes a model in the tab-separated model format, entries sorted by id.
pub fn format_model(model: &ScoringModel) -> String {
    let mut out = format!("{MODEL_MAGIC}\n{MODEL_NAME_PREFIX}{}\n", model.name());
    for (id, score) in model.sorted_entries() {
        out.push_str(&format!("{id}\t{score:?}\n"));
    }
    out
}

pub fn write_model(path: impl AsRef<Path>, model: &ScoringModel) -> Result<(), LogError> {
    let path = path.as_ref();
    std::fs::write(path, format_model(model)).map_err(io_error(path, 0))
}

pub fn parse_model(text: &str, path: impl Into<PathBuf>) -> Result<ScoringModel, LogError> {
    let path = path.into();
    let syntax = |line: usize, reason: &str| LogError::ModelSyntax {
        path: path.clone(),
        line: line as u64,
        reason: reason.to_owned(),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(MODEL_MAGIC) {
        return Err(syntax(1, "expected model header `# rankbias-model 1`"));
    }
    let name = lines
        .next()
        .and_then(|l| l.strip_prefix(MODEL_NAME_PREFIX))
        .ok_or_else(|| syntax(2, "expected `# name: <model name>`"))?
        .trim()
        .to_owned();
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let number = i + 3;
        if line.trim().is_empty() {
            continue;
        }
        let (id, score) = line.split_once('\t').ok_or_else(|| syntax(number, "expected `<product-id>\\t<score>`"))?;
        let score: f64 = score.trim().parse().map_err(|_| syntax(number, &format!("invalid score {score:?}")))?;
        entries.push((id.to_owned(), score));
    }
    ScoringModel::new(name, entries).map_err(|source| LogError::Model { path, source })
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ScoringModel, LogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_error(path, 0))?;
    parse_model(&text, path)
}

/// `*.model` files of a directory, sorted by file name.
pub fn model_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, LogError> {
    let dir = dir.as_ref();
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_error(dir, 0))? {
        let path = entry.map_err(io_error(dir, 0))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == MODEL_EXTENSION) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Pretty-printed JSON document, used for ground truth and configs.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<(), LogError> {
    let path = path.as_ref();
    let mut text =
        serde_json::to_string_pretty(value).map_err(|source| LogError::Json { path: path.to_owned(), source })?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_error(path, 0))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T, LogError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(io_error(path, 0))?;
    serde_json::from_str(&text).map_err(|source| LogError::Json { path: path.to_owned(), source })
}
