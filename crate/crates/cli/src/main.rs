use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rankbias::logio::IngestReport;
use rankbias::MetricKind;
use rankbias_cli::compare::ColumnSpec;
use rankbias_cli::sweep::SweepOptions;
use rankbias_cli::{compare, ctr, evaluate, oracle, simulate, sweep, to_json, write_csv, Subset};

/// Position-bias-robust offline evaluation of ranking models.
#[derive(Debug, Parser)]
#[command(name = "rankbias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a log, its ground truth and a zoo of scoring models.
    Simulate {
        /// Simulator config (TOML, or JSON with a .json extension).
        #[arg(long)]
        config: PathBuf,
        /// Log file to write.
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth file [default: <out stem>.truth.json].
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Directory for the zoo's model files [default: <out stem>-models].
        #[arg(long)]
        models_dir: Option<PathBuf>,
    },
    /// Estimate one metric for one model.
    Evaluate {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// pd, cd or cd-exact.
        #[arg(long)]
        metric: MetricKind,
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative draws per banner for pd and cd.
        #[arg(long, default_value_t = 1)]
        resamples: u32,
    },
    /// Evaluate every model of a directory and write one CSV row per
    /// (model, metric, subset).
    Sweep {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        models_dir: PathBuf,
        /// Comma-separated metrics.
        #[arg(long, value_delimiter = ',', default_value = "pd,cd")]
        metrics: Vec<MetricKind>,
        /// Comma-separated subsets.
        #[arg(long, value_delimiter = ',', value_enum, default_value = "shuffled,non-shuffled")]
        subsets: Vec<Subset>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        resamples: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Correlate two columns of a sweep CSV, written metric:subset.
    Compare {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        x: ColumnSpec,
        #[arg(long)]
        y: ColumnSpec,
    },
    /// Check the placement dynamic program against brute-force enumeration.
    Oracle {
        #[arg(long, default_value_t = 8)]
        max_n: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Click-through rate per banner size and rank.
    CtrByRank {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        #[arg(long)]
        out: PathBuf,
    },
}

fn warn_rejected(report: &IngestReport) {
    if report.total_rejected() > 0 {
        let reasons: Vec<String> = report.rejected.iter().map(|(d, n)| format!("{d}: {n}")).collect();
        eprintln!("warning: skipped {} invalid records ({})", report.total_rejected(), reasons.join(", "));
    }
}

fn print(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes()).context("writing to stdout")
}

/// `Ok(false)` when the command ran but its contract was not met.
fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Simulate { config, out, truth, models_dir } => {
            let report = simulate::run(&config, &out, truth.as_deref(), models_dir.as_deref())?;
            print(&to_json(&report)?)?;
            Ok(true)
        }
        Command::Evaluate { log, model, metric, subset, seed, resamples } => {
            let report = evaluate::run(&log, &model, metric, subset, seed, resamples)?;
            warn_rejected(&report.ingest);
            print(&to_json(&report)?)?;
            if !report.is_defined() {
                eprintln!("error: {}", report.row.error);
            }
            Ok(report.is_defined())
        }
        Command::Sweep { log, models_dir, metrics, subsets, seed, resamples, out } => {
            let options = SweepOptions { metrics, subsets, seed, resamples };
            let output = sweep::run(&log, &models_dir, &options)?;
            warn_rejected(&output.ingest);
            for row in output.failures() {
                eprintln!("warning: {} {} {}: {}", row.model, row.metric, row.subset, row.error);
            }
            write_csv(&out, &output.rows)?;
            Ok(true)
        }
        Command::Compare { csv, x, y } => {
            let comparison = compare::run(&csv, x, y)?;
            print(&to_json(&comparison)?)?;
            if let Some(error) = &comparison.error {
                eprintln!("error: correlation undefined: {error}");
            }
            Ok(comparison.is_defined())
        }
        Command::Oracle { max_n, trials, seed } => {
            let report = oracle::run(max_n, trials, seed)?;
            print(&to_json(&report)?)?;
            if !report.passed {
                eprintln!(
                    "error: worst deviation {:e} exceeds tolerance {:e}",
                    report.worst_deviation, report.tolerance
                );
            }
            Ok(report.passed)
        }
        Command::CtrByRank { log, subset, out } => {
            let (_, ingest) = ctr::run(&log, subset, &out)?;
            warn_rejected(&ingest);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
