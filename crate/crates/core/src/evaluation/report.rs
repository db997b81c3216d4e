use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentReport, FoldRow, SweepReport, MACRO_AVERAGE_CONVENTION};
use crate::error::{Error, Result};

/// One line of `report.csv`. Numbers are pre-formatted so the file is
/// byte-stable across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub base_rate: String,
    pub strategy: String,
    pub mode: String,
    /// Fold number, or `mean` for the aggregate row.
    pub fold: String,
    pub precision: String,
    pub recall: String,
    pub f1: String,
    pub docs_scored: String,
    pub docs_excluded: String,
    pub train_chunks: String,
    pub train_positive_chunks: String,
    pub test_chunks: String,
    pub tagged_chunks: String,
    pub predicted_starts: String,
    pub gold_starts: String,
}

#[derive(Serialize)]
struct TimingRow<'a> {
    base_rate: &'a str,
    strategy: &'a str,
    mode: &'a str,
    fold: &'a str,
    sampling_seconds: String,
    crf_train_seconds: String,
    training_seconds: String,
    retrieval_train_seconds: String,
    inference_seconds: String,
}

fn fixed(x: f64) -> String {
    format!("{x:.6}")
}

fn count(x: f64) -> String {
    if x.fract() == 0.0 {
        format!("{x:.0}")
    } else {
        format!("{x:.3}")
    }
}

fn fold_label(row: &FoldRow) -> String {
    row.fold.map(|f| f.to_string()).unwrap_or_else(|| "mean".into())
}

fn report_rows(base_rate: f64, report: &ExperimentReport) -> Vec<(ReportRow, &FoldRow)> {
    report
        .rows
        .iter()
        .chain(&report.aggregates)
        .map(|r| {
            let m = &r.metrics;
            let row = ReportRow {
                base_rate: fixed(base_rate),
                strategy: r.strategy.clone(),
                mode: r.mode.to_string(),
                fold: fold_label(r),
                precision: fixed(m.precision),
                recall: fixed(m.recall),
                f1: fixed(m.f1),
                docs_scored: count(m.docs_scored),
                docs_excluded: count(m.docs_excluded),
                train_chunks: count(m.train_chunks),
                train_positive_chunks: count(m.train_positive_chunks),
                test_chunks: count(m.test_chunks),
                tagged_chunks: count(m.tagged_chunks),
                predicted_starts: count(m.predicted_starts),
                gold_starts: count(m.gold_starts),
            };
            (row, r)
        })
        .collect()
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes fold and mean rows, preceded by a `#` line stating the averaging
/// convention. Timings are kept out of this file so it is deterministic.
pub fn write_report_csv(path: impl AsRef<Path>, blocks: &[(f64, &ExperimentReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(file, "# {MACRO_AVERAGE_CONVENTION}").map_err(|e| Error::io(path, e))?;
    let mut out = csv::Writer::from_writer(file);
    for (rate, report) in blocks {
        for (row, _) in report_rows(*rate, report) {
            out.serialize(row).map_err(csv_error(path))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_timings_csv(path: impl AsRef<Path>, blocks: &[(f64, &ExperimentReport)]) -> Result<()> {
    let path = path.as_ref();
    let mut out = csv::Writer::from_path(path).map_err(csv_error(path))?;
    for (rate, report) in blocks {
        for (row, r) in report_rows(*rate, report) {
            let t = &r.timings;
            out.serialize(TimingRow {
                base_rate: &row.base_rate,
                strategy: &row.strategy,
                mode: &row.mode,
                fold: &row.fold,
                sampling_seconds: fixed(t.sampling_seconds),
                crf_train_seconds: fixed(t.crf_train_seconds),
                training_seconds: fixed(t.training_seconds()),
                retrieval_train_seconds: fixed(t.retrieval_train_seconds),
                inference_seconds: fixed(t.inference_seconds),
            })
            .map_err(csv_error(path))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_error(path))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<ReportRow>, _>>()
        .map_err(csv_error(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    serde_json::to_writer(file, value)?;
    Ok(())
}

/// `report.csv`, `timings.csv` and `report.json` (full trace) under `dir`.
pub fn write_experiment(dir: impl AsRef<Path>, report: &ExperimentReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blocks = [(report.base_rate, report)];
    write_report_csv(dir.join("report.csv"), &blocks)?;
    write_timings_csv(dir.join("timings.csv"), &blocks)?;
    write_json(&dir.join("report.json"), report)
}

/// Like [`write_experiment`] with one block per rate, plus `sweep.csv`
/// holding the gap statistic per rate.
pub fn write_sweep(dir: impl AsRef<Path>, sweep: &SweepReport) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blocks: Vec<(f64, &ExperimentReport)> = sweep.blocks.iter().map(|b| (b.target_rate, &b.report)).collect();
    write_report_csv(dir.join("report.csv"), &blocks)?;
    write_timings_csv(dir.join("timings.csv"), &blocks)?;

    let path = dir.join("sweep.csv");
    let mut out = csv::Writer::from_path(&path).map_err(csv_error(&path))?;
    out.write_record(["target_rate", "realized_rate", "documents", "delta"])
        .map_err(csv_error(&path))?;
    for b in &sweep.blocks {
        out.write_record([
            fixed(b.target_rate),
            fixed(b.realized_rate),
            b.documents.to_string(),
            b.delta.map(fixed).unwrap_or_default(),
        ])
        .map_err(csv_error(&path))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    write_json(&dir.join("report.json"), sweep)
}
