//! On-disk artifacts: a line-delimited record stream and CSV tables.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::RoundRecord;

use super::analysis::{ErrorAnalysisRow, ReferenceCurvePoint, SummaryRow, TrendFit};
use super::{AgentFailure, ExperimentResult};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PLOT_FILE: &str = "plot.csv";
pub const TRENDS_FILE: &str = "trends.csv";
pub const FAILURES_FILE: &str = "failures.jsonl";

/// Flat row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCsvRow {
    pub language_id: String,
    pub structure: f64,
    pub bin: usize,
    pub round: usize,
    pub agents: usize,
    pub production_similarity_mean: f64,
    pub production_similarity_ci_low: f64,
    pub production_similarity_ci_high: f64,
    pub generalization_score_mean: f64,
    pub generalization_score_ci_low: f64,
    pub generalization_score_ci_high: f64,
    pub guessing_accuracy_mean: f64,
    pub guessing_accuracy_ci_low: f64,
    pub guessing_accuracy_ci_high: f64,
    pub convergence: Option<f64>,
}

impl From<&SummaryRow> for SummaryCsvRow {
    fn from(r: &SummaryRow) -> Self {
        SummaryCsvRow {
            language_id: r.language_id.clone(),
            structure: r.structure,
            bin: r.bin,
            round: r.round,
            agents: r.agents,
            production_similarity_mean: r.production_similarity.mean,
            production_similarity_ci_low: r.production_similarity.ci_low,
            production_similarity_ci_high: r.production_similarity.ci_high,
            generalization_score_mean: r.generalization_score.mean,
            generalization_score_ci_low: r.generalization_score.ci_low,
            generalization_score_ci_high: r.generalization_score.ci_high,
            guessing_accuracy_mean: r.guessing_accuracy.mean,
            guessing_accuracy_ci_low: r.guessing_accuracy.ci_low,
            guessing_accuracy_ci_high: r.guessing_accuracy.ci_high,
            convergence: r.convergence,
        }
    }
}

/// Long-format row of `plot.csv`; convergence rows carry no interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub language_id: String,
    pub bin: usize,
    pub round: usize,
    pub measure: String,
    pub mean: f64,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

pub fn plot_rows(summary: &[SummaryRow]) -> Vec<PlotRow> {
    let mut out = Vec::with_capacity(summary.len() * 4);
    for r in summary {
        for (name, e) in [
            ("production_similarity", &r.production_similarity),
            ("generalization_score", &r.generalization_score),
            ("guessing_accuracy", &r.guessing_accuracy),
        ] {
            out.push(PlotRow {
                language_id: r.language_id.clone(),
                bin: r.bin,
                round: r.round,
                measure: name.to_string(),
                mean: e.mean,
                ci_low: Some(e.ci_low),
                ci_high: Some(e.ci_high),
            });
        }
        if let Some(c) = r.convergence {
            out.push(PlotRow {
                language_id: r.language_id.clone(),
                bin: r.bin,
                round: r.round,
                measure: "convergence".to_string(),
                mean: c,
                ci_low: None,
                ci_high: None,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCsvRow {
    pub measure: String,
    pub term: String,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub observations: usize,
    pub clusters: usize,
}

pub fn trend_rows(trends: &[TrendFit]) -> Vec<TrendCsvRow> {
    let mut out = Vec::new();
    for t in trends {
        let terms = [
            ("intercept", t.intercept, t.intercept_ci),
            ("structure", t.structure, t.structure_ci),
            ("log_round", t.log_round, t.log_round_ci),
            ("structure:log_round", t.interaction, t.interaction_ci),
        ];
        for (term, estimate, (ci_low, ci_high)) in terms {
            out.push(TrendCsvRow {
                measure: t.measure.name().into(),
                term: term.into(),
                estimate,
                ci_low,
                ci_high,
                observations: t.observations,
                clusters: t.clusters,
            });
        }
    }
    out
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_records(records: &[RoundRecord], path: &Path) -> Result<()> {
    write_jsonl(records, path)
}

pub fn read_records(path: &Path) -> Result<Vec<RoundRecord>> {
    read_jsonl(path)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub fn write_summary(summary: &[SummaryRow], path: &Path) -> Result<()> {
    let rows: Vec<SummaryCsvRow> = summary.iter().map(SummaryCsvRow::from).collect();
    write_csv(&rows, path)
}

pub fn write_error_analysis(rows: &[ErrorAnalysisRow], path: &Path) -> Result<()> {
    write_csv(rows, path)
}

pub fn write_reference_curves(rows: &[ReferenceCurvePoint], path: &Path) -> Result<()> {
    write_csv(rows, path)
}

/// Writes the record stream, summary, plot table, trends and failures into `dir`.
pub fn write_all(result: &ExperimentResult, dir: &Path) -> Result<()> {
    write_records(&result.records, &dir.join(RECORDS_FILE))?;
    write_analysis(&result.summary, &result.trends, dir)?;
    write_jsonl::<AgentFailure>(&result.failures, &dir.join(FAILURES_FILE))
}

pub fn write_analysis(summary: &[SummaryRow], trends: &[TrendFit], dir: &Path) -> Result<()> {
    write_summary(summary, &dir.join(SUMMARY_FILE))?;
    write_csv(&plot_rows(summary), &dir.join(PLOT_FILE))?;
    write_csv(&trend_rows(trends), &dir.join(TRENDS_FILE))
}
