//! CSV and JSON reports with a fixed column order and four-decimal numbers.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalResult, GainRow};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::UnknownFormat(other.into())),
        }
    }
}

/// Report schemas: `eval` (seed, accuracy), `summary` (variant, mean, std,
/// n_seeds) and `gain` (class, R_t, R_IC, gain).
#[derive(Clone, Copy, Debug)]
pub enum Report<'a> {
    Eval(&'a EvalResult),
    Summary(&'a [SummaryRow]),
    Gain(&'a [GainRow]),
}

enum Cell {
    Int(u64),
    Num(f64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format!("{v:.4}"),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) if v.is_finite() => format!("{v:.4}"),
            Cell::Num(_) => "null".into(),
            Cell::Text(s) => serde_json::Value::String(s.clone()).to_string(),
        }
    }
}

impl Report<'_> {
    fn table(&self) -> (&'static [&'static str], Vec<Vec<Cell>>) {
        match self {
            Report::Eval(r) => {
                (&["seed", "accuracy"], r.seeds.iter().zip(&r.accuracies).map(|(&s, &a)| vec![Cell::Int(s), Cell::Num(a)]).collect())
            }
            Report::Summary(rows) => (
                &["variant", "mean", "std", "n_seeds"],
                rows.iter()
                    .map(|r| vec![Cell::Text(r.variant.clone()), Cell::Num(r.mean), Cell::Num(r.std), Cell::Int(r.n_seeds as u64)])
                    .collect(),
            ),
            Report::Gain(rows) => (
                &["class", "R_t", "R_IC", "gain"],
                rows.iter().map(|r| vec![Cell::Int(r.class as u64), Cell::Num(r.r_t), Cell::Num(r.r_ic), Cell::Num(r.gain)]).collect(),
            ),
        }
    }
}

/// Renders `report` as text.
pub fn render_report(report: &Report, format: ReportFormat) -> Result<String> {
    let (header, rows) = report.table();
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.iter().map(Cell::csv))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
            out = String::from_utf8(bytes).expect("csv of utf-8 cells");
        }
        ReportFormat::Json => {
            out.push('[');
            for (i, row) in rows.iter().enumerate() {
                out.push_str(if i == 0 { "\n  {" } else { ",\n  {" });
                for (j, (name, cell)) in header.iter().zip(row).enumerate() {
                    let sep = if j == 0 { "" } else { ", " };
                    write!(out, "{sep}\"{name}\": {}", cell.json()).expect("string write");
                }
                out.push('}');
            }
            out.push_str(if rows.is_empty() { "]\n" } else { "\n]\n" });
        }
    }
    Ok(out)
}

pub fn emit_report(report: &Report, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_report(report, format)?).map_err(|e| Error::io(path, e))
}
