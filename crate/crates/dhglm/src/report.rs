//! Output tables: aligned text for reading and CSV for machines.
//!
//! CSV headers are part of the file formats and are fixed by the `*_HEADER`
//! constants.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dhglm_core::amis::StageReport;
use dhglm_core::latent::MarginalGrid;
use dhglm_core::summary::Summary;
use serde::{Deserialize, Serialize};

use crate::io::fmt;

pub const SUMMARY_HEADER: [&str; 6] = ["parameter", "true_value", "mean", "sd", "lower_95", "upper_95"];
pub const COMPARISON_HEADER: [&str; 9] =
    ["parameter", "mean_a", "mean_b", "abs_diff", "sd_a", "sd_b", "sd_ratio", "tolerance", "pass"];
pub const ESS_HEADER: [&str; 6] = ["stage", "n_total", "ess", "log_ml_at_mean", "failures", "low_ess"];
pub const MARGINAL_HEADER: [&str; 2] = ["x", "density"];
pub const CURVE_HEADER: [&str; 2] = ["empirical_p", "cumulative_weight"];

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: expected header `{expected}`")]
    Header { path: PathBuf, expected: String },
    #[error("{path}: row {row}: `{value}` is not a number")]
    Number { path: PathBuf, row: usize, value: String },
}

/// One line of a posterior summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub truth: Option<f64>,
    pub summary: Summary,
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

/// Aligned table with the columns Parameter, True value, Mean, St. dev., 95% CI.
pub fn summary_text(title: &str, rows: &[ParameterRow]) -> String {
    let head = ["Parameter", "True value", "Mean", "St. dev.", "95% CI"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                r.truth.map_or_else(|| "-".into(), num),
                num(r.summary.mean),
                num(r.summary.sd),
                format!("({}, {})", num(r.summary.lower), num(r.summary.upper)),
            ]
        })
        .collect();
    let mut out = format!("{title}\n");
    out += &aligned(&head, &body);
    out
}

fn aligned<const N: usize>(head: &[&str; N], body: &[[String; N]]) -> String {
    let mut width = head.map(str::len);
    for r in body {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (k, (c, w)) in cells.iter().zip(width).enumerate() {
            if k == 0 {
                let _ = write!(s, "{c:<w$}");
            } else {
                let _ = write!(s, "  {c:>w$}");
            }
        }
        s.trim_end().to_owned() + "\n"
    };
    let mut out = line(head.to_vec());
    out += &"-".repeat(width.iter().sum::<usize>() + 2 * (N - 1));
    out.push('\n');
    for r in body {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_owned(), source })?;
    }
    csv::Writer::from_path(path).map_err(|source| ReportError::Csv { path: path.to_owned(), source })
}

/// Writes `header` and `rows` as CSV.
pub fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), ReportError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let err = |source| ReportError::Csv { path: path.to_owned(), source };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|source| ReportError::Io { path: path.to_owned(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| ReportError::Io { path: dir.to_owned(), source })?;
    }
    fs::write(path, text).map_err(|source| ReportError::Io { path: path.to_owned(), source })
}

pub fn write_summary_csv(path: &Path, rows: &[ParameterRow]) -> Result<(), ReportError> {
    write_csv(
        path,
        &SUMMARY_HEADER,
        rows.iter().map(|r| {
            let s = &r.summary;
            vec![r.name.clone(), r.truth.map_or_else(String::new, fmt), fmt(s.mean), fmt(s.sd), fmt(s.lower), fmt(s.upper)]
        }),
    )
}

/// Reads a table written by [`write_summary_csv`].
pub fn read_summary_csv(path: &Path) -> Result<Vec<ParameterRow>, ReportError> {
    let err = |source| ReportError::Csv { path: path.to_owned(), source };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(err)?;
    let header = r.headers().map_err(err)?.clone();
    if header.iter().ne(SUMMARY_HEADER) {
        return Err(ReportError::Header { path: path.to_owned(), expected: SUMMARY_HEADER.join(",") });
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(err)?;
        let parse = |i: usize| {
            let v = rec.get(i).unwrap_or("");
            v.parse::<f64>().map_err(|_| ReportError::Number { path: path.to_owned(), row: k + 2, value: v.to_owned() })
        };
        let truth = if rec.get(1).unwrap_or("").is_empty() { None } else { Some(parse(1)?) };
        rows.push(ParameterRow {
            name: rec.get(0).unwrap_or("").to_owned(),
            truth,
            summary: Summary { mean: parse(2)?, sd: parse(3)?, lower: parse(4)?, upper: parse(5)? },
        });
    }
    Ok(rows)
}

pub fn write_marginal_csv(path: &Path, grid: &MarginalGrid) -> Result<(), ReportError> {
    write_csv(path, &MARGINAL_HEADER, grid.x().iter().zip(grid.density()).map(|(x, d)| vec![fmt(*x), fmt(*d)]))
}

pub fn write_curve_csv(path: &Path, curve: &[(f64, f64)]) -> Result<(), ReportError> {
    write_csv(path, &CURVE_HEADER, curve.iter().map(|(p, c)| vec![fmt(*p), fmt(*c)]))
}

pub fn write_ess_csv(path: &Path, stages: &[StageReport]) -> Result<(), ReportError> {
    write_csv(
        path,
        &ESS_HEADER,
        stages.iter().map(|s| {
            vec![
                s.stage.to_string(),
                s.n_total.to_string(),
                fmt(s.ess),
                s.log_ml_at_mean.map_or_else(String::new, fmt),
                s.failures.to_string(),
                s.low_ess.to_string(),
            ]
        }),
    )
}

/// Reads a numeric CSV whose header must equal `header`; empty cells are NaN.
pub fn read_numeric_csv(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>, ReportError> {
    let err = |source| ReportError::Csv { path: path.to_owned(), source };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(err)?;
    if r.headers().map_err(err)?.iter().ne(header.iter().copied()) {
        return Err(ReportError::Header { path: path.to_owned(), expected: header.join(",") });
    }
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(err)?;
        let row = rec
            .iter()
            .map(|v| match v {
                "" => Ok(f64::NAN),
                "true" => Ok(1.0),
                "false" => Ok(0.0),
                _ => v.parse().map_err(|_| ReportError::Number { path: path.to_owned(), row: k + 2, value: v.to_owned() }),
            })
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Largest vertical distance between a weight curve and the diagonal.
pub fn curve_deviation(curve: &[(f64, f64)]) -> f64 {
    curve.iter().map(|(p, c)| (c - p).abs()).fold(0.0, f64::max)
}

/// File-name-safe form of a parameter name: `log_tau[3]` becomes `log_tau_3`.
pub fn file_stem(name: &str) -> String {
    let mut s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
    while s.ends_with('_') {
        s.pop();
    }
    s
}
