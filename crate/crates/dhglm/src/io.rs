//! CSV ingestion and export of datasets.
//!
//! Data files have one header row. Group labels may be any text; they are
//! remapped to dense indices in order of first appearance. Neighbourhood
//! matrices are dense square 0/1 tables without a header.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use dhglm_core::linalg::SymMatrix;
use dhglm_core::model::{row_standardize, spatial_lag, Name, SpatialError};
use dhglm_core::sim::{dense_groups, Dataset, Provenance};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: no column named `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}, column `{column}`: `{value}` is not a number")]
    NonNumeric { path: PathBuf, row: usize, column: String, value: String },
    #[error("{path}: the file has no data rows")]
    Empty { path: PathBuf },
    #[error("{path}: neighbourhood matrix is not square ({rows} rows, row {row} has {cols} entries)")]
    NotSquare { path: PathBuf, rows: usize, row: usize, cols: usize },
    #[error("{path}: neighbourhood matrix has {found} regions but the data have {expected}")]
    RegionCount { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Spatial { path: PathBuf, source: SpatialError },
}

/// A covariate column: where it is in the file and what the model calls it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub source: String,
    pub name: String,
}

/// Which file columns make up a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub response: String,
    #[serde(default)]
    pub covariates: Vec<ColumnMap>,
    #[serde(default)]
    pub group: Option<String>,
    /// Multiplies the response.
    #[serde(default = "unit")]
    pub rescale: f64,
}

fn unit() -> f64 {
    1.0
}

/// Default response rescale for the sleep-study layout (milliseconds to seconds).
pub const SLEEP_RESCALE: f64 = 1.0 / 1000.0;

impl CsvSchema {
    /// `Reaction`, `Days`, `Subject`, response divided by 1000.
    pub fn sleep() -> Self {
        Self {
            response: "Reaction".into(),
            covariates: vec![ColumnMap { source: "Days".into(), name: "day".into() }],
            group: Some("Subject".into()),
            rescale: SLEEP_RESCALE,
        }
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv { path: path.to_owned(), source }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_owned(), source }
}

pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, IoError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    ingest_reader(file, path, schema)
}

/// Reads a dataset from any reader; `path` is used in messages and provenance.
pub fn ingest_reader<R: Read>(reader: R, path: &Path, schema: &CsvSchema) -> Result<Dataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    if headers.is_empty() {
        return Err(IoError::Empty { path: path.to_owned() });
    }
    let find = |c: &str| {
        headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| IoError::MissingColumn { path: path.to_owned(), column: c.to_owned() })
    };
    let y_col = find(&schema.response)?;
    let x_cols = schema.covariates.iter().map(|c| find(&c.source)).collect::<Result<Vec<_>, _>>()?;
    let g_col = schema.group.as_deref().map(find).transpose()?;

    let mut y = Vec::new();
    let mut xs = vec![Vec::new(); x_cols.len()];
    let mut labels = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = k + 2;
        let num = |col: usize| {
            let v = rec.get(col).unwrap_or("");
            v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| IoError::NonNumeric {
                path: path.to_owned(),
                row,
                column: headers[col].to_owned(),
                value: v.to_owned(),
            })
        };
        y.push(num(y_col)? * schema.rescale);
        for (x, &c) in xs.iter_mut().zip(&x_cols) {
            x.push(num(c)?);
        }
        if let Some(g) = g_col {
            labels.push(rec.get(g).unwrap_or("").to_owned());
        }
    }
    if y.is_empty() {
        return Err(IoError::Empty { path: path.to_owned() });
    }
    let (group, group_labels) = match g_col {
        Some(_) => {
            let (g, l) = dense_groups(&labels);
            (Some(g), l)
        }
        None => (None, Vec::new()),
    };
    Ok(Dataset {
        response: y,
        columns: schema.covariates.iter().map(|c| Name::from(c.name.as_str())).zip(xs).collect(),
        group,
        group_labels,
        group_columns: Vec::new(),
        neighbours: None,
        truth: Vec::new(),
        provenance: Provenance::File { path: path.display().to_string(), rescale: schema.rescale },
    })
}

/// Reads a dense 0/1 adjacency table and row-standardizes it.
pub fn read_neighbours(path: &Path) -> Result<SymMatrix, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err(path))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.parse::<f64>().map_err(|_| IoError::NonNumeric {
                    path: path.to_owned(),
                    row: k + 1,
                    column: format!("{}", j + 1),
                    value: v.to_owned(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(IoError::Empty { path: path.to_owned() });
    }
    if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(IoError::NotSquare { path: path.to_owned(), rows: n, row: row + 1, cols: r.len() });
    }
    let a = SymMatrix::from_row_major(n, rows.concat()).expect("square by construction");
    row_standardize(&a).map_err(|source| IoError::Spatial { path: path.to_owned(), source })
}

/// Attaches a neighbourhood matrix and adds `lag = W · column(of)`.
pub fn attach_neighbours(data: &mut Dataset, w: SymMatrix, of: &str, path: &Path) -> Result<(), IoError> {
    if w.dim() != data.len() {
        return Err(IoError::RegionCount { path: path.to_owned(), expected: data.len(), found: w.dim() });
    }
    let rates = data
        .column(of)
        .map_err(|_| IoError::MissingColumn { path: path.to_owned(), column: of.to_owned() })?
        .to_vec();
    let lag = spatial_lag(&w, &rates).map_err(|source| IoError::Spatial { path: path.to_owned(), source })?;
    data.columns.push(("lag".into(), lag));
    data.neighbours = Some(w);
    Ok(())
}

/// Header of the observation table written by [`write_dataset`].
pub fn data_header(data: &Dataset) -> Vec<String> {
    let mut h = vec!["y".to_owned()];
    h.extend(data.columns.iter().map(|(n, _)| n.to_string()));
    if data.group.is_some() {
        h.push("group".into());
    }
    h
}

/// Writes `data.csv`, and when present `groups.csv`, `neighbours.csv` and
/// `truth.csv`, into `dir`. Returns the files written.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Vec<PathBuf>, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();

    let path = dir.join("data.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(data_header(data)).map_err(csv_err(&path))?;
    for i in 0..data.len() {
        let mut rec = vec![fmt(data.response[i])];
        rec.extend(data.columns.iter().map(|(_, c)| fmt(c[i])));
        if let Some(g) = &data.group {
            rec.push(data.group_labels.get(g[i]).cloned().unwrap_or_else(|| g[i].to_string()));
        }
        w.write_record(rec).map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    written.push(path);

    if !data.group_columns.is_empty() {
        let path = dir.join("groups.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        let mut header = vec!["group".to_owned()];
        header.extend(data.group_columns.iter().map(|(n, _)| n.to_string()));
        w.write_record(header).map_err(csv_err(&path))?;
        for g in 0..data.n_groups() {
            let mut rec = vec![data.group_labels.get(g).cloned().unwrap_or_else(|| g.to_string())];
            rec.extend(data.group_columns.iter().map(|(_, c)| fmt(c[g])));
            w.write_record(rec).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    if let Some(m) = &data.neighbours {
        let path = dir.join("neighbours.csv");
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(&path).map_err(csv_err(&path))?;
        for i in 0..m.dim() {
            w.write_record((0..m.dim()).map(|j| fmt(m.get(i, j)))).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }

    if !data.truth.is_empty() {
        let path = dir.join("truth.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["parameter", "value"]).map_err(csv_err(&path))?;
        for (n, v) in &data.truth {
            w.write_record([n.to_string(), fmt(*v)]).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Shortest text that parses back to the same value.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}
