//! CSV ingestion of angle tables.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use torwrap::AngleVector;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("row {row}, column {column}: value is not finite")]
    NonFinite { row: usize, column: usize },
    #[error("row {row}: expected {expected} columns, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("no data rows")]
    Empty,
}

/// Rectangular table of angles in radians, wrapped into `(0, 2π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub header: Option<Vec<String>>,
    pub rows: Vec<AngleVector>,
}

impl DataTable {
    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.rows.first().map_or(0, AngleVector::dim)
    }
}

fn numeric(field: &str) -> bool {
    field.parse::<f64>().is_ok()
}

/// Numeric records of a CSV text with an optional header row.
///
/// Rows and columns in errors are 1-based file positions.
pub fn parse_numeric(text: &str) -> Result<(Option<Vec<String>>, Vec<Vec<f64>>), DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record.map_err(|e| DataError::Csv {
            row,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if k == 0 && !record.iter().all(numeric) {
            header = Some(record.iter().map(str::to_owned).collect());
            width = Some(record.len());
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(DataError::Ragged {
                row,
                expected,
                found: record.len(),
            });
        }
        let mut values = Vec::with_capacity(expected);
        for (c, field) in record.iter().enumerate() {
            let column = c + 1;
            let v: f64 = field.parse().map_err(|_| DataError::Parse {
                row,
                column,
                value: field.to_owned(),
            })?;
            if !v.is_finite() {
                return Err(DataError::NonFinite { row, column });
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    Ok((header, rows))
}

pub fn parse_table(text: &str, degrees: bool) -> Result<DataTable, DataError> {
    let (header, raw) = parse_numeric(text)?;
    let scale = if degrees { PI / 180.0 } else { 1.0 };
    let rows = raw
        .into_iter()
        .map(|r| AngleVector::wrap(r.into_iter().map(|v| v * scale)).expect("finite values wrap"))
        .collect();
    Ok(DataTable { header, rows })
}

fn read(path: &Path) -> Result<String, DataError> {
    std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })
}

/// A numeric CSV read verbatim, without wrapping.
pub fn load_matrix(path: &Path) -> Result<Vec<Vec<f64>>, DataError> {
    Ok(parse_numeric(&read(path)?)?.1)
}

pub fn load_data(path: &Path, degrees: bool) -> Result<DataTable, DataError> {
    parse_table(&read(path)?, degrees)
}
