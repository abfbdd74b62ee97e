//! CSV ingestion and export. Files hold samples as rows and features as columns.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CprError, Result};
use crate::model::{Dataset, SampleKernel};

/// A numeric CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn ncols(&self) -> usize {
        self.header.as_ref().map_or_else(|| self.rows.first().map_or(0, Vec::len), Vec::len)
    }

    /// Column position of `key`: a header name, or a 0-based index.
    pub fn column_index(&self, key: &str) -> Result<usize> {
        if let Some(pos) = self.header.as_ref().and_then(|h| h.iter().position(|c| c == key)) {
            return Ok(pos);
        }
        match key.parse::<usize>() {
            Ok(i) if i < self.ncols() => Ok(i),
            _ => Err(CprError::Parse { line: 1, message: format!("no column {key:?}") }),
        }
    }

    /// Samples × columns, transposed into a `columns × samples` matrix.
    pub fn to_feature_matrix(&self, skip: Option<usize>) -> DMatrix<f64> {
        let cols: Vec<usize> = (0..self.ncols()).filter(|&c| Some(c) != skip).collect();
        DMatrix::from_fn(cols.len(), self.rows.len(), |i, j| self.rows[j][cols[i]])
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> CprError {
    CprError::Parse { line, message: message.into() }
}

/// Reads a numeric table; every row must have the same width. Errors carry
/// the 1-based line number.
pub fn read_table<R: Read>(reader: R, has_header: bool) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut header = None;
    let mut rows = Vec::new();
    let mut width = None;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(k as u64 + 1, |p| p.line()) as usize;
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        if let Some(w) = width {
            if rec.len() != w {
                return Err(parse_err(line, format!("expected {w} fields, found {}", rec.len())));
            }
        }
        width = Some(rec.len());
        if k == 0 && has_header {
            header = Some(rec.iter().map(str::to_string).collect());
            continue;
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(parse_err(line, format!("non-finite value in column {}", c + 1))),
                Err(_) => Err(parse_err(line, format!("column {}: {f:?} is not a number", c + 1))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { header, rows })
}

pub fn read_table_file(path: &Path, has_header: bool) -> Result<Table> {
    read_table(File::open(path)?, has_header)
}

/// Where the labels live.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource<'a> {
    /// A column of the feature file, by header name or 0-based index.
    Column(&'a str),
    /// A separate single-column file.
    File(&'a Path),
}

fn labels_from(values: &[f64], first_line: usize) -> Result<Vec<i8>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| match v {
            v if v == 1.0 => Ok(1),
            v if v == 0.0 || v == -1.0 => Ok(-1),
            v => Err(parse_err(first_line + i, format!("label {v} is not 0/1 or ±1"))),
        })
        .collect()
}

/// Loads features and labels (0/1 or ±1), with optional side-feature and
/// sample-kernel files in the same row order.
pub fn load_dataset(
    features: &Path,
    labels: LabelSource<'_>,
    has_header: bool,
    side: Option<&Path>,
    kernel: Option<&Path>,
) -> Result<Dataset<f64>> {
    let table = read_table_file(features, has_header)?;
    let first = if has_header { 2 } else { 1 };
    let (x, y, names) = match labels {
        LabelSource::Column(key) => {
            let c = table.column_index(key)?;
            let y: Vec<f64> = table.rows.iter().map(|r| r[c]).collect();
            let names = table.header.as_ref().map(|h| h.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, s)| s.clone()).collect());
            (table.to_feature_matrix(Some(c)), y, names)
        }
        LabelSource::File(path) => {
            let lt = read_table_file(path, has_header)?;
            if lt.ncols() != 1 {
                return Err(parse_err(1, format!("label file must have one column, found {}", lt.ncols())));
            }
            (table.to_feature_matrix(None), lt.rows.iter().map(|r| r[0]).collect(), table.header.clone())
        }
    };
    if y.len() != x.ncols() {
        return Err(CprError::DimensionMismatch(format!("{} label rows for {} samples", y.len(), x.ncols())));
    }
    let mut data = Dataset::new(x, labels_from(&y, first)?)?;
    if let Some(names) = names {
        data = data.with_names(names)?;
    }
    if let Some(path) = side {
        data = data.with_side(read_table_file(path, has_header)?.to_feature_matrix(None))?;
    }
    if let Some(path) = kernel {
        let k = read_table_file(path, false)?.to_feature_matrix(None);
        data = data.with_sample_kernel(SampleKernel::new(k)?)?;
    }
    Ok(data)
}

fn csv_err(e: csv::Error) -> CprError {
    CprError::Io(std::io::Error::other(e))
}

/// Writes samples as rows with a header of feature names and a final `label` column (±1).
pub fn write_dataset<W: Write>(data: &Dataset<f64>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = match data.names() {
        Some(n) => n.to_vec(),
        None => (0..data.d()).map(|i| format!("x{}", i + 1)).collect(),
    };
    header.push("label".into());
    out.write_record(&header).map_err(csv_err)?;
    for j in 0..data.n() {
        let mut rec: Vec<String> = data.x().column(j).iter().map(f64::to_string).collect();
        rec.push(data.labels()[j].to_string());
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a matrix row by row, optionally preceded by a header.
pub fn write_matrix<W: Write>(m: &DMatrix<f64>, header: Option<&[String]>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if let Some(h) = header {
        out.write_record(h).map_err(csv_err)?;
    }
    for row in m.row_iter() {
        out.write_record(row.iter().map(f64::to_string)).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
