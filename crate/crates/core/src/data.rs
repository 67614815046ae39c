//! Datasets: CSV ingestion, dummy coding, interaction expansion and
//! standardization with a recorded back-transform.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robust;

/// Candidate columns and a response, all finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub names: Vec<String>,
    pub response: String,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, names: Vec<String>, response: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} design rows, {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} names for {} columns",
                names.len(),
                x.ncols()
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite entry".into()));
        }
        Ok(Self {
            x,
            y,
            names,
            response: response.into(),
        })
    }

    /// Columns named `x0, x1, …`.
    pub fn unnamed(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names, "y")
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.x.nrows();
        &self.x.as_slice()[j * n..(j + 1) * n]
    }

    pub fn response_values(&self) -> &[f64] {
        self.y.as_slice()
    }

    pub fn rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: crate::linalg::select_rows(&self.x, idx),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            names: self.names.clone(),
            response: self.response.clone(),
        }
    }

    pub fn columns(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(idx),
            y: self.y.clone(),
            names: idx.iter().map(|&j| self.names[j].clone()).collect(),
            response: self.response.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    /// `(x − mean) / sd`
    #[default]
    Classical,
    /// `(x − median) / MAD`
    Robust,
}

impl FromStr for StandardizeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(Self::Classical),
            "robust" => Ok(Self::Robust),
            other => Err(Error::InvalidConfig(format!("unknown standardization `{other}`"))),
        }
    }
}

impl fmt::Display for StandardizeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Classical => "classical",
            Self::Robust => "robust",
        })
    }
}

fn location_scale(v: &[f64], mode: StandardizeMode) -> (f64, f64) {
    match mode {
        StandardizeMode::Classical => {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            (mean, var.sqrt())
        }
        StandardizeMode::Robust => (robust::median(v), robust::mad(v).unwrap_or(0.0)),
    }
}

fn usable_scale(center: f64, scale: f64) -> bool {
    scale.is_finite() && scale > 1e-12 * center.abs().max(1.0)
}

/// Affine transform applied by [`standardize`], kept for back-transforming
/// coefficients and predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mode: StandardizeMode,
    /// Raw column index of each standardized column.
    pub columns: Vec<usize>,
    pub x_center: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_center: f64,
    pub y_scale: f64,
    /// Raw columns dropped for zero scale.
    pub dropped: Vec<usize>,
}

/// Centers and scales every column and the response. Columns with zero
/// scale are dropped with a warning; a zero-scale response is an error.
pub fn standardize(data: &Dataset, mode: StandardizeMode) -> Result<(Dataset, Standardization)> {
    if data.n() < 2 {
        return Err(Error::EmptyData);
    }
    let (y_center, y_scale) = location_scale(data.response_values(), mode);
    if !usable_scale(y_center, y_scale) {
        return Err(Error::ZeroScale);
    }
    let mut columns = Vec::with_capacity(data.p());
    let mut x_center = Vec::with_capacity(data.p());
    let mut x_scale = Vec::with_capacity(data.p());
    let mut dropped = Vec::new();
    for j in 0..data.p() {
        let (c, s) = location_scale(data.column(j), mode);
        if usable_scale(c, s) {
            columns.push(j);
            x_center.push(c);
            x_scale.push(s);
        } else {
            warn!("dropping column `{}`: zero scale", data.names[j]);
            dropped.push(j);
        }
    }
    let t = Standardization {
        mode,
        columns,
        x_center,
        x_scale,
        y_center,
        y_scale,
        dropped,
    };
    let x = t.transform_x(&data.x);
    let y = data.y.map(|v| (v - y_center) / y_scale);
    let names = t.columns.iter().map(|&j| data.names[j].clone()).collect();
    Ok((Dataset::new(x, y, names, data.response.clone())?, t))
}

impl Standardization {
    /// Standardizes raw rows (all raw columns present) into the kept columns.
    pub fn transform_x(&self, raw: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(raw.nrows(), self.columns.len(), |i, k| {
            (raw[(i, self.columns[k])] - self.x_center[k]) / self.x_scale[k]
        })
    }

    pub fn response_to_raw(&self, y_std: f64) -> f64 {
        self.y_center + self.y_scale * y_std
    }

    /// Maps a standardized-scale model (intercept plus slopes on standardized
    /// column positions) to raw-scale intercept and slopes indexed by raw
    /// column, zeros for unselected columns.
    pub fn raw_coefficients(&self, intercept: f64, slopes: &[(usize, f64)], raw_p: usize) -> (f64, Vec<f64>) {
        let mut beta = vec![0.0; raw_p];
        let mut b0 = intercept;
        for &(k, b) in slopes {
            b0 -= b * self.x_center[k] / self.x_scale[k];
            beta[self.columns[k]] += self.y_scale * b / self.x_scale[k];
        }
        (self.y_center + self.y_scale * b0, beta)
    }
}

/// Raw-scale predictions from raw-scale coefficients.
pub fn predict(x: &DMatrix<f64>, intercept: f64, beta: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| intercept + x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>())
        .collect()
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub delimiter: u8,
    /// Tokens read as missing values.
    pub missing: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            missing: ["", "NA", "N/A", "NaN", "nan", "?", "."]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

/// Result of [`ingest`] with the bookkeeping a report needs.
#[derive(Clone, Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub dropped_columns: Vec<String>,
    /// Categorical source column → dummy column names.
    pub dummies: Vec<(String, Vec<String>)>,
}

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(0)
}

/// Reads a delimited file with a header row. Numeric columns load as-is,
/// other columns are dummy coded with the first (sorted) level dropped, and
/// any row holding a missing token is discarded.
pub fn ingest(path: impl AsRef<Path>, response: &str, options: &IngestOptions) -> Result<Ingested> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, response, options)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, response: &str, options: &IngestOptions) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let response_idx = header
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::UnknownResponse(response.to_string()))?;

    let missing: HashSet<&str> = options.missing.iter().map(String::as_str).collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut rows_read = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: csv_line(&e),
            message: e.to_string(),
        })?;
        rows_read += 1;
        if record.iter().any(|f| missing.contains(f)) {
            continue;
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    let rows_dropped = rows_read - rows.len();
    if rows_dropped > 0 {
        warn!("dropped {rows_dropped} rows with missing values");
    }
    if rows.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = rows.len();

    let parse_column = |j: usize| -> Option<Vec<f64>> {
        rows.iter().map(|r| r[j].parse::<f64>().ok().filter(|v| v.is_finite())).collect()
    };
    let y = parse_column(response_idx).ok_or_else(|| {
        Error::InvalidConfig(format!("response `{response}` is not numeric"))
    })?;

    let mut names = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut dummies = Vec::new();
    let mut dropped_columns = Vec::new();
    for (j, name) in header.iter().enumerate() {
        if j == response_idx {
            continue;
        }
        let mut push = |col_name: String, values: Vec<f64>| {
            let first = values[0];
            if values.iter().all(|v| *v == first) {
                warn!("dropping constant column `{col_name}`");
                dropped_columns.push(col_name);
            } else {
                names.push(col_name);
                columns.push(values);
            }
        };
        match parse_column(j) {
            Some(values) => push(name.clone(), values),
            None => {
                let levels: BTreeSet<&str> = rows.iter().map(|r| r[j].as_str()).collect();
                let levels: Vec<&str> = levels.into_iter().collect();
                let mut made = Vec::new();
                for level in levels.iter().skip(1) {
                    let col_name = format!("{name}={level}");
                    let values = rows
                        .iter()
                        .map(|r| if r[j] == *level { 1.0 } else { 0.0 })
                        .collect();
                    made.push(col_name.clone());
                    push(col_name, values);
                }
                dummies.push((name.clone(), made));
            }
        }
    }
    if columns.is_empty() {
        return Err(Error::EmptyData);
    }
    let x = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
    let dataset = Dataset::new(x, DVector::from_vec(y), names, response)?;
    Ok(Ingested {
        dataset,
        rows_read,
        rows_dropped,
        dropped_columns,
        dummies,
    })
}

/// Appends the product of every pair of distinct columns, skipping products
/// that are constant or duplicate an existing column. Intended for
/// raw-scale data (so that, e.g., products of mutually exclusive dummies
/// show up as constant); standardize afterwards.
pub fn expand_interactions(data: &Dataset) -> Dataset {
    let n = data.n();
    let p = data.p();
    let key = |v: &[f64]| -> Vec<u64> { v.iter().map(|x| (x + 0.0).to_bits()).collect() };
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for j in 0..p {
        seen.entry(key(data.column(j))).or_insert(j);
    }
    let mut names = data.names.clone();
    let mut extra: Vec<Vec<f64>> = Vec::new();
    for a in 0..p {
        for b in (a + 1)..p {
            let prod: Vec<f64> = data
                .column(a)
                .iter()
                .zip(data.column(b))
                .map(|(u, v)| u * v)
                .collect();
            let (lo, hi) = prod
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
            if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1.0) {
                continue;
            }
            let k = key(&prod);
            if seen.contains_key(&k) {
                continue;
            }
            seen.insert(k, p + extra.len());
            names.push(format!("{}:{}", data.names[a], data.names[b]));
            extra.push(prod);
        }
    }
    let x = DMatrix::from_fn(n, p + extra.len(), |i, j| {
        if j < p {
            data.x[(i, j)]
        } else {
            extra[j - p][i]
        }
    });
    Dataset {
        x,
        y: data.y.clone(),
        names,
        response: data.response.clone(),
    }
}
