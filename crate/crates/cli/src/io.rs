//! Delimited-text matrices: one sample per row, `#` comment lines, missing
//! entries marked by a token (default `NA`).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use eblp::Dataset;
use ndarray::Array2;

use crate::error::{CliError, Result};

pub const DEFAULT_NA: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Comma,
    Tab,
    Whitespace,
}

impl Delimiter {
    fn detect(line: &str) -> Self {
        if line.contains(',') {
            Delimiter::Comma
        } else if line.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Whitespace
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Delimiter::Comma => ",",
            Delimiter::Tab => "\t",
            Delimiter::Whitespace => " ",
        }
    }
}

/// Parsed matrix; missing entries hold NaN and a `false` in `observed`.
#[derive(Debug, Clone)]
pub struct MatrixText {
    pub values: Array2<f64>,
    pub observed: Array2<bool>,
    pub delimiter: Delimiter,
}

impl MatrixText {
    pub fn any_missing(&self) -> bool {
        self.observed.iter().any(|o| !o)
    }
}

pub fn parse_matrix(text: &str, na_token: &str, path: &Path) -> Result<MatrixText> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let mut delimiter = None;
    let mut width = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| Delimiter::detect(line));
        let fields = delim.split(line);
        let err = |msg: String| CliError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        };
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(err(format!("expected {w} fields, found {}", fields.len())))
            }
            _ => {}
        }
        let mut row = Vec::with_capacity(fields.len());
        let mut obs = Vec::with_capacity(fields.len());
        for f in fields {
            if f == na_token {
                row.push(f64::NAN);
                obs.push(false);
                continue;
            }
            let v: f64 = f.parse().map_err(|_| err(format!("cannot parse {f:?} as a number")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value {f:?}; use {na_token:?} for missing entries")));
            }
            row.push(v);
            obs.push(true);
        }
        rows.push(row);
        seen.push(obs);
    }
    let (n, p) = (rows.len(), width.unwrap_or(0));
    let values = Array2::from_shape_vec((n, p), rows.into_iter().flatten().collect())
        .expect("rows have equal width");
    let observed = Array2::from_shape_vec((n, p), seen.into_iter().flatten().collect())
        .expect("rows have equal width");
    Ok(MatrixText {
        values,
        observed,
        delimiter: delimiter.unwrap_or(Delimiter::Whitespace),
    })
}

pub fn read_matrix(path: &Path, na_token: &str) -> Result<MatrixText> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_matrix(&text, na_token, path)
}

/// Reads a 0/1 mask file.
pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let m = read_matrix(path, DEFAULT_NA)?;
    if m.any_missing() {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "mask files cannot contain missing entries".into(),
        });
    }
    if let Some(bad) = m.values.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(CliError::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("mask entries must be 0 or 1, found {bad}"),
        });
    }
    Ok(m.values.mapv(|v| v == 1.0))
}

/// Shortest representation that reads back to the same `f64`.
pub fn format_matrix(m: &Array2<f64>, delimiter: Delimiter) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push_str(delimiter.as_str());
            }
            first = false;
            write!(out, "{v}").expect("writing to a string");
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, m: &Array2<f64>, delimiter: Delimiter) -> Result<()> {
    fs::write(path, format_matrix(m, delimiter)).map_err(|e| CliError::io(path, e))
}

/// Combines NA entries with an optional mask file into a dataset.
pub fn load_dataset(input: &Path, mask: Option<&Path>, na_token: &str) -> Result<(Dataset, Delimiter)> {
    let m = read_matrix(input, na_token)?;
    let mut observed = m.observed.clone();
    if let Some(path) = mask {
        let file_mask = read_mask(path)?;
        if file_mask.dim() != observed.dim() {
            return Err(CliError::Invalid(format!(
                "mask is {:?} but data is {:?}",
                file_mask.dim(),
                observed.dim()
            )));
        }
        observed.zip_mut_with(&file_mask, |o, &f| *o = *o && f);
    }
    let mask = observed.mapv(|o| if o { 1.0 } else { 0.0 });
    let values = ndarray::Zip::from(&m.values)
        .and(&observed)
        .map_collect(|&v, &o| if o { v } else { 0.0 });
    Ok((Dataset::from_masked(values, mask)?, m.delimiter))
}
