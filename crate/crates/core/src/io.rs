//! CSV time series and JSON files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// A table whose first column is a strictly increasing index (usually `t`).
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeriesFile {
    pub index_name: String,
    pub columns: Vec<String>,
    pub index: Vec<f64>,
    /// one row of `columns.len()` values per index entry
    pub rows: Vec<Vec<f64>>,
}

/// Shortest text that parses back to the same `f64`; integral values
/// (iteration counters, mostly) print without an exponent.
pub fn format_value(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (x.fract() == 0.0 && x.abs() < 1e15) {
        return format!("{x}");
    }
    format!("{x:e}")
}

impl TimeSeriesFile {
    pub fn new(index_name: &str, columns: Vec<String>, index: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let f = TimeSeriesFile {
            index_name: index_name.to_string(),
            columns,
            index,
            rows,
        };
        f.validate()?;
        Ok(f)
    }

    /// Column `t` plus one named column per series.
    pub fn from_columns(times: &[f64], series: &[(&str, &[f64])]) -> Result<Self> {
        let rows = (0..times.len())
            .map(|n| series.iter().map(|(_, v)| v.get(n).copied().unwrap_or(f64::NAN)).collect())
            .collect();
        Self::new("t", series.iter().map(|(n, _)| n.to_string()).collect(), times.to_vec(), rows)
    }

    fn validate(&self) -> Result<()> {
        if self.rows.len() != self.index.len() {
            return Err(Error::invalid(format!(
                "{} rows for {} index values",
                self.rows.len(),
                self.index.len()
            )));
        }
        if let Some(r) = self.rows.iter().position(|r| r.len() != self.columns.len()) {
            return Err(Error::invalid(format!(
                "row {r} has {} values, header has {}",
                self.rows[r].len(),
                self.columns.len()
            )));
        }
        if let Some(w) = self.index.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "{} is not strictly increasing at row {}",
                self.index_name,
                w + 1
            )));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(std::iter::once(self.index_name.as_str()).chain(self.columns.iter().map(String::as_str)))?;
        for (t, row) in self.index.iter().zip(&self.rows) {
            w.write_record(std::iter::once(format_value(*t)).chain(row.iter().map(|v| format_value(*v))))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let Some((index_name, columns)) = header.split_first() else {
            return Err(Error::Parse("CSV header is empty".into()));
        };
        let mut index = Vec::new();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("data row {}: `{s}`: {e}", line + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (t, rest) = vals.split_first().ok_or_else(|| Error::Parse(format!("data row {} is empty", line + 1)))?;
            index.push(*t);
            rows.push(rest.to_vec());
        }
        Self::new(index_name, columns.to_vec(), index, rows)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_str(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}
