//! CSV persistence: comma separated, `.` decimals, header row, LF endings.

use std::fs;
use std::path::Path;

use crate::error::{HarnessError, Result};

/// Shortest representation that round-trips; identical inputs always give
/// identical text.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Table assembled in memory and written in one go.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Named columns of a CSV file as strings.
pub struct CsvColumns {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvColumns {
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    /// Column `name` parsed as floats; empty cells become `None`.
    pub fn floats(&self, name: &str, path: &Path) -> Result<Vec<Option<f64>>> {
        let idx = self.header.iter().position(|h| h == name).ok_or_else(|| HarnessError::Input {
            path: path.to_path_buf(),
            message: format!("no column `{name}`"),
        })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let cell = row.get(idx).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse().map(Some).map_err(|e| HarnessError::Input {
                    path: path.to_path_buf(),
                    message: format!("row {}: `{name}` = {cell:?}: {e}", i + 2),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, 2.0634, 1e-300, 60.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(f64::NAN), "nan");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn writes_lf_terminated_csv_and_reads_it_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/t.csv");
        let mut t = Table::new(&["chi", "sigma", "error"]);
        t.push(vec![fmt_f64(0.5), fmt_f64(0.25), String::new()]);
        t.push(vec![fmt_f64(1.0), String::new(), "failed, badly".into()]);
        t.write(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "chi,sigma,error\n0.5,0.25,\n1,,\"failed, badly\"\n");
        let cols = CsvColumns::read(&path).unwrap();
        assert_eq!(cols.floats("sigma", &path).unwrap(), vec![Some(0.25), None]);
        assert!(cols.floats("gamma", &path).is_err());
    }
}
