//! CSV tables, the JSON summary and atomic file writes.

use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

/// One CSV cell. Floats are written with 17 significant digits.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: &'static str,
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<Cell>>,
}

pub const CONVERGENCE_HEADER: &[&str] = &["experiment", "n", "N_x", "N_t", "s", "h", "dt", "metric", "value"];
pub const NONUNIQ_HEADER: &[&str] = &["level", "cauchy_gap", "coeff_gap", "exterior_lift_gap", "local_gap"];
pub const CARLEMAN_HEADER: &[&str] = &["beta", "sample_id", "lhs", "rhs", "ratio"];
pub const EXTENSION_HEADER: &[&str] = &["lambda_re", "rho", "s", "trace_err"];

impl Table {
    pub fn new(file: &'static str, header: &'static [&'static str]) -> Self {
        Self {
            file,
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.into_error()))
    }
}

/// One acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value ≤ tol`.
    pub fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
            pass: value <= tol,
        }
    }

    /// Passes when `value ≥ tol`.
    pub fn at_least(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tol,
            pass: value >= tol,
        }
    }

    /// Boolean check recorded as value 1 or 0 against tolerance 1.
    pub fn holds(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            tol: 1.0,
            pass: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub config_hash: String,
    pub version: String,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Summary {
    pub fn all_pass(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.pass)
    }
}

/// Tables and summary of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub tables: Vec<Table>,
    pub summary: Summary,
}

/// Writes `bytes` through a temporary file in the target directory and a
/// rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

impl ResultBundle {
    /// Writes every table and `summary.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let mut written = Vec::new();
        for t in &self.tables {
            let p = dir.join(t.file);
            write_atomic(&p, &t.to_csv()?)?;
            written.push(p);
        }
        let p = dir.join("summary.json");
        write_summary(&p, &self.summary)?;
        written.push(p);
        Ok(written)
    }
}

pub fn write_summary(path: &Path, s: &Summary) -> Result<(), CliError> {
    let mut text = serde_json::to_vec_pretty(s).map_err(|e| CliError::Config(e.to_string()))?;
    text.push(b'\n');
    write_atomic(path, &text)
}
