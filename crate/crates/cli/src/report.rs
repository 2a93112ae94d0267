//! Experiment reports and their CSV / JSON serializations.
//!
//! Serialization is a pure function of the report, so identical reports
//! produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use thiserror::Error;

use crate::config::OutputFormat;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Bool(bool),
    Text(String),
}

impl Cell {
    /// Numeric view; text cells are NaN.
    pub fn as_f64(&self) -> f64 {
        match self {
            Cell::Int(v) => *v as f64,
            Cell::Float(v) => *v,
            Cell::Bool(v) => f64::from(u8::from(*v)),
            Cell::Text(_) => f64::NAN,
        }
    }

    /// CSV rendering: shortest round-trip decimal, `NaN` / `inf` spelled out.
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Text(v) => v.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    /// Row length must match the header.
    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch in table {}", self.name);
        self.rows.push(row);
    }
}

/// Ordered `name -> value` pairs, serialized as a JSON object.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary(pub Vec<(String, Cell)>);

impl Summary {
    pub fn put(&mut self, name: &str, value: impl Into<Cell>) {
        self.0.push((name.to_string(), value.into()));
    }

    pub fn get(&self, name: &str) -> Option<&Cell> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

impl Serialize for Summary {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Warning {
    pub code: String,
    pub message: String,
}

/// Deterministic work accounting; wall-clock time is reported on stderr
/// only, so reports stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Runtime {
    /// Planned map evaluations, burn-in included.
    pub map_steps: u64,
    pub threads_independent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub version: String,
    pub runtime: Runtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    BudgetExceeded,
    Degenerate,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::BudgetExceeded => 3,
            Status::Degenerate => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::BudgetExceeded => "budget_exceeded",
            Status::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub status: Status,
    pub config: BTreeMap<String, String>,
    pub provenance: Provenance,
    pub summary: Summary,
    /// The first table is the primary one.
    pub tables: Vec<Table>,
    pub warnings: Vec<Warning>,
}

impl ExperimentReport {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn has_warning(&self, code: &str) -> bool {
        self.warnings.iter().any(|w| w.code == code)
    }
}

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(String),
}

/// A named output file and its bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub file_name: String,
    pub bytes: Vec<u8>,
}

/// Renders a report without touching the filesystem.
///
/// CSV produces one file per table (`<experiment>.csv` for the primary
/// table, `<experiment>.<table>.csv` for the rest), a `summary` file with
/// `metric,value` rows and a `meta` file with `section,key,value` rows for
/// the config echo, provenance and warnings. JSON produces one object.
pub fn render(report: &ExperimentReport, format: OutputFormat) -> Result<Vec<Rendered>, EmitError> {
    let base = &report.experiment;
    match format {
        OutputFormat::Json => {
            let mut text = serde_json::to_string_pretty(report).map_err(|e| EmitError::Serialize(e.to_string()))?;
            text.push('\n');
            Ok(vec![Rendered {
                file_name: format!("{base}.json"),
                bytes: text.into_bytes(),
            }])
        }
        OutputFormat::Csv => {
            let mut out = Vec::new();
            for (i, table) in report.tables.iter().enumerate() {
                let file_name = if i == 0 {
                    format!("{base}.csv")
                } else {
                    format!("{base}.{}.csv", table.name)
                };
                let rows = table.rows.iter().map(|r| r.iter().map(Cell::render).collect());
                out.push(Rendered {
                    file_name,
                    bytes: csv_bytes(&table.columns, rows)?,
                });
            }
            let summary = report.summary.0.iter().map(|(k, v)| vec![k.clone(), v.render()]);
            out.push(Rendered {
                file_name: format!("{base}.summary.csv"),
                bytes: csv_bytes(&["metric".into(), "value".into()], summary)?,
            });
            out.push(Rendered {
                file_name: format!("{base}.meta.csv"),
                bytes: csv_bytes(&["section".into(), "key".into(), "value".into()], meta_rows(report))?,
            });
            Ok(out)
        }
    }
}

fn meta_rows(report: &ExperimentReport) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["status".into(), "status".into(), report.status.name().into()]];
    rows.extend(report.config.iter().map(|(k, v)| vec!["config".into(), k.clone(), v.clone()]));
    let p = &report.provenance;
    rows.push(vec!["provenance".into(), "seed".into(), p.seed.to_string()]);
    rows.push(vec!["provenance".into(), "version".into(), p.version.clone()]);
    rows.push(vec!["provenance".into(), "runtime.map_steps".into(), p.runtime.map_steps.to_string()]);
    rows.push(vec![
        "provenance".into(),
        "runtime.threads_independent".into(),
        p.runtime.threads_independent.to_string(),
    ]);
    rows.extend(report.warnings.iter().map(|w| vec!["warning".into(), w.code.clone(), w.message.clone()]));
    rows
}

fn csv_bytes<I>(header: &[String], rows: I) -> Result<Vec<u8>, EmitError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let err = |e: csv::Error| EmitError::Serialize(e.to_string());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| EmitError::Serialize(e.to_string()))
}

/// Writes the rendered files into `dir` (created if missing) and returns
/// their paths.
pub fn emit(report: &ExperimentReport, format: OutputFormat, dir: &Path) -> Result<Vec<PathBuf>, EmitError> {
    let files = render(report, format)?;
    fs::create_dir_all(dir).map_err(|source| EmitError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths = Vec::with_capacity(files.len());
    for f in files {
        let path = dir.join(&f.file_name);
        fs::write(&path, &f.bytes).map_err(|source| EmitError::Io {
            path: path.clone(),
            source,
        })?;
        paths.push(path);
    }
    Ok(paths)
}
