//! Writing tables and the run summary.
//!
//! Tables go out as CSV (header row plus one row per record) or as JSON
//! `{"columns": [...], "rows": [[...], ...]}`. The summary is always JSON.
//! Nothing written here depends on wall-clock time, so identical inputs give
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Machine-readable outcome of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    /// `fixture:<name>` or `spec:<path>`.
    pub source: String,
    pub converged: bool,
    pub cycles: usize,
    pub max_violation: Option<f64>,
    pub exit_code: i32,
    pub metrics: BTreeMap<String, Value>,
    /// Files written next to the summary, relative to the output directory.
    pub artifacts: Vec<String>,
}

impl Summary {
    pub fn new(command: &str, source: String) -> Self {
        Self {
            command: command.into(),
            source,
            converged: false,
            cycles: 0,
            max_violation: None,
            exit_code: 0,
            metrics: BTreeMap::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn metric(&mut self, key: &str, value: impl Into<Value>) {
        self.metrics.insert(key.into(), value.into());
    }

    /// Numbers that are not finite become `null` in JSON.
    pub fn metric_f64(&mut self, key: &str, value: f64) {
        self.metric(key, finite(value));
    }
}

pub fn finite(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

/// Column-oriented table of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Output directory plus table format.
#[derive(Debug, Clone)]
pub struct Artifacts {
    dir: PathBuf,
    format: Format,
    written: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path, format: Format) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn table(&mut self, name: &str, table: &Table) -> io::Result<()> {
        let file = match self.format {
            Format::Csv => {
                let file = format!("{name}.csv");
                let mut w = csv::Writer::from_path(self.dir.join(&file))?;
                w.write_record(&table.columns)?;
                for row in &table.rows {
                    w.write_record(row.iter().map(|v| format_number(*v)))?;
                }
                w.flush()?;
                file
            }
            Format::Json => {
                let file = format!("{name}.json");
                let rows: Vec<Vec<Value>> = table
                    .rows
                    .iter()
                    .map(|r| r.iter().map(|v| finite(*v)).collect())
                    .collect();
                let body = serde_json::json!({ "columns": table.columns, "rows": rows });
                fs::write(
                    self.dir.join(&file),
                    serde_json::to_string_pretty(&body)? + "\n",
                )?;
                file
            }
        };
        self.written.push(file);
        Ok(())
    }

    /// Writes a preformatted file (for reports with their own CSV layout).
    pub fn raw(&mut self, file: &str, contents: &str) -> io::Result<()> {
        fs::write(self.dir.join(file), contents)?;
        self.written.push(file.into());
        Ok(())
    }

    pub fn summary(&self, summary: &Summary) -> io::Result<()> {
        let mut s = summary.clone();
        s.artifacts = self.written.clone();
        fs::write(
            self.dir.join("summary.json"),
            serde_json::to_string_pretty(&s)? + "\n",
        )
    }
}

/// Shortest representation that round-trips; whole numbers print without a fraction.
pub fn format_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else if v.is_finite() {
        format!("{v:?}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
