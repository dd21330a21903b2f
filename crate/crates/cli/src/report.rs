//! Versioned run report: config echo, provenance, tables, checks, warnings.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use crate::config::{OutputFormat, RunConfig};
use crate::data::{InputDigest, SampleCounts};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Tool {
    pub name: &'static str,
    pub version: &'static str,
}

/// A rectangular result table; cells are JSON numbers, strings or null.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        debug_assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// First row whose column `key` equals `value` (as a string).
    pub fn find(&self, key: &str, value: &str) -> Option<&[Value]> {
        let k = self.column_index(key)?;
        self.rows
            .iter()
            .find(|r| r[k].as_str() == Some(value))
            .map(Vec::as_slice)
    }

    pub fn get_f64(&self, row: &[Value], column: &str) -> Option<f64> {
        row[self.column_index(column)?].as_f64()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(cell_text))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn cell_text(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Number cell; non-finite values become null.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

pub fn int(v: usize) -> Value {
    Value::from(v as u64)
}

pub fn text(v: impl Into<String>) -> Value {
    Value::String(v.into())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// A file written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub name: String,
    pub file: String,
    #[serde(skip)]
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub tool: Tool,
    pub library_version: &'static str,
    pub seed: Option<u64>,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    pub sample: Option<SampleCounts>,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<Artifact>,
    pub warnings: Vec<String>,
    pub errors: Vec<String>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_string(),
            tool: Tool {
                name: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
            },
            library_version: svyml::VERSION,
            seed: config.seed,
            config: config.echo(),
            inputs: Vec::new(),
            sample: None,
            tables: Vec::new(),
            checks: Vec::new(),
            artifacts: Vec::new(),
            warnings: Vec::new(),
            errors: Vec::new(),
        }
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn warn(&mut self, message: impl Into<String>) {
        self.warnings.push(message.into());
    }

    pub fn error(&mut self, message: impl Into<String>) {
        self.errors.push(message.into());
    }

    pub fn attach(&mut self, name: &str, file: &str, contents: Vec<u8>) {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            file: file.to_string(),
            contents,
        });
    }

    /// Failed checks count as errors.
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// Sorts and de-duplicates warnings so output is independent of thread timing.
    pub fn finish(&mut self, mut captured: Vec<String>) {
        self.warnings.append(&mut captured);
        self.warnings.sort();
        self.warnings.dedup();
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Writes `report.json`, the artifacts and, for CSV output, every table.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let mut written = Vec::new();
        let path = dir.join("report.json");
        std::fs::write(&path, self.to_json()?).with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path);
        for a in &self.artifacts {
            let path = dir.join(&a.file);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, &a.contents).with_context(|| format!("cannot write {}", path.display()))?;
            written.push(path);
        }
        if format == OutputFormat::Csv {
            for t in &self.tables {
                let path = dir.join(format!("{}.csv", t.name));
                t.write_csv(&path)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_numbers_become_null() {
        assert_eq!(num(f64::NAN), Value::Null);
        assert_eq!(num(1.5), serde_json::json!(1.5));
    }

    #[test]
    fn tables_round_trip_through_csv() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![text("x,y"), num(0.25)]);
        t.push(vec![Value::Null, int(3)]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        t.write_csv(&path).unwrap();
        assert_eq!(std::fs::read_to_string(path).unwrap(), "a,b\n\"x,y\",0.25\n,3\n");
        assert_eq!(t.get_f64(t.find("a", "x,y").unwrap(), "b"), Some(0.25));
    }

    #[test]
    fn warnings_are_sorted_and_unique() {
        let mut r = Report::new("describe", &RunConfig::default());
        r.warn("b");
        r.finish(vec!["a".into(), "b".into()]);
        assert_eq!(r.warnings, vec!["a", "b"]);
        assert!(r.is_ok());
        r.check("x", false, "");
        assert!(!r.is_ok());
    }
}
