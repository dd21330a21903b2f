//! Loading survey component files (CSV, SAS Transport v5) into an untyped
//! column table, and merging component files on a respondent key.

mod csv_io;
pub mod ibm;
mod merge;
pub mod xpt;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use thiserror::Error;

pub use csv_io::{read_csv, write_csv, ColumnHint};
pub use ibm::{ibm_to_ieee, ieee_to_ibm};
pub use merge::{merge_tables, merge_tables_with, JoinKind};
pub use xpt::{encode_xpt, parse_xpt, read_xpt, write_xpt, XptWriteReport};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse failure: {0}")]
    Csv(#[from] csv::Error),
    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("not a SAS transport file: {0}")]
    BadMagic(String),
    #[error("truncated record: {0}")]
    TruncatedRecord(String),
    #[error("unsupported transport version: {0}")]
    UnsupportedVersion(String),
    #[error("column '{0}' not found")]
    MissingColumn(String),
    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),
    #[error("column '{column}' has {found} values, table has {expected} rows")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
    #[error("key '{key}' value {value} appears more than once in table '{table}'")]
    DuplicateKey {
        table: String,
        key: String,
        value: String,
    },
    #[error("non-key column '{0}' exists in both tables")]
    NameCollision(String),
}

/// One table cell. All numerics are `f64`; anything else is carried as a
/// missing value with its raw token kept in `code`.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Missing(Option<String>),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Missing(_) => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    /// Character data; `width` is the fixed field width for transport output.
    Text { width: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub label: String,
    pub values: Vec<Cell>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<Cell>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
            label: String::new(),
            values,
        }
    }

    pub fn from_options(name: impl Into<String>, values: &[Option<f64>]) -> Self {
        Column::numeric(
            name,
            values
                .iter()
                .map(|v| v.map_or(Cell::Missing(None), Cell::Num))
                .collect(),
        )
    }
}

/// A named collection of equal-length columns with unique names.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    name: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl RawTable {
    pub fn new(name: impl Into<String>, columns: Vec<Column>) -> Result<Self, IngestError> {
        let row_count = columns.first().map_or(0, |c| c.values.len());
        Self::with_row_count(name, columns, row_count)
    }

    /// Builds a table whose row count is stated explicitly (needed when the
    /// table has no columns).
    pub fn with_row_count(
        name: impl Into<String>,
        columns: Vec<Column>,
        row_count: usize,
    ) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for column in &columns {
            if !seen.insert(column.name.as_str()) {
                return Err(IngestError::DuplicateColumn(column.name.clone()));
            }
            if column.values.len() != row_count {
                return Err(IngestError::LengthMismatch {
                    column: column.name.clone(),
                    expected: row_count,
                    found: column.values.len(),
                });
            }
        }
        Ok(RawTable {
            name: name.into(),
            columns,
            row_count,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Column, IngestError> {
        self.column(name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }

    /// Numeric view of a column; missing and non-numeric cells become `None`.
    pub fn numeric(&self, name: &str) -> Result<Vec<Option<f64>>, IngestError> {
        Ok(self.require(name)?.values.iter().map(Cell::as_f64).collect())
    }

    pub fn push_column(&mut self, column: Column) -> Result<(), IngestError> {
        if self.column(&column.name).is_some() {
            return Err(IngestError::DuplicateColumn(column.name));
        }
        if self.columns.is_empty() && self.row_count == 0 {
            self.row_count = column.values.len();
        }
        if column.values.len() != self.row_count {
            return Err(IngestError::LengthMismatch {
                column: column.name,
                expected: self.row_count,
                found: column.values.len(),
            });
        }
        self.columns.push(column);
        Ok(())
    }

    /// Keeps rows where `keep[i]` is true.
    pub fn filter_rows(&self, keep: &[bool]) -> RawTable {
        assert_eq!(keep.len(), self.row_count, "row mask length");
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                values: c
                    .values
                    .iter()
                    .zip(keep)
                    .filter(|(_, &k)| k)
                    .map(|(v, _)| v.clone())
                    .collect(),
                ..c.clone()
            })
            .collect();
        RawTable {
            name: self.name.clone(),
            columns,
            row_count: keep.iter().filter(|&&k| k).count(),
        }
    }

    /// Recodes user-declared numeric codes (e.g. refusal 7/77/777) to missing,
    /// keeping the original value as the missing code. Nothing is recoded
    /// unless it is listed.
    pub fn apply_missing_codes(&mut self, codes: &MissingCodes) {
        for column in &mut self.columns {
            let listed = codes.for_column(&column.name);
            if listed.is_empty() {
                continue;
            }
            for cell in &mut column.values {
                if let Cell::Num(v) = cell {
                    if listed.iter().any(|c| c == v) {
                        *cell = Cell::Missing(Some(format_number(*v)));
                    }
                }
            }
        }
    }
}

/// Numeric values to treat as missing, globally or per column.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MissingCodes {
    pub global: Vec<f64>,
    pub per_column: BTreeMap<String, Vec<f64>>,
}

impl MissingCodes {
    fn for_column(&self, name: &str) -> Vec<f64> {
        let mut codes = self.global.clone();
        if let Some(extra) = self.per_column.get(name) {
            codes.extend_from_slice(extra);
        }
        codes
    }
}

/// Shortest decimal rendering of a number, integers without a fraction.
pub fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}
