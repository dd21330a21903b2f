use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{format_number, Cell, Column, ColumnKind, IngestError, RawTable};

/// Per-column type hint for [`read_csv`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnHint {
    Numeric,
    /// Keep every token verbatim (as the missing code of each cell).
    Text,
}

/// Reads a headered, RFC-4180 CSV file. Blank fields are missing; fields that
/// do not parse as numbers are missing with the raw token kept as the code.
pub fn read_csv(
    path: impl AsRef<Path>,
    hints: Option<&HashMap<String, ColumnHint>>,
) -> Result<RawTable, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(BufReader::new(file));
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let kinds: Vec<ColumnHint> = headers
        .iter()
        .map(|h| {
            hints
                .and_then(|m| m.get(h).copied())
                .unwrap_or(ColumnHint::Numeric)
        })
        .collect();

    let mut values: Vec<Vec<Cell>> = vec![Vec::new(); headers.len()];
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record)? {
        if record.len() != headers.len() {
            return Err(IngestError::RaggedRow {
                line: record.position().map_or(0, |p| p.line()),
                expected: headers.len(),
                found: record.len(),
            });
        }
        for ((field, kind), column) in record.iter().zip(&kinds).zip(values.iter_mut()) {
            column.push(parse_cell(field, *kind));
        }
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let row_count = values.first().map_or(0, Vec::len);
    let columns = headers
        .into_iter()
        .zip(kinds)
        .zip(values)
        .map(|((name, hint), values)| {
            let kind = match hint {
                ColumnHint::Numeric => ColumnKind::Numeric,
                ColumnHint::Text => ColumnKind::Text {
                    width: values
                        .iter()
                        .map(|c| match c {
                            Cell::Missing(Some(s)) => s.len(),
                            _ => 0,
                        })
                        .max()
                        .unwrap_or(0)
                        .max(1),
                },
            };
            Column {
                name,
                kind,
                label: String::new(),
                values,
            }
        })
        .collect();
    RawTable::with_row_count(name, columns, row_count)
}

fn parse_cell(field: &str, hint: ColumnHint) -> Cell {
    let trimmed = field.trim();
    match hint {
        ColumnHint::Text => {
            if trimmed.is_empty() {
                Cell::Missing(None)
            } else {
                Cell::Missing(Some(field.to_string()))
            }
        }
        ColumnHint::Numeric => {
            if trimmed.is_empty() {
                Cell::Missing(None)
            } else {
                match trimmed.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Num(v),
                    _ => Cell::Missing(Some(trimmed.to_string())),
                }
            }
        }
    }
}

/// Writes a table as CSV. Numerics use the shortest round-tripping decimal
/// form; missing numerics are blank and text cells are written verbatim.
pub fn write_csv(table: &RawTable, path: impl AsRef<Path>) -> Result<(), IngestError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    writer.write_record(table.column_names())?;
    for row in 0..table.row_count() {
        writer.write_record(table.columns().iter().map(|c| match (&c.values[row], c.kind) {
            (Cell::Num(v), _) => format_number(*v),
            (Cell::Missing(Some(code)), ColumnKind::Text { .. }) => code.clone(),
            (Cell::Missing(_), _) => String::new(),
        }))?;
    }
    writer.flush().map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}
