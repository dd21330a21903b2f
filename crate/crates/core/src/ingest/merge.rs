use std::collections::HashMap;

use super::{format_number, Cell, Column, IngestError, RawTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JoinKind {
    #[default]
    Inner,
    /// Every left row is kept; unmatched right columns are missing.
    Left,
}

/// Inner join of two tables on a key column that is unique in each.
pub fn merge_tables(left: &RawTable, right: &RawTable, key: &str) -> Result<RawTable, IngestError> {
    merge_tables_with(left, right, key, JoinKind::Inner)
}

pub fn merge_tables_with(
    left: &RawTable,
    right: &RawTable,
    key: &str,
    kind: JoinKind,
) -> Result<RawTable, IngestError> {
    let left_keys = key_column(left, key)?;
    let right_keys = key_column(right, key)?;
    for column in right.columns() {
        if column.name != key && left.column(&column.name).is_some() {
            return Err(IngestError::NameCollision(column.name.clone()));
        }
    }

    let right_index = unique_index(right, key, &right_keys)?;
    unique_index(left, key, &left_keys)?;

    // (left row, matching right row)
    let pairs: Vec<(usize, Option<usize>)> = left_keys
        .iter()
        .enumerate()
        .filter_map(|(i, k)| {
            let matched = k.and_then(|bits| right_index.get(&bits).copied());
            match (kind, matched) {
                (_, Some(j)) => Some((i, Some(j))),
                (JoinKind::Left, None) => Some((i, None)),
                (JoinKind::Inner, None) => None,
            }
        })
        .collect();

    let mut columns: Vec<Column> = left
        .columns()
        .iter()
        .map(|c| Column {
            values: pairs.iter().map(|&(i, _)| c.values[i].clone()).collect(),
            ..c.clone()
        })
        .collect();
    columns.extend(right.columns().iter().filter(|c| c.name != key).map(|c| Column {
        values: pairs
            .iter()
            .map(|&(_, j)| j.map_or(Cell::Missing(None), |j| c.values[j].clone()))
            .collect(),
        ..c.clone()
    }));
    RawTable::with_row_count(left.name(), columns, pairs.len())
}

fn key_column(table: &RawTable, key: &str) -> Result<Vec<Option<u64>>, IngestError> {
    Ok(table
        .require(key)?
        .values
        .iter()
        .map(|c| c.as_f64().map(|v| (v + 0.0).to_bits()))
        .collect())
}

fn unique_index(
    table: &RawTable,
    key: &str,
    keys: &[Option<u64>],
) -> Result<HashMap<u64, usize>, IngestError> {
    let mut index = HashMap::with_capacity(keys.len());
    for (row, k) in keys.iter().enumerate() {
        if let Some(bits) = k {
            if index.insert(*bits, row).is_some() {
                return Err(IngestError::DuplicateKey {
                    table: table.name().to_string(),
                    key: key.to_string(),
                    value: format_number(f64::from_bits(*bits)),
                });
            }
        }
    }
    Ok(index)
}
