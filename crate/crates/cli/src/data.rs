//! Loading, merging, recoding and filtering inputs into a design frame.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use svyml::ingest::{self, merge_tables_with, Column, JoinKind, MissingCodes, RawTable};
use svyml::{build_design, DesignFrame, DesignMapping};

use crate::config::{Derive, FilterScope, Join, RunConfig};

/// Provenance of one input file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub columns: usize,
}

/// Row counts at each preparation stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SampleCounts {
    pub merged: usize,
    pub after_row_filters: usize,
    pub design_rows: usize,
    pub domain_rows: usize,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub frame: DesignFrame,
    pub inputs: Vec<InputDigest>,
    pub counts: SampleCounts,
}

fn digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read input {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Reads one file, as SAS transport when the extension is `xpt`, else CSV.
pub fn read_table(path: &Path) -> Result<RawTable> {
    if !path.exists() {
        bail!("input file not found: {}", path.display());
    }
    let is_xpt = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("xpt"));
    let table = if is_xpt {
        ingest::read_xpt(path)
    } else {
        ingest::read_csv(path, None)
    };
    table.with_context(|| format!("cannot parse {}", path.display()))
}

/// Reads and merges all inputs, then applies missing codes and derived
/// columns. Returns the table with per-input digests.
pub fn load_table(config: &RunConfig) -> Result<(RawTable, Vec<InputDigest>)> {
    if config.inputs.is_empty() {
        bail!("no inputs configured (add [[input]] or pass --input)");
    }
    let mut digests = Vec::new();
    let mut merged: Option<RawTable> = None;
    for spec in &config.inputs {
        let path: PathBuf = config.resolve(&spec.path);
        let table = read_table(&path)?;
        digests.push(InputDigest {
            path: spec.path.display().to_string(),
            sha256: digest(&path)?,
            rows: table.row_count(),
            columns: table.columns().len(),
        });
        merged = Some(match merged {
            None => table,
            Some(left) => {
                let key = config
                    .merge_key
                    .as_deref()
                    .context("several inputs need a `merge_key`")?;
                let kind = match spec.join {
                    Join::Inner => JoinKind::Inner,
                    Join::Left => JoinKind::Left,
                };
                merge_tables_with(&left, &table, key, kind)
                    .with_context(|| format!("cannot merge {} on '{key}'", path.display()))?
            }
        });
    }
    let mut table = merged.unwrap_or_else(|| unreachable!("at least one input"));
    let codes = MissingCodes {
        global: config.missing.codes.clone(),
        per_column: config.missing.columns.clone(),
    };
    for name in codes.per_column.keys() {
        if table.column(name).is_none() {
            bail!("[missing.columns] names '{name}', which is not an input column");
        }
    }
    table.apply_missing_codes(&codes);
    for derive in &config.derives {
        let values = derive_column(&table, derive)?;
        table
            .push_column(Column::from_options(derive.name(), &values))
            .with_context(|| format!("cannot add derived column '{}'", derive.name()))?;
    }
    Ok((table, digests))
}

fn numeric(table: &RawTable, name: &str, context: &str) -> Result<Vec<Option<f64>>> {
    table
        .numeric(name)
        .with_context(|| format!("{context}: column '{name}' not found"))
}

pub fn derive_column(table: &RawTable, derive: &Derive) -> Result<Vec<Option<f64>>> {
    let ctx = format!("derive '{}'", derive.name());
    let n = table.row_count();
    Ok(match derive {
        Derive::Recode { source, map, .. } => {
            let src = numeric(table, source, &ctx)?;
            let mut parsed = Vec::with_capacity(map.len());
            for (k, v) in map {
                let key: f64 = k.trim().parse().with_context(|| format!("{ctx}: map key '{k}' is not a number"))?;
                parsed.push((key, *v));
            }
            src.iter()
                .map(|x| x.and_then(|x| parsed.iter().find(|(k, _)| *k == x).map(|(_, v)| *v)))
                .collect()
        }
        Derive::RowMean { sources, min_present, .. } => {
            let cols = sources
                .iter()
                .map(|s| numeric(table, s, &ctx))
                .collect::<Result<Vec<_>>>()?;
            (0..n)
                .map(|i| {
                    let present: Vec<f64> = cols.iter().filter_map(|c| c[i]).collect();
                    (present.len() >= (*min_present).max(1)).then(|| present.iter().sum::<f64>() / present.len() as f64)
                })
                .collect()
        }
        Derive::AnyOf { rules, .. } => {
            let cols = rules
                .iter()
                .map(|r| numeric(table, &r.column, &ctx))
                .collect::<Result<Vec<_>>>()?;
            (0..n)
                .map(|i| {
                    let results: Vec<Option<bool>> = rules.iter().zip(&cols).map(|(r, c)| r.eval(c[i])).collect();
                    if results.contains(&Some(true)) {
                        Some(1.0)
                    } else if results.iter().all(Option::is_some) {
                        Some(0.0)
                    } else {
                        None
                    }
                })
                .collect()
        }
        Derive::Bins { source, edges, .. } => {
            let src = numeric(table, source, &ctx)?;
            src.iter()
                .map(|x| {
                    let x = (*x)?;
                    let bin = edges.iter().take_while(|&&e| x >= e).count();
                    (bin > 0).then_some(bin as f64)
                })
                .collect()
        }
    })
}

/// Full preparation: table, row filters, design, domain filters.
pub fn load(config: &RunConfig) -> Result<Loaded> {
    config.validate()?;
    let (table, inputs) = load_table(config)?;
    let merged = table.row_count();

    let mut keep = vec![true; merged];
    for f in config.filters.iter().filter(|f| f.scope == FilterScope::Rows) {
        let col = numeric(&table, &f.column, "filter")?;
        let cond = f.condition();
        for (k, x) in keep.iter_mut().zip(&col) {
            *k &= cond.eval(*x).unwrap_or(false);
        }
    }
    let table = table.filter_rows(&keep);
    let after_row_filters = table.row_count();

    let design = config.require_design()?;
    let mapping = DesignMapping::new(&design.weight, &design.strata, &design.psu);
    let frame = build_design(&table, &mapping)
        .with_context(|| "cannot build the survey design (check [design] columns and weights)")?
        .with_policy(design.lonely_psu);
    if frame.dropped_rows() > 0 {
        log::warn!(
            "{} rows dropped for a missing weight, stratum or PSU",
            frame.dropped_rows()
        );
    }
    let design_rows = frame.len();

    let mut frame = frame;
    for f in config.filters.iter().filter(|f| f.scope == FilterScope::Domain) {
        if !frame.has_variable(&f.column) {
            bail!("domain filter: column '{}' not found", f.column);
        }
        let cond = f.condition();
        frame = frame
            .subset_domain(|o| cond.eval(o.value(&f.column)).unwrap_or(false))
            .with_context(|| format!("domain filter on '{}' leaves no rows", f.column))?;
    }
    let domain_rows = frame.domain_size();
    Ok(Loaded {
        frame,
        inputs,
        counts: SampleCounts {
            merged,
            after_row_filters,
            design_rows,
            domain_rows,
        },
    })
}

/// Restricts the domain to rows where the outcome and every feature are observed.
pub fn complete_cases(frame: &DesignFrame, outcome: &str, features: &[String]) -> Result<DesignFrame> {
    for name in std::iter::once(outcome).chain(features.iter().map(String::as_str)) {
        if !frame.has_variable(name) {
            bail!("column '{name}' not found");
        }
    }
    let refs: Vec<&str> = features.iter().map(String::as_str).collect();
    let frame = frame
        .with_roles(Some(outcome), &refs)
        .context("cannot set outcome and features")?;
    frame
        .subset_domain(|o| o.value(outcome).is_some() && refs.iter().all(|f| o.value(f).is_some()))
        .context("no complete cases for the outcome and features")
}
