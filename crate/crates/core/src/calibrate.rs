//! Weight adjustment: poststratification, raking and trimming.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, DesignFrame};
use crate::ingest::{self, format_number, IngestError};
use crate::stats;

#[derive(Debug, Error)]
pub enum CalibrateError {
    #[error("no target for observed cell {cell} of {variables}")]
    MissingTarget { variables: String, cell: String },
    #[error("target {target} for cell {cell} of {variables} must be positive")]
    NonPositiveTarget {
        variables: String,
        cell: String,
        target: f64,
    },
    #[error("cell {cell} of {variables} has a target but no sampled rows")]
    EmptyCellWithTarget { variables: String, cell: String },
    #[error("row {row} has no value for '{variable}'")]
    MissingLevel { variable: String, row: usize },
    #[error("{scale} targets of {variables} sum to {sum}, expected {expected}")]
    SharesDoNotSum {
        variables: String,
        scale: &'static str,
        sum: f64,
        expected: f64,
    },
    #[error("margin grand totals disagree: {0:?}")]
    InconsistentTotals(Vec<f64>),
    #[error("raking did not converge in {iterations} cycles (max margin error {error:.3e})")]
    NonConvergence { iterations: usize, error: f64 },
    #[error("no margins given")]
    NoMargins,
    #[error("cap {cap} is below the smallest weight {min}")]
    CapBelowMin { cap: f64, min: f64 },
    #[error("quantile {0} outside (0.5, 1)")]
    InvalidQuantile(f64),
    #[error("stratum '{0}' cannot keep its total with every weight at or below the cap")]
    CapInfeasible(String),
    #[error("bad target file: {0}")]
    BadTargetFile(String),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetScale {
    #[default]
    Total,
    Proportion,
    Percent,
}

/// Population targets for the cells of one variable or a cross of several.
/// Cell keys hold one level code per variable, rendered as by
/// [`format_number`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginTarget {
    pub variables: Vec<String>,
    pub targets: BTreeMap<Vec<String>, f64>,
    #[serde(default)]
    pub scale: TargetScale,
    /// Population size for proportion or percent targets; defaults to the
    /// current weighted total of the domain.
    #[serde(default)]
    pub grand_total: Option<f64>,
}

impl MarginTarget {
    /// Single-variable margin from `(level, target)` pairs.
    pub fn single(variable: &str, targets: &[(f64, f64)], scale: TargetScale) -> Self {
        MarginTarget {
            variables: vec![variable.to_string()],
            targets: targets.iter().map(|&(l, t)| (vec![format_number(l)], t)).collect(),
            scale,
            grand_total: None,
        }
    }

    fn label(&self) -> String {
        self.variables.join("*")
    }

    /// Targets as population totals.
    fn totals(&self, current_total: f64) -> BTreeMap<Vec<String>, f64> {
        let g = self.grand_total.unwrap_or(current_total);
        let factor = match self.scale {
            TargetScale::Total => 1.0,
            TargetScale::Proportion => g,
            TargetScale::Percent => g / 100.0,
        };
        self.targets.iter().map(|(k, v)| (k.clone(), v * factor)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub iterations: usize,
    /// Largest relative gap between an adjusted cell total and its target.
    pub max_margin_error: f64,
    /// Min and max of new/old weight ratios over the adjusted rows.
    pub weight_ratio_range: (f64, f64),
    pub trimmed_mass: f64,
    /// Max margin error after each raking cycle.
    pub error_history: Vec<f64>,
}

/// Cell index of every domain row for a margin, plus the cell keys.
struct Cells {
    keys: Vec<Vec<String>>,
    /// `None` for rows outside the domain.
    of_row: Vec<Option<usize>>,
    targets: Vec<f64>,
}

fn resolve_cells(frame: &DesignFrame, margin: &MarginTarget, current_total: f64) -> Result<Cells, CalibrateError> {
    let columns = margin
        .variables
        .iter()
        .map(|v| frame.variable(v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut index: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    let mut keys = Vec::new();
    let mut of_row = vec![None; frame.len()];
    for (i, slot) in of_row.iter_mut().enumerate() {
        if !frame.domain_mask()[i] {
            continue;
        }
        let mut key = Vec::with_capacity(columns.len());
        for (name, col) in margin.variables.iter().zip(&columns) {
            match col[i] {
                Some(v) => key.push(format_number(v)),
                None => {
                    return Err(CalibrateError::MissingLevel {
                        variable: name.clone(),
                        row: i,
                    })
                }
            }
        }
        let next = index.len();
        let cell = *index.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            next
        });
        *slot = Some(cell);
    }
    let full = match margin.scale {
        TargetScale::Total => None,
        TargetScale::Proportion => Some(("proportion", 1.0)),
        TargetScale::Percent => Some(("percent", 100.0)),
    };
    if let Some((scale, expected)) = full {
        let sum: f64 = margin.targets.values().sum();
        if (sum - expected).abs() > 1e-6 * expected {
            return Err(CalibrateError::SharesDoNotSum {
                variables: margin.label(),
                scale,
                sum,
                expected,
            });
        }
    }
    let totals = margin.totals(current_total);
    let mut targets = Vec::with_capacity(keys.len());
    for key in &keys {
        match totals.get(key) {
            None => {
                return Err(CalibrateError::MissingTarget {
                    variables: margin.label(),
                    cell: key.join("*"),
                })
            }
            Some(&t) if !(t > 0.0 && t.is_finite()) => {
                return Err(CalibrateError::NonPositiveTarget {
                    variables: margin.label(),
                    cell: key.join("*"),
                    target: t,
                })
            }
            Some(&t) => targets.push(t),
        }
    }
    if let Some(key) = totals.keys().find(|k| !index.contains_key(*k)) {
        return Err(CalibrateError::EmptyCellWithTarget {
            variables: margin.label(),
            cell: key.join("*"),
        });
    }
    Ok(Cells { keys, of_row, targets })
}

impl Cells {
    fn current(&self, w: &[f64]) -> Vec<f64> {
        let mut sums = vec![0.0; self.keys.len()];
        for (c, &wi) in self.of_row.iter().zip(w) {
            if let Some(c) = c {
                sums[*c] += wi;
            }
        }
        sums
    }

    fn error(&self, w: &[f64]) -> f64 {
        self.current(w)
            .iter()
            .zip(&self.targets)
            .map(|(c, t)| ((c - t) / t).abs())
            .fold(0.0, f64::max)
    }

    fn adjust(&self, w: &mut [f64]) {
        let ratios: Vec<f64> = self.current(w).iter().zip(&self.targets).map(|(c, t)| t / c).collect();
        for (c, wi) in self.of_row.iter().zip(w.iter_mut()) {
            if let Some(c) = c {
                *wi *= ratios[*c];
            }
        }
    }
}

fn domain_total(frame: &DesignFrame) -> f64 {
    frame.weights().iter().zip(frame.domain_mask()).filter(|(_, &d)| d).map(|(w, _)| w).sum()
}

fn ratio_range(old: &[f64], new: &[f64], mask: &[bool]) -> (f64, f64) {
    old.iter()
        .zip(new)
        .zip(mask)
        .filter(|(_, &d)| d)
        .map(|((o, n), _)| n / o)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)))
}

/// One-pass adjustment so each cell's weighted total equals its target:
/// `w' = w * T_cell / W_cell` for domain rows.
pub fn poststratify(frame: &DesignFrame, target: &MarginTarget) -> Result<(DesignFrame, CalibrationReport), CalibrateError> {
    let cells = resolve_cells(frame, target, domain_total(frame))?;
    let mut w = frame.weights().to_vec();
    cells.adjust(&mut w);
    let err = cells.error(&w);
    let report = CalibrationReport {
        iterations: 1,
        max_margin_error: err,
        weight_ratio_range: ratio_range(frame.weights(), &w, frame.domain_mask()),
        trimmed_mass: 0.0,
        error_history: vec![err],
    };
    Ok((frame.with_weights(w)?, report))
}

/// Iterative proportional fitting over several margins until the largest
/// relative margin error is at most `tol`.
pub fn rake(
    frame: &DesignFrame,
    margins: &[MarginTarget],
    tol: f64,
    max_iter: usize,
) -> Result<(DesignFrame, CalibrationReport), CalibrateError> {
    if margins.is_empty() {
        return Err(CalibrateError::NoMargins);
    }
    let current_total = domain_total(frame);
    let cells = margins
        .iter()
        .map(|m| resolve_cells(frame, m, current_total))
        .collect::<Result<Vec<_>, _>>()?;
    let grand: Vec<f64> = cells.iter().map(|c| c.targets.iter().sum()).collect();
    let reference = grand[0];
    if grand.iter().any(|g| ((g - reference) / reference).abs() > tol.max(1e-12)) {
        return Err(CalibrateError::InconsistentTotals(grand));
    }
    let mut w = frame.weights().to_vec();
    let mut history = Vec::new();
    let mut err = f64::INFINITY;
    for _ in 0..max_iter {
        for c in &cells {
            c.adjust(&mut w);
        }
        err = cells.iter().map(|c| c.error(&w)).fold(0.0, f64::max);
        history.push(err);
        if err <= tol {
            let report = CalibrationReport {
                iterations: history.len(),
                max_margin_error: err,
                weight_ratio_range: ratio_range(frame.weights(), &w, frame.domain_mask()),
                trimmed_mass: 0.0,
                error_history: history,
            };
            return Ok((frame.with_weights(w)?, report));
        }
    }
    Err(CalibrateError::NonConvergence {
        iterations: max_iter,
        error: err,
    })
}

pub const DEFAULT_RAKE_TOL: f64 = 1e-6;
pub const DEFAULT_RAKE_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum TrimCap {
    Absolute(f64),
    /// Cap at this quantile of the weights, in (0.5, 1).
    Quantile(f64),
}

impl Default for TrimCap {
    fn default() -> Self {
        TrimCap::Quantile(0.99)
    }
}

/// Caps weights. With `redistribute`, the mass removed in each stratum is
/// spread over that stratum's uncapped rows in proportion to their weights
/// (repeating while that pushes new rows over the cap), so every stratum
/// total is preserved.
pub fn trim_weights(
    frame: &DesignFrame,
    cap: TrimCap,
    redistribute: bool,
) -> Result<(DesignFrame, CalibrationReport), CalibrateError> {
    let old = frame.weights();
    let min = old.iter().copied().fold(f64::INFINITY, f64::min);
    let c = match cap {
        TrimCap::Absolute(c) => c,
        TrimCap::Quantile(q) => {
            if !(q > 0.5 && q < 1.0) {
                return Err(CalibrateError::InvalidQuantile(q));
            }
            stats::quantile(old, q)
        }
    };
    if c.is_nan() || c < min {
        return Err(CalibrateError::CapBelowMin { cap: c, min });
    }
    let mut w = old.to_vec();
    let mut trimmed_mass = 0.0;
    let mut iterations = 0;
    if redistribute {
        let mut rows_by_stratum = vec![Vec::new(); frame.strata_count()];
        for (i, &h) in frame.strata().iter().enumerate() {
            rows_by_stratum[h].push(i);
        }
        for (h, rows) in rows_by_stratum.iter().enumerate() {
            let total: f64 = rows.iter().map(|&i| w[i]).sum();
            if total > c * rows.len() as f64 * (1.0 + 1e-12) {
                return Err(CalibrateError::CapInfeasible(frame.strata_labels()[h].clone()));
            }
            let mut capped = vec![false; rows.len()];
            loop {
                let mut excess = 0.0;
                for (k, &i) in rows.iter().enumerate() {
                    if w[i] > c {
                        excess += w[i] - c;
                        w[i] = c;
                        capped[k] = true;
                    }
                }
                if excess <= 0.0 {
                    break;
                }
                iterations += 1;
                trimmed_mass += excess;
                let free: f64 = rows.iter().zip(&capped).filter(|(_, &cp)| !cp).map(|(&i, _)| w[i]).sum();
                if free <= 0.0 {
                    return Err(CalibrateError::CapInfeasible(frame.strata_labels()[h].clone()));
                }
                let factor = 1.0 + excess / free;
                for (&i, &cp) in rows.iter().zip(&capped) {
                    if !cp {
                        w[i] *= factor;
                    }
                }
            }
        }
    } else {
        for wi in &mut w {
            if *wi > c {
                trimmed_mass += *wi - c;
                *wi = c;
            }
        }
        iterations = 1;
    }
    let report = CalibrationReport {
        iterations,
        max_margin_error: 0.0,
        weight_ratio_range: ratio_range(old, &w, &vec![true; w.len()]),
        trimmed_mass,
        error_history: Vec::new(),
    };
    Ok((frame.with_weights(w)?, report))
}

/// Reads margin targets from CSV with columns `variable,level,target`.
/// Crossed cells use `*` in both fields (e.g. `sex*agegrp`, `1*3`).
pub fn read_margin_targets(path: impl AsRef<Path>, scale: TargetScale) -> Result<Vec<MarginTarget>, CalibrateError> {
    let path = path.as_ref();
    let mut hints = std::collections::HashMap::new();
    hints.insert("variable".to_string(), ingest::ColumnHint::Text);
    hints.insert("level".to_string(), ingest::ColumnHint::Text);
    let table = ingest::read_csv(path, Some(&hints))?;
    let text = |name: &str| -> Result<Vec<String>, CalibrateError> {
        Ok(table
            .require(name)?
            .values
            .iter()
            .map(|c| match c {
                ingest::Cell::Num(v) => format_number(*v),
                ingest::Cell::Missing(code) => code.clone().unwrap_or_default(),
            })
            .collect())
    };
    let variables = text("variable")?;
    let levels = text("level")?;
    let targets = table.numeric("target")?;
    let mut margins: Vec<MarginTarget> = Vec::new();
    for ((var, level), target) in variables.iter().zip(&levels).zip(&targets) {
        let target = target.ok_or_else(|| CalibrateError::BadTargetFile(format!("missing target for {var}={level}")))?;
        let vars: Vec<String> = var.split('*').map(|s| s.trim().to_string()).collect();
        let key = level
            .split('*')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>().map(format_number).unwrap_or_else(|_| s.to_string())
            })
            .collect::<Vec<_>>();
        if key.len() != vars.len() {
            return Err(CalibrateError::BadTargetFile(format!("level '{level}' does not match '{var}'")));
        }
        match margins.iter_mut().find(|m| m.variables == vars) {
            Some(m) => {
                m.targets.insert(key, target);
            }
            None => margins.push(MarginTarget {
                variables: vars,
                targets: BTreeMap::from([(key, target)]),
                scale,
                grand_total: None,
            }),
        }
    }
    Ok(margins)
}
