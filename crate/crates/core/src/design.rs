//! The survey-design data frame consumed by every estimator.
//!
//! Rows carry a positive weight, a stratum and a PSU. PSU identity is the
//! `(stratum, psu)` pair, so PSU labels may repeat across strata. Domain
//! restriction only flips a mask: design structure is never subset away,
//! which keeps domain variances correct.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{format_number, Cell, Column, IngestError, RawTable};

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("column '{0}' not found")]
    MissingColumn(String),
    #[error("row {row}: weight {value} is not positive")]
    NonPositiveWeight { row: usize, value: f64 },
    #[error("row {row}: weight {value} is not finite")]
    NonFiniteWeight { row: usize, value: f64 },
    #[error("column '{name}' has {found} values, frame has {expected} rows")]
    LengthMismatch {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("variable '{0}' already exists")]
    DuplicateVariable(String),
    #[error("domain is empty")]
    EmptyDomain,
    #[error("stratum '{0}' has a single PSU and the lonely-PSU policy is 'error'")]
    LonelyPsu(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// What to do with a stratum that holds a single PSU when computing variances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LonelyPsuPolicy {
    /// Pool the stratum with the next stratum (in label order) for variance
    /// purposes only.
    #[default]
    AdjacentCollapse,
    /// Treat the PSU as a certainty unit: zero variance contribution.
    Certainty,
    Error,
}

/// Column names used to build a [`DesignFrame`] from a table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DesignMapping {
    pub weight: String,
    pub strata: String,
    pub psu: String,
    #[serde(default)]
    pub outcome: Option<String>,
    #[serde(default)]
    pub features: Vec<String>,
}

impl DesignMapping {
    pub fn new(weight: &str, strata: &str, psu: &str) -> Self {
        DesignMapping {
            weight: weight.into(),
            strata: strata.into(),
            psu: psu.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Variables {
    names: HashMap<String, usize>,
    order: Vec<String>,
    values: Vec<Vec<Option<f64>>>,
}

/// One group of PSUs over which the with-replacement variance is computed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarianceStratum {
    /// Design strata pooled into this group.
    pub strata: Vec<usize>,
    /// Global PSU indices in the group.
    pub psus: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignFrame {
    weights: Vec<f64>,
    stratum: Arc<Vec<usize>>,
    psu: Arc<Vec<usize>>,
    domain: Vec<bool>,
    strata_labels: Arc<Vec<String>>,
    psu_labels: Arc<Vec<String>>,
    psu_stratum: Arc<Vec<usize>>,
    variables: Arc<Variables>,
    outcome: Option<String>,
    features: Vec<String>,
    weight_name: String,
    strata_name: String,
    psu_name: String,
    policy: LonelyPsuPolicy,
    dropped: usize,
}

/// Borrowed view of one row.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    frame: &'a DesignFrame,
    row: usize,
}

impl<'a> Observation<'a> {
    pub fn row(&self) -> usize {
        self.row
    }
    pub fn weight(&self) -> f64 {
        self.frame.weights[self.row]
    }
    pub fn stratum(&self) -> &'a str {
        &self.frame.strata_labels[self.frame.stratum[self.row]]
    }
    pub fn psu(&self) -> &'a str {
        &self.frame.psu_labels[self.frame.psu[self.row]]
    }
    pub fn in_domain(&self) -> bool {
        self.frame.domain[self.row]
    }
    pub fn outcome(&self) -> Option<f64> {
        self.frame
            .outcome
            .as_deref()
            .and_then(|name| self.value(name))
    }
    pub fn features(&self) -> Vec<Option<f64>> {
        self.frame
            .features
            .iter()
            .map(|f| self.value(f))
            .collect()
    }
    /// Any numeric variable carried by the frame.
    pub fn value(&self, name: &str) -> Option<f64> {
        let v = &self.frame.variables;
        v.names.get(name).and_then(|&j| v.values[j][self.row])
    }
}

/// Builds a frame from already-aligned columns.
#[derive(Debug, Clone)]
pub struct DesignBuilder {
    weights: Vec<f64>,
    strata: Vec<String>,
    psus: Vec<String>,
    variables: Vec<(String, Vec<Option<f64>>)>,
    outcome: Option<String>,
    features: Vec<String>,
    policy: LonelyPsuPolicy,
    names: (String, String, String),
}

impl DesignBuilder {
    pub fn new(weights: Vec<f64>, strata: Vec<String>, psus: Vec<String>) -> Self {
        DesignBuilder {
            weights,
            strata,
            psus,
            variables: Vec::new(),
            outcome: None,
            features: Vec::new(),
            policy: LonelyPsuPolicy::default(),
            names: ("weight".into(), "stratum".into(), "psu".into()),
        }
    }

    pub fn variable(mut self, name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        self.variables.push((name.into(), values));
        self
    }

    /// Adds a fully observed variable.
    pub fn values(self, name: impl Into<String>, values: &[f64]) -> Self {
        let v = values.iter().copied().map(Some).collect();
        self.variable(name, v)
    }

    pub fn outcome(mut self, name: impl Into<String>) -> Self {
        self.outcome = Some(name.into());
        self
    }

    pub fn features<S: Into<String>>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.features = names.into_iter().map(Into::into).collect();
        self
    }

    pub fn policy(mut self, policy: LonelyPsuPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn names(mut self, weight: &str, strata: &str, psu: &str) -> Self {
        self.names = (weight.into(), strata.into(), psu.into());
        self
    }

    pub fn build(self) -> Result<DesignFrame, DesignError> {
        let n = self.weights.len();
        for (name, len) in [("strata", self.strata.len()), ("psu", self.psus.len())] {
            if len != n {
                return Err(DesignError::LengthMismatch {
                    name: name.into(),
                    expected: n,
                    found: len,
                });
            }
        }
        check_weights(&self.weights)?;

        let mut strata_labels: Vec<String> = self.strata.clone();
        strata_labels.sort_by(|a, b| label_cmp(a, b));
        strata_labels.dedup();
        let strata_index: HashMap<&str, usize> = strata_labels
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let stratum: Vec<usize> = self.strata.iter().map(|s| strata_index[s.as_str()]).collect();

        let mut pairs: Vec<(usize, &str)> = stratum
            .iter()
            .zip(&self.psus)
            .map(|(&h, c)| (h, c.as_str()))
            .collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| label_cmp(a.1, b.1)));
        pairs.dedup();
        let psu_index: HashMap<(usize, &str), usize> =
            pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        let psu: Vec<usize> = stratum
            .iter()
            .zip(&self.psus)
            .map(|(&h, c)| psu_index[&(h, c.as_str())])
            .collect();
        let psu_labels: Vec<String> = pairs.iter().map(|p| p.1.to_string()).collect();
        let psu_stratum: Vec<usize> = pairs.iter().map(|p| p.0).collect();

        let mut vars = Variables {
            names: HashMap::new(),
            order: Vec::new(),
            values: Vec::new(),
        };
        for (name, values) in self.variables {
            if values.len() != n {
                return Err(DesignError::LengthMismatch {
                    name,
                    expected: n,
                    found: values.len(),
                });
            }
            if vars.names.contains_key(&name) {
                return Err(DesignError::DuplicateVariable(name));
            }
            vars.names.insert(name.clone(), vars.values.len());
            vars.order.push(name);
            vars.values.push(values);
        }
        for name in self.outcome.iter().chain(&self.features) {
            if !vars.names.contains_key(name) {
                return Err(DesignError::MissingColumn(name.clone()));
            }
        }

        Ok(DesignFrame {
            weights: self.weights,
            stratum: Arc::new(stratum),
            psu: Arc::new(psu),
            domain: vec![true; n],
            strata_labels: Arc::new(strata_labels),
            psu_labels: Arc::new(psu_labels),
            psu_stratum: Arc::new(psu_stratum),
            variables: Arc::new(vars),
            outcome: self.outcome,
            features: self.features,
            weight_name: self.names.0,
            strata_name: self.names.1,
            psu_name: self.names.2,
            policy: self.policy,
            dropped: 0,
        })
    }
}

fn check_weights(weights: &[f64]) -> Result<(), DesignError> {
    for (row, &value) in weights.iter().enumerate() {
        if !value.is_finite() {
            return Err(DesignError::NonFiniteWeight { row, value });
        }
        if value <= 0.0 {
            return Err(DesignError::NonPositiveWeight { row, value });
        }
    }
    Ok(())
}

/// Orders labels numerically when both parse as numbers, else lexically.
pub fn label_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn cell_label(cell: &Cell) -> Option<String> {
    match cell {
        Cell::Num(v) => Some(format_number(*v)),
        Cell::Missing(Some(code)) if !code.starts_with('.') => Some(code.clone()),
        Cell::Missing(_) => None,
    }
}

/// Builds a design frame from a table. Rows missing the weight, stratum or
/// PSU are dropped and counted; a present but non-positive weight is an
/// error naming the table row.
pub fn build_design(table: &RawTable, mapping: &DesignMapping) -> Result<DesignFrame, DesignError> {
    let weight_col = table.numeric(&mapping.weight).map_err(|_| DesignError::MissingColumn(mapping.weight.clone()))?;
    let strata_col = table
        .column(&mapping.strata)
        .ok_or_else(|| DesignError::MissingColumn(mapping.strata.clone()))?;
    let psu_col = table
        .column(&mapping.psu)
        .ok_or_else(|| DesignError::MissingColumn(mapping.psu.clone()))?;
    for name in mapping.outcome.iter().chain(&mapping.features) {
        if table.column(name).is_none() {
            return Err(DesignError::MissingColumn(name.clone()));
        }
    }

    let mut keep = Vec::with_capacity(table.row_count());
    for (row, &weight) in weight_col.iter().enumerate() {
        let complete = weight.is_some()
            && cell_label(&strata_col.values[row]).is_some()
            && cell_label(&psu_col.values[row]).is_some();
        if let Some(value) = weight {
            if !value.is_finite() {
                return Err(DesignError::NonFiniteWeight { row, value });
            }
            if value <= 0.0 {
                return Err(DesignError::NonPositiveWeight { row, value });
            }
        }
        keep.push(complete);
    }
    let rows: Vec<usize> = (0..table.row_count()).filter(|&i| keep[i]).collect();
    let dropped = table.row_count() - rows.len();
    if dropped > 0 {
        log::info!("build_design: dropped {dropped} rows with missing weight, stratum or PSU");
    }

    let weights = rows.iter().map(|&i| weight_col[i].unwrap_or_default()).collect();
    let strata = rows
        .iter()
        .map(|&i| cell_label(&strata_col.values[i]).unwrap_or_default())
        .collect();
    let psus = rows
        .iter()
        .map(|&i| cell_label(&psu_col.values[i]).unwrap_or_default())
        .collect();
    let mut builder = DesignBuilder::new(weights, strata, psus).names(
        &mapping.weight,
        &mapping.strata,
        &mapping.psu,
    );
    for column in table.columns() {
        let values = rows.iter().map(|&i| column.values[i].as_f64()).collect();
        builder = builder.variable(column.name.clone(), values);
    }
    if let Some(outcome) = &mapping.outcome {
        builder = builder.outcome(outcome.clone());
    }
    builder = builder.features(mapping.features.clone());
    let mut frame = builder.build()?;
    frame.dropped = dropped;
    Ok(frame)
}

impl DesignFrame {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain_mask(&self) -> &[bool] {
        &self.domain
    }

    pub fn domain_size(&self) -> usize {
        self.domain.iter().filter(|&&d| d).count()
    }

    /// Stratum index of each row (into [`DesignFrame::strata_labels`]).
    pub fn strata(&self) -> &[usize] {
        &self.stratum
    }

    /// Global PSU index of each row; identifies the `(stratum, psu)` pair.
    pub fn psus(&self) -> &[usize] {
        &self.psu
    }

    pub fn strata_labels(&self) -> &[String] {
        &self.strata_labels
    }

    pub fn psu_label(&self, psu: usize) -> &str {
        &self.psu_labels[psu]
    }

    /// Stratum of each global PSU.
    pub fn psu_strata(&self) -> &[usize] {
        &self.psu_stratum
    }

    pub fn strata_count(&self) -> usize {
        self.strata_labels.len()
    }

    pub fn psu_count(&self) -> usize {
        self.psu_labels.len()
    }

    /// Global PSU indices grouped by stratum.
    pub fn psus_by_stratum(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.strata_count()];
        for (p, &h) in self.psu_stratum.iter().enumerate() {
            groups[h].push(p);
        }
        groups
    }

    pub fn policy(&self) -> LonelyPsuPolicy {
        self.policy
    }

    pub fn with_policy(&self, policy: LonelyPsuPolicy) -> DesignFrame {
        DesignFrame {
            policy,
            ..self.clone()
        }
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped
    }

    pub fn weight_name(&self) -> &str {
        &self.weight_name
    }
    pub fn strata_name(&self) -> &str {
        &self.strata_name
    }
    pub fn psu_name(&self) -> &str {
        &self.psu_name
    }

    pub fn outcome_name(&self) -> Option<&str> {
        self.outcome.as_deref()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.features
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variables.order
    }

    pub fn has_variable(&self, name: &str) -> bool {
        self.variables.names.contains_key(name)
    }

    pub fn variable(&self, name: &str) -> Result<&[Option<f64>], DesignError> {
        self.variables
            .names
            .get(name)
            .map(|&j| self.variables.values[j].as_slice())
            .ok_or_else(|| DesignError::MissingColumn(name.to_string()))
    }

    pub fn outcome(&self) -> Result<&[Option<f64>], DesignError> {
        let name = self
            .outcome
            .as_deref()
            .ok_or_else(|| DesignError::MissingColumn("<outcome>".into()))?;
        self.variable(name)
    }

    pub fn observation(&self, row: usize) -> Observation<'_> {
        Observation { frame: self, row }
    }

    pub fn observations(&self) -> impl Iterator<Item = Observation<'_>> {
        (0..self.len()).map(move |row| Observation { frame: self, row })
    }

    /// Same design with new base weights (must be positive and finite).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<DesignFrame, DesignError> {
        if weights.len() != self.len() {
            return Err(DesignError::LengthMismatch {
                name: self.weight_name.clone(),
                expected: self.len(),
                found: weights.len(),
            });
        }
        check_weights(&weights)?;
        Ok(DesignFrame {
            weights,
            ..self.clone()
        })
    }

    /// Same design with a different outcome/feature selection.
    pub fn with_roles(&self, outcome: Option<&str>, features: &[&str]) -> Result<DesignFrame, DesignError> {
        for name in outcome.iter().chain(features) {
            self.variable(name)?;
        }
        Ok(DesignFrame {
            outcome: outcome.map(str::to_string),
            features: features.iter().map(|s| s.to_string()).collect(),
            ..self.clone()
        })
    }

    /// Adds a derived variable.
    pub fn with_variable(&self, name: &str, values: Vec<Option<f64>>) -> Result<DesignFrame, DesignError> {
        if values.len() != self.len() {
            return Err(DesignError::LengthMismatch {
                name: name.to_string(),
                expected: self.len(),
                found: values.len(),
            });
        }
        if self.has_variable(name) {
            return Err(DesignError::DuplicateVariable(name.to_string()));
        }
        let mut vars = (*self.variables).clone();
        vars.names.insert(name.to_string(), vars.values.len());
        vars.order.push(name.to_string());
        vars.values.push(values);
        Ok(DesignFrame {
            variables: Arc::new(vars),
            ..self.clone()
        })
    }

    /// Restricts estimation to rows satisfying `predicate` (intersected with
    /// any existing domain). Strata and PSUs are kept intact.
    pub fn subset_domain<F>(&self, predicate: F) -> Result<DesignFrame, DesignError>
    where
        F: Fn(&Observation<'_>) -> bool,
    {
        let domain: Vec<bool> = self
            .observations()
            .map(|o| o.in_domain() && predicate(&o))
            .collect();
        if !domain.iter().any(|&d| d) {
            return Err(DesignError::EmptyDomain);
        }
        Ok(DesignFrame {
            domain,
            ..self.clone()
        })
    }

    /// Groups PSUs into variance strata according to the lonely-PSU policy.
    pub fn variance_strata(&self) -> Result<Vec<VarianceStratum>, DesignError> {
        let by_stratum = self.psus_by_stratum();
        match self.policy {
            LonelyPsuPolicy::Error => {
                if let Some(h) = by_stratum.iter().position(|g| g.len() < 2) {
                    return Err(DesignError::LonelyPsu(self.strata_labels[h].clone()));
                }
                Ok(singleton_groups(by_stratum))
            }
            LonelyPsuPolicy::Certainty => Ok(singleton_groups(by_stratum)
                .into_iter()
                .filter(|g| g.psus.len() >= 2)
                .collect()),
            LonelyPsuPolicy::AdjacentCollapse => {
                let mut groups: Vec<VarianceStratum> = Vec::new();
                let mut open = VarianceStratum {
                    strata: Vec::new(),
                    psus: Vec::new(),
                };
                for (h, psus) in by_stratum.into_iter().enumerate() {
                    open.strata.push(h);
                    open.psus.extend(psus);
                    if open.psus.len() >= 2 {
                        groups.push(std::mem::replace(
                            &mut open,
                            VarianceStratum {
                                strata: Vec::new(),
                                psus: Vec::new(),
                            },
                        ));
                    }
                }
                if !open.strata.is_empty() {
                    match groups.last_mut() {
                        Some(last) => {
                            last.strata.extend(open.strata);
                            last.psus.extend(open.psus);
                        }
                        None => groups.push(open),
                    }
                }
                Ok(groups)
            }
        }
    }

    /// Writes design columns, the domain mask and every variable as CSV.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), DesignError> {
        let mut columns = vec![
            Column::numeric(self.weight_name.clone(), self.weights.iter().map(|&w| Cell::Num(w)).collect()),
            Column::numeric(
                self.strata_name.clone(),
                self.stratum
                    .iter()
                    .map(|&h| label_cell(&self.strata_labels[h]))
                    .collect(),
            ),
            Column::numeric(
                self.psu_name.clone(),
                self.psu.iter().map(|&p| label_cell(&self.psu_labels[p])).collect(),
            ),
            Column::numeric(
                "domain",
                self.domain.iter().map(|&d| Cell::Num(if d { 1.0 } else { 0.0 })).collect(),
            ),
        ];
        for name in &self.variables.order {
            if [&self.weight_name, &self.strata_name, &self.psu_name, &"domain".to_string()]
                .contains(&name)
            {
                continue;
            }
            columns.push(Column::from_options(name.clone(), self.variable(name)?));
        }
        let table = RawTable::with_row_count("design", columns, self.len())?;
        crate::ingest::write_csv(&table, path)?;
        Ok(())
    }
}

fn label_cell(label: &str) -> Cell {
    label
        .parse::<f64>()
        .map(Cell::Num)
        .unwrap_or_else(|_| Cell::Missing(Some(label.to_string())))
}

fn singleton_groups(by_stratum: Vec<Vec<usize>>) -> Vec<VarianceStratum> {
    by_stratum
        .into_iter()
        .enumerate()
        .map(|(h, psus)| VarianceStratum {
            strata: vec![h],
            psus,
        })
        .collect()
}

/// Summary of a frame's design structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnostics {
    pub n: usize,
    pub strata_count: usize,
    pub psu_per_stratum: BTreeMap<String, usize>,
    pub lonely_psu_strata: Vec<String>,
    pub weight_cv: f64,
    pub weight_range: (f64, f64),
}

/// Describes the design. Lonely-PSU strata are logged as warnings.
pub fn validate_design(frame: &DesignFrame) -> DesignDiagnostics {
    let by_stratum = frame.psus_by_stratum();
    let psu_per_stratum: BTreeMap<String, usize> = frame
        .strata_labels()
        .iter()
        .zip(&by_stratum)
        .map(|(label, g)| (label.clone(), g.len()))
        .collect();
    let lonely_psu_strata: Vec<String> = frame
        .strata_labels()
        .iter()
        .zip(&by_stratum)
        .filter(|(_, g)| g.len() == 1)
        .map(|(label, _)| label.clone())
        .collect();
    for label in &lonely_psu_strata {
        log::warn!("stratum {label} has a single PSU ({:?} policy applies)", frame.policy());
    }
    let w = frame.weights();
    let n = w.len();
    let (weight_cv, weight_range) = if n == 0 {
        (0.0, (0.0, 0.0))
    } else {
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let min = w.iter().copied().fold(f64::INFINITY, f64::min);
        let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (var.sqrt() / mean, (min, max))
    };
    DesignDiagnostics {
        n,
        strata_count: frame.strata_count(),
        psu_per_stratum,
        lonely_psu_strata,
        weight_cv,
        weight_range,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(strata: usize, psus: usize, per: usize) -> DesignFrame {
        let mut w = Vec::new();
        let mut s = Vec::new();
        let mut c = Vec::new();
        let mut y = Vec::new();
        for h in 0..strata {
            for j in 0..psus {
                for k in 0..per {
                    w.push(1.0 + k as f64);
                    s.push(format!("{}", h + 1));
                    c.push(format!("{}", j + 1));
                    y.push((h * 10 + j + k) as f64);
                }
            }
        }
        DesignBuilder::new(w, s, c).values("y", &y).build().unwrap()
    }

    #[test]
    fn psu_identity_is_nested_in_stratum() {
        let f = grid(4, 2, 3);
        assert_eq!(f.strata_count(), 4);
        assert_eq!(f.psu_count(), 8);
        let d = validate_design(&f);
        assert!(d.lonely_psu_strata.is_empty());
        assert!(d.psu_per_stratum.values().all(|&n| n == 2));
    }

    #[test]
    fn lonely_stratum_is_listed() {
        let f = DesignBuilder::new(
            vec![1.0; 5],
            ["1", "1", "2", "3", "3"].map(String::from).to_vec(),
            ["1", "2", "1", "1", "2"].map(String::from).to_vec(),
        )
        .build()
        .unwrap();
        assert_eq!(validate_design(&f).lonely_psu_strata, vec!["2".to_string()]);
        // Collapse pools stratum 2 with stratum 3.
        let groups = f.variance_strata().unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[1].strata, vec![1, 2]);
        assert_eq!(groups[1].psus.len(), 3);
        let cert = f.with_policy(LonelyPsuPolicy::Certainty).variance_strata().unwrap();
        assert_eq!(cert.len(), 2);
        assert!(matches!(
            f.with_policy(LonelyPsuPolicy::Error).variance_strata(),
            Err(DesignError::LonelyPsu(s)) if s == "2"
        ));
    }

    #[test]
    fn trailing_lonely_stratum_joins_previous_group() {
        let f = DesignBuilder::new(
            vec![1.0; 3],
            ["1", "1", "2"].map(String::from).to_vec(),
            ["1", "2", "1"].map(String::from).to_vec(),
        )
        .build()
        .unwrap();
        let groups = f.variance_strata().unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].psus.len(), 3);
    }

    #[test]
    fn negative_weight_names_row() {
        let t = RawTable::new(
            "t",
            vec![
                Column::numeric("w", vec![Cell::Num(1.0), Cell::Num(-2.0)]),
                Column::numeric("s", vec![Cell::Num(1.0), Cell::Num(1.0)]),
                Column::numeric("c", vec![Cell::Num(1.0), Cell::Num(2.0)]),
            ],
        )
        .unwrap();
        let err = build_design(&t, &DesignMapping::new("w", "s", "c")).unwrap_err();
        assert!(matches!(err, DesignError::NonPositiveWeight { row: 1, value } if value == -2.0));
    }

    #[test]
    fn missing_design_values_are_dropped_and_counted() {
        let t = RawTable::new(
            "t",
            vec![
                Column::numeric("w", vec![Cell::Num(1.0), Cell::Missing(None), Cell::Num(3.0)]),
                Column::numeric("s", vec![Cell::Num(1.0), Cell::Num(1.0), Cell::Missing(None)]),
                Column::numeric("c", vec![Cell::Num(1.0), Cell::Num(2.0), Cell::Num(2.0)]),
            ],
        )
        .unwrap();
        let f = build_design(&t, &DesignMapping::new("w", "s", "c")).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.dropped_rows(), 2);
        assert!(matches!(
            build_design(&t, &DesignMapping::new("nope", "s", "c")),
            Err(DesignError::MissingColumn(_))
        ));
    }

    #[test]
    fn build_is_deterministic() {
        let t = RawTable::new(
            "t",
            vec![
                Column::numeric("w", vec![Cell::Num(2.0), Cell::Num(1.0), Cell::Num(3.0)]),
                Column::numeric("s", vec![Cell::Num(10.0), Cell::Num(9.0), Cell::Num(10.0)]),
                Column::numeric("c", vec![Cell::Num(2.0), Cell::Num(1.0), Cell::Num(1.0)]),
            ],
        )
        .unwrap();
        let m = DesignMapping::new("w", "s", "c");
        assert_eq!(build_design(&t, &m).unwrap(), build_design(&t, &m).unwrap());
        // Numeric label order, not lexical.
        assert_eq!(build_design(&t, &m).unwrap().strata_labels(), ["9", "10"]);
    }

    #[test]
    fn domain_keeps_structure() {
        let f = grid(3, 2, 4);
        let d = f.subset_domain(|o| o.value("y").unwrap() > 10.0).unwrap();
        assert_eq!(d.strata_count(), f.strata_count());
        assert_eq!(d.psus_by_stratum(), f.psus_by_stratum());
        assert!(d.domain_size() < f.len());
        let all = f.subset_domain(|_| true).unwrap();
        assert_eq!(all.domain_size(), f.len());
        assert!(matches!(f.subset_domain(|_| false), Err(DesignError::EmptyDomain)));
    }

    #[test]
    fn csv_export_has_mask() {
        let f = grid(2, 2, 1).subset_domain(|o| o.row() == 0).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        f.write_csv(out.path()).unwrap();
        let t = crate::ingest::read_csv(out.path(), None).unwrap();
        assert_eq!(t.numeric("domain").unwrap()[..2], [Some(1.0), Some(0.0)]);
    }
}
