//! Unweighted versus design-weighted descriptive tables.

use anyhow::{bail, Context, Result};
use svyml::estimate::{
    composition_table, design_effect, unweighted_mean, unweighted_proportion, weighted_mean_with,
    weighted_proportion_with, IntervalOptions,
};
use svyml::validate_design;

use crate::config::RunConfig;
use crate::data;
use crate::report::{int, num, text, Report, Table};

pub fn describe(config: &RunConfig) -> Result<Report> {
    let spec = config.describe.as_ref().context("no [describe] section in the configuration")?;
    if spec.means.is_empty() && spec.proportions.is_empty() && spec.compositions.is_empty() {
        bail!("[describe] lists no means, proportions or compositions");
    }
    let loaded = data::load(config)?;
    let frame = &loaded.frame;
    let mut report = Report::new("describe", config);
    report.inputs = loaded.inputs.clone();
    report.sample = Some(loaded.counts.clone());
    report.tables.push(design_table(frame));

    let options = IntervalOptions {
        critical: spec.critical,
        proportion: spec.proportion_interval,
    };
    let mut continuous = Table::new(
        "continuous",
        &[
            "variable", "label", "n", "unweighted_mean", "unweighted_se", "weighted_mean", "weighted_se",
            "weighted_ci_low", "weighted_ci_high", "diff", "pct_diff", "deff",
        ],
    );
    for m in &spec.means {
        require(frame, &m.column)?;
        let (u, w) = match (unweighted_mean(frame, &m.column), weighted_mean_with(frame, &m.column, options)) {
            (Ok(u), Ok(w)) => (u, w),
            (Err(e), _) | (_, Err(e)) => {
                report.error(format!("mean of '{}': {e}", m.column));
                continue;
            }
        };
        let deff = design_effect(frame, &m.column).map(|d| num(d.deff)).unwrap_or(serde_json::Value::Null);
        let diff = w.point - u.point;
        continuous.push(vec![
            text(&m.column),
            text(m.label.clone().unwrap_or_else(|| m.column.clone())),
            int(w.n),
            num(u.point),
            num(u.se),
            num(w.point),
            num(w.se),
            num(w.ci95.0),
            num(w.ci95.1),
            num(diff),
            num(100.0 * diff / u.point),
            deff,
        ]);
    }
    report.tables.push(continuous);

    let mut prevalence = Table::new(
        "prevalence",
        &[
            "variable", "label", "n", "unweighted_pct", "unweighted_se", "weighted_pct", "weighted_se",
            "weighted_ci_low", "weighted_ci_high", "diff_pp",
        ],
    );
    for p in &spec.proportions {
        require(frame, &p.column)?;
        let (u, w) = match (unweighted_proportion(frame, &p.column), weighted_proportion_with(frame, &p.column, options)) {
            (Ok(u), Ok(w)) => (u, w),
            (Err(e), _) | (_, Err(e)) => {
                report.error(format!("prevalence of '{}': {e}", p.column));
                continue;
            }
        };
        prevalence.push(vec![
            text(&p.column),
            text(p.label.clone().unwrap_or_else(|| p.column.clone())),
            int(w.n),
            num(u.point),
            num(u.se),
            num(w.point),
            num(w.se),
            num(w.ci95.0),
            num(w.ci95.1),
            num(w.point - u.point),
        ]);
    }
    report.tables.push(prevalence);

    for c in &spec.compositions {
        require(frame, &c.column)?;
        let rows = match composition_table(frame, &c.column, None) {
            Ok(rows) => rows,
            Err(e) => {
                report.error(format!("composition of '{}': {e}", c.column));
                continue;
            }
        };
        let mut table = Table::new(
            &format!("composition_{}", c.column),
            &["level", "label", "n", "sample_pct", "population_pct", "population_se", "diff_pp"],
        );
        for r in rows {
            let label = c.levels.get(&r.level).cloned().unwrap_or_else(|| r.level.clone());
            table.push(vec![
                text(&r.level),
                text(label),
                int(r.n),
                num(r.sample_pct),
                num(r.weighted_pct),
                num(r.weighted_se),
                num(r.diff_pp),
            ]);
        }
        report.tables.push(table);
    }
    Ok(report)
}

fn require(frame: &svyml::DesignFrame, column: &str) -> Result<()> {
    if !frame.has_variable(column) {
        bail!("[describe] refers to column '{column}', which is not in the data");
    }
    Ok(())
}

pub(crate) fn design_table(frame: &svyml::DesignFrame) -> Table {
    let d = validate_design(frame);
    let mut t = Table::new("design", &["quantity", "value"]);
    t.push(vec![text("rows"), int(d.n)]);
    t.push(vec![text("domain_rows"), int(frame.domain_size())]);
    t.push(vec![text("strata"), int(d.strata_count)]);
    t.push(vec![text("psus"), int(frame.psu_count())]);
    t.push(vec![text("lonely_psu_strata"), int(d.lonely_psu_strata.len())]);
    t.push(vec![text("weight_cv"), num(d.weight_cv)]);
    t.push(vec![text("weight_min"), num(d.weight_range.0)]);
    t.push(vec![text("weight_max"), num(d.weight_range.1)]);
    t
}
