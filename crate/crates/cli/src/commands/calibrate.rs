//! Weight adjustment: poststratification, raking or trimming.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use svyml::calibrate::{
    poststratify, rake, read_margin_targets, trim_weights, MarginTarget, TargetScale, TrimCap, DEFAULT_RAKE_MAX_ITER,
    DEFAULT_RAKE_TOL,
};
use svyml::estimate::weighted_mean;
use svyml::ingest::format_number;
use svyml::{validate_design, DesignFrame};

use crate::config::{CalibrationMethod, RunConfig};
use crate::data;
use crate::report::{int, num, text, Report, Table};

fn domain_total(frame: &DesignFrame) -> f64 {
    frame
        .weights()
        .iter()
        .zip(frame.domain_mask())
        .filter(|(_, &d)| d)
        .map(|(w, _)| w)
        .sum()
}

/// Weighted total of each target cell over domain rows.
fn cell_totals(frame: &DesignFrame, margin: &MarginTarget) -> Result<BTreeMap<Vec<String>, f64>> {
    let columns = margin
        .variables
        .iter()
        .map(|v| frame.variable(v).with_context(|| format!("margin variable '{v}' not found")))
        .collect::<Result<Vec<_>>>()?;
    let mut totals = BTreeMap::new();
    for i in (0..frame.len()).filter(|&i| frame.domain_mask()[i]) {
        let key: Option<Vec<String>> = columns.iter().map(|c| c[i].map(format_number)).collect();
        if let Some(key) = key {
            *totals.entry(key).or_insert(0.0) += frame.weights()[i];
        }
    }
    Ok(totals)
}

fn target_totals(margin: &MarginTarget, current_total: f64) -> BTreeMap<Vec<String>, f64> {
    let g = margin.grand_total.unwrap_or(current_total);
    let factor = match margin.scale {
        TargetScale::Total => 1.0,
        TargetScale::Proportion => g,
        TargetScale::Percent => g / 100.0,
    };
    margin.targets.iter().map(|(k, v)| (k.clone(), v * factor)).collect()
}

pub fn calibrate(config: &RunConfig) -> Result<Report> {
    let spec = config.calibrate.as_ref().context("no [calibrate] section in the configuration")?;
    let loaded = data::load(config)?;
    let frame = &loaded.frame;
    let mut report = Report::new("calibrate", config);
    report.inputs = loaded.inputs.clone();
    report.sample = Some(loaded.counts.clone());

    let margins = match (spec.method, &spec.targets) {
        (CalibrationMethod::Trim, _) => Vec::new(),
        (_, None) => bail!("[calibrate] method {:?} needs a `targets` file", spec.method),
        (_, Some(path)) => {
            let path = config.resolve(path);
            read_margin_targets(&path, spec.scale).with_context(|| format!("cannot read targets {}", path.display()))?
        }
    };
    let tol = spec.tol.unwrap_or(DEFAULT_RAKE_TOL);
    let (adjusted, outcome) = match spec.method {
        CalibrationMethod::Poststratify => {
            if margins.len() != 1 {
                bail!("poststratify takes exactly one margin; the targets file holds {}", margins.len());
            }
            poststratify(frame, &margins[0])?
        }
        CalibrationMethod::Rake => rake(frame, &margins, tol, spec.max_iter.unwrap_or(DEFAULT_RAKE_MAX_ITER))?,
        CalibrationMethod::Trim => {
            let cap = match (spec.cap, spec.cap_quantile) {
                (Some(_), Some(_)) => bail!("set either `cap` or `cap_quantile`, not both"),
                (Some(c), None) => TrimCap::Absolute(c),
                (None, Some(q)) => TrimCap::Quantile(q),
                (None, None) => TrimCap::default(),
            };
            trim_weights(frame, cap, spec.redistribute)?
        }
    };

    let before = validate_design(frame);
    let after = validate_design(&adjusted);
    let mut summary = Table::new("summary", &["quantity", "value"]);
    summary.push(vec![text("iterations"), int(outcome.iterations)]);
    summary.push(vec![text("max_margin_error"), num(outcome.max_margin_error)]);
    summary.push(vec![text("weight_ratio_min"), num(outcome.weight_ratio_range.0)]);
    summary.push(vec![text("weight_ratio_max"), num(outcome.weight_ratio_range.1)]);
    summary.push(vec![text("trimmed_mass"), num(outcome.trimmed_mass)]);
    summary.push(vec![text("weight_total_before"), num(domain_total(frame))]);
    summary.push(vec![text("weight_total_after"), num(domain_total(&adjusted))]);
    summary.push(vec![text("weight_cv_before"), num(before.weight_cv)]);
    summary.push(vec![text("weight_cv_after"), num(after.weight_cv)]);
    report.tables.push(summary);

    if !margins.is_empty() {
        report.check(
            "margins_met",
            outcome.max_margin_error <= tol,
            format!("max relative margin error {:e} (tolerance {tol:e})", outcome.max_margin_error),
        );
        let current = domain_total(frame);
        let mut table = Table::new("margins", &["variables", "level", "target", "before", "after"]);
        for m in &margins {
            let targets = target_totals(m, current);
            let b = cell_totals(frame, m)?;
            let a = cell_totals(&adjusted, m)?;
            for (key, target) in &targets {
                table.push(vec![
                    text(m.variables.join("*")),
                    text(key.join("*")),
                    num(*target),
                    num(b.get(key).copied().unwrap_or(0.0)),
                    num(a.get(key).copied().unwrap_or(0.0)),
                ]);
            }
        }
        report.tables.push(table);
    }

    let mut means = Table::new("means", &["variable", "before", "before_se", "after", "after_se"]);
    for v in &spec.means {
        if !frame.has_variable(v) {
            bail!("[calibrate] means: column '{v}' not found");
        }
        match (weighted_mean(frame, v), weighted_mean(&adjusted, v)) {
            (Ok(b), Ok(a)) => means.push(vec![text(v), num(b.point), num(b.se), num(a.point), num(a.se)]),
            (Err(e), _) | (_, Err(e)) => report.error(format!("mean of '{v}': {e}")),
        }
    }
    report.tables.push(means);

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row_id", "stratum", "psu", "weight_before", "weight_after"])?;
    for i in 0..frame.len() {
        w.write_record([
            (i + 1).to_string(),
            frame.strata_labels()[frame.strata()[i]].clone(),
            frame.psu_label(frame.psus()[i]).to_string(),
            frame.weights()[i].to_string(),
            adjusted.weights()[i].to_string(),
        ])?;
    }
    report.attach("calibrated weights", "weights.csv", w.into_inner().context("cannot render weights")?);
    Ok(report)
}
