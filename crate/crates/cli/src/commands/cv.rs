//! Repeated K-fold cross-validation over the split × training × evaluation grid.

use anyhow::{bail, Context, Result};
use svyml::cv::{
    assign_psu_folds_with, assign_random_folds, check_leakage, run_cv_multi, screen_folds, CvMetric, FoldPlan,
    DEFAULT_MIN_TEST_N, DEFAULT_MIN_TEST_POS,
};
use svyml::metrics::Metric;

use super::evaluate::fit;
use crate::config::{MetricName, RunConfig, SchemeName, Weighting};
use crate::data;
use crate::report::{int, num, opt, text, Report, Table};

fn scheme_label(s: SchemeName) -> &'static str {
    match s {
        SchemeName::Random => "random",
        SchemeName::Psu => "psu",
    }
}

fn weighting_label(w: Weighting) -> &'static str {
    match w {
        Weighting::Unweighted => "unweighted",
        Weighting::Weighted => "weighted",
    }
}

fn plan_csv(plan: &FoldPlan) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row_id", "repeat", "fold"])?;
    for (r, a) in plan.assignment.iter().enumerate() {
        for (i, f) in a.iter().enumerate() {
            w.write_record([(i + 1).to_string(), (r + 1).to_string(), (f + 1).to_string()])?;
        }
    }
    w.into_inner().context("cannot render fold CSV")
}

pub fn cv(config: &RunConfig) -> Result<Report> {
    let spec = config.cv.as_ref().context("no [cv] section in the configuration")?;
    if spec.schemes.is_empty() || spec.training.is_empty() || spec.evaluation.is_empty() || spec.metrics.is_empty() {
        bail!("[cv] needs at least one scheme, training mode, evaluation mode and metric");
    }
    let seed = config.require_seed("cv")?;
    let loaded = data::load(config)?;
    let frame = data::complete_cases(&loaded.frame, &spec.outcome, &spec.features)?;
    let mut report = Report::new("cv", config);
    report.inputs = loaded.inputs.clone();
    report.sample = Some(loaded.counts.clone());
    report.tables.push(super::describe::design_table(&frame));

    let min_n = spec.min_test_n.unwrap_or_else(|| {
        report.warn(format!("min_test_n not set; using {DEFAULT_MIN_TEST_N}"));
        DEFAULT_MIN_TEST_N
    });
    let min_pos = spec.min_test_pos.unwrap_or_else(|| {
        report.warn(format!("min_test_pos not set; using {DEFAULT_MIN_TEST_POS}"));
        DEFAULT_MIN_TEST_POS
    });

    let mut metrics = Vec::new();
    for &name in &spec.metrics {
        for &e in &spec.evaluation {
            let metric = match name {
                MetricName::Auroc => Metric::Auroc,
                MetricName::Auprc => Metric::Auprc,
            };
            metrics.push(CvMetric::new(metric, e == Weighting::Weighted));
        }
    }

    let mut folds = Table::new("folds", &["scheme", "repeat", "fold", "test_n", "test_pos", "retained"]);
    let mut schemes = Table::new("schemes", &["scheme", "planned", "retained", "psus_split_across_folds"]);
    let mut factorial = Table::new(
        "factorial",
        &["scheme", "training", "evaluation", "metric", "mean", "sd", "retained", "planned"],
    );
    let mut scores = Table::new("scores", &["scheme", "training", "evaluation", "metric", "repeat", "fold", "value"]);

    for &scheme in &spec.schemes {
        let label = scheme_label(scheme);
        let plan = match scheme {
            SchemeName::Psu => assign_psu_folds_with(&frame, spec.k, spec.repeats, seed, spec.dealing)?,
            SchemeName::Random => assign_random_folds(&frame, spec.k, spec.repeats, seed)?,
        };
        let plan = screen_folds(&plan, &frame, min_n, min_pos)?;
        let leak = check_leakage(&plan, &frame);
        if scheme == SchemeName::Psu {
            report.check(
                "psu_folds_do_not_leak",
                leak.is_ok(),
                leak.as_ref().err().map_or_else(|| "no PSU spans two folds in any repeat".to_string(), |e| e.to_string()),
            );
        }
        schemes.push(vec![
            text(label),
            int(plan.cell_count()),
            int(plan.retained_count()),
            serde_json::Value::Bool(leak.is_err()),
        ]);
        for r in 0..plan.repeats {
            for f in 0..plan.k {
                folds.push(vec![
                    text(label),
                    int(r + 1),
                    int(f + 1),
                    int(plan.test_n[r][f]),
                    int(plan.test_pos[r][f]),
                    serde_json::Value::Bool(plan.retained[r][f]),
                ]);
            }
        }
        report.attach(&format!("{label} folds"), &format!("folds_{label}.csv"), plan_csv(&plan)?);

        for &training in &spec.training {
            let weighted = training == Weighting::Weighted;
            let trainer = |f: &svyml::DesignFrame, rows: &[usize]| {
                fit(&spec.model, f, &spec.features, &spec.outcome, Some(rows), weighted, seed)
            };
            let matrices = run_cv_multi(&plan, &frame, trainer, &metrics)
                .with_context(|| format!("cross-validation failed ({label} split, {} training)", weighting_label(training)))?;
            for (m, matrix) in metrics.iter().zip(&matrices) {
                let evaluation = if m.weighted { "weighted" } else { "unweighted" };
                let metric = m.metric.name();
                factorial.push(vec![
                    text(label),
                    text(weighting_label(training)),
                    text(evaluation),
                    text(&metric),
                    opt(matrix.mean()),
                    opt(matrix.sd()),
                    int(matrix.retained_count()),
                    int(plan.cell_count()),
                ]);
                for (r, row) in matrix.values.iter().enumerate() {
                    for (f, v) in row.iter().enumerate() {
                        if let Some(v) = v {
                            scores.push(vec![
                                text(label),
                                text(weighting_label(training)),
                                text(evaluation),
                                text(&metric),
                                int(r + 1),
                                int(f + 1),
                                num(*v),
                            ]);
                        }
                    }
                }
            }
        }
    }
    report.tables.extend([schemes, folds, factorial, scores]);
    Ok(report)
}
