//! Fits the configured models and compares unweighted and weighted
//! discrimination metrics.

use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use svyml::estimate::{unweighted_proportion, weighted_proportion, EstimateWithSE};
use svyml::metrics::{
    metric_ci, unweighted_auroc_delong_ci, weighted_curves, CiMethod, CurvePoints, Metric, MetricGap, ScoredSet,
};
use svyml::model::{
    fit_weighted_boost_rows, fit_weighted_logit_rows, sandwich_variance, LogitOptions, ModelError, Predictor,
    SavedModel,
};
use svyml::DesignFrame;

use crate::config::{EvaluateConfig, EvaluatedModel, ModelKind, ModelSpec, RunConfig};
use crate::data;
use crate::report::{int, num, text, Report, Table};

pub(crate) fn fit(
    spec: &ModelSpec,
    frame: &DesignFrame,
    features: &[String],
    outcome: &str,
    rows: Option<&[usize]>,
    weighted: bool,
    seed: u64,
) -> Result<SavedModel, ModelError> {
    Ok(match spec.kind {
        ModelKind::Logit => SavedModel::Logit(fit_weighted_logit_rows(
            frame,
            features,
            outcome,
            rows,
            weighted,
            LogitOptions::default(),
        )?),
        ModelKind::Boost => SavedModel::Boost(fit_weighted_boost_rows(
            frame,
            features,
            outcome,
            rows,
            spec.boost_params(),
            weighted,
            seed,
        )?),
    })
}

pub(crate) fn curve_csv(curve: &CurvePoints) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "x", "y"])?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    w.into_inner().context("cannot render curve CSV")
}

fn metric_label(m: Metric) -> &'static str {
    match m {
        Metric::Auroc => "auroc",
        _ => "auprc",
    }
}

struct Evaluated {
    gaps: Vec<(Metric, MetricGap, &'static str)>,
}

pub fn evaluate(config: &RunConfig) -> Result<Report> {
    let spec: &EvaluateConfig = config.evaluate.as_ref().context("no [evaluate] section in the configuration")?;
    if spec.models.is_empty() {
        bail!("[evaluate] lists no [[evaluate.model]] entries");
    }
    let mut names = std::collections::BTreeSet::new();
    for m in &spec.models {
        if !names.insert(m.name.as_str()) {
            bail!("model name '{}' is used twice", m.name);
        }
    }
    let seed = config.require_seed("evaluate")?;
    let loaded = data::load(config)?;
    let frame = data::complete_cases(&loaded.frame, &spec.outcome, &spec.features)?;
    let mut report = Report::new("evaluate", config);
    report.inputs = loaded.inputs.clone();
    report.sample = Some(loaded.counts.clone());
    report.tables.push(super::describe::design_table(&frame));

    let mut sample = Table::new("sample", &["quantity", "value"]);
    sample.push(vec![text("complete_cases"), int(frame.domain_size())]);
    let positives = frame
        .observations()
        .filter(|o| o.in_domain() && o.value(&spec.outcome) == Some(1.0))
        .count();
    sample.push(vec![text("positives"), int(positives)]);
    match (unweighted_proportion(&frame, &spec.outcome), weighted_proportion(&frame, &spec.outcome)) {
        (Ok(u), Ok(w)) => {
            sample.push(vec![text("unweighted_prevalence_pct"), num(u.point)]);
            sample.push(vec![text("weighted_prevalence_pct"), num(w.point)]);
        }
        (Err(e), _) | (_, Err(e)) => bail!("outcome '{}' is not a 0/1 indicator: {e}", spec.outcome),
    }
    report.tables.push(sample);

    let boot = CiMethod::Bootstrap {
        b: spec.bootstrap,
        seed,
        unit: spec.resample,
        interval: spec.interval,
    };
    let mut metrics = Table::new(
        "metrics",
        &[
            "model", "training", "metric", "unweighted", "unweighted_ci_low", "unweighted_ci_high", "unweighted_ci",
            "weighted", "weighted_ci_low", "weighted_ci_high", "weighted_ci", "gap",
        ],
    );
    let mut coefficients = Table::new("coefficients", &["model", "term", "estimate", "se"]);
    let mut curves = Table::new("curves", &["model", "evaluation", "curve", "file", "area"]);
    let mut results: BTreeMap<String, Evaluated> = BTreeMap::new();

    for m in &spec.models {
        match evaluate_model(m, spec, &frame, seed, &boot, &mut report, &mut coefficients, &mut curves) {
            Ok(ev) => {
                for (metric, gap, method) in &ev.gaps {
                    let u: &EstimateWithSE = &gap.unweighted;
                    let w = &gap.weighted;
                    metrics.push(vec![
                        text(&m.name),
                        text(if m.weighted { "weighted" } else { "unweighted" }),
                        text(metric_label(*metric)),
                        num(u.point),
                        num(u.ci95.0),
                        num(u.ci95.1),
                        text(*method),
                        num(w.point),
                        num(w.ci95.0),
                        num(w.ci95.1),
                        text("bootstrap"),
                        num(gap.gap),
                    ]);
                }
                results.insert(m.name.clone(), ev);
            }
            Err(e) => report.error(format!("model '{}': {e:#}", m.name)),
        }
    }
    report.tables.push(metrics);
    report.tables.push(coefficients);
    if spec.curves {
        report.tables.push(curves);
    }

    let mut comparisons = Table::new("comparisons", &["label", "metric", "evaluation", "a", "b", "difference"]);
    for c in &spec.comparisons {
        let (Some(a), Some(b)) = (results.get(&c.a), results.get(&c.b)) else {
            report.error(format!("comparison '{}' refers to a model that was not evaluated", c.label));
            continue;
        };
        for ((metric, ga, _), (_, gb, _)) in a.gaps.iter().zip(&b.gaps) {
            for (evaluation, va, vb) in [
                ("unweighted", ga.unweighted.point, gb.unweighted.point),
                ("weighted", ga.weighted.point, gb.weighted.point),
            ] {
                comparisons.push(vec![
                    text(&c.label),
                    text(metric_label(*metric)),
                    text(evaluation),
                    num(va),
                    num(vb),
                    num(va - vb),
                ]);
            }
        }
    }
    report.tables.push(comparisons);
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn evaluate_model(
    m: &EvaluatedModel,
    spec: &EvaluateConfig,
    frame: &DesignFrame,
    seed: u64,
    boot: &CiMethod<'_>,
    report: &mut Report,
    coefficients: &mut Table,
    curves: &mut Table,
) -> Result<Evaluated> {
    let model = fit(&m.spec, frame, &spec.features, &spec.outcome, None, m.weighted, seed)?;
    let scores = model.predict_frame(frame)?;
    let ones = vec![1.0; frame.len()];

    if let SavedModel::Logit(logit) = &model {
        if !logit.converged {
            report.warn(format!("model '{}': IRLS did not converge", m.name));
        }
        let se = match sandwich_variance(logit, frame) {
            Ok(v) => (0..v.nrows()).map(|i| Some(v[(i, i)].sqrt())).collect(),
            Err(e) => {
                report.warn(format!("model '{}': no sandwich variance ({e})", m.name));
                vec![None; logit.coefficients.len()]
            }
        };
        let terms = std::iter::once("(intercept)").chain(logit.feature_names.iter().map(String::as_str));
        for ((term, b), se) in terms.zip(&logit.coefficients).zip(se) {
            coefficients.push(vec![text(&m.name), text(term), num(*b), se.map_or(serde_json::Value::Null, num)]);
        }
    }
    report.attach(&format!("model {}", m.name), &format!("models/{}.json", m.name), model.to_json()?.into_bytes());

    let mut gaps = Vec::new();
    for metric in [Metric::Auroc, Metric::Auprc] {
        let (unweighted, method) = if metric == Metric::Auroc {
            (unweighted_auroc_delong_ci(&ScoredSet::from_frame(frame, &scores, &ones)?)?, "delong")
        } else {
            (metric_ci(frame, &scores, metric, false, boot)?, "bootstrap")
        };
        let weighted = metric_ci(frame, &scores, metric, true, boot)?;
        gaps.push((metric, MetricGap::new(unweighted, weighted), method));
    }

    if spec.curves {
        for (evaluation, weights) in [("unweighted", &ones[..]), ("weighted", frame.weights())] {
            let c = weighted_curves(&ScoredSet::from_frame(frame, &scores, weights)?)?;
            for (kind, points, area) in [("roc", &c.roc, c.roc.trapezoid_area()), ("pr", &c.pr, c.auprc)] {
                let file = format!("curves/{kind}_{}_{evaluation}.csv", m.name);
                curves.push(vec![text(&m.name), text(evaluation), text(kind), text(&file), num(area)]);
                report.attach(&format!("{kind} curve"), &file, curve_csv(points)?);
            }
        }
    }
    Ok(Evaluated { gaps })
}
