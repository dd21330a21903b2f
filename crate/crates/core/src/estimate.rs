//! Weighted descriptive estimators with Taylor-linearized standard errors.
//!
//! Variances use the with-replacement first-stage approximation: for PSU
//! totals `Z_hj` of the linearized values in variance stratum `h`,
//! `Var = sum_h n_h/(n_h-1) * sum_j (Z_hj - mean_h Z)^2`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, DesignFrame};
use crate::ingest::format_number;
use crate::stats::{self, Z95};

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("domain is empty")]
    EmptyDomain,
    #[error("variable '{0}' has no observed values in the domain")]
    AllMissing(String),
    #[error("variable '{variable}' holds {value}, expected 0 or 1")]
    NotIndicator { variable: String, value: f64 },
    #[error("need at least {needed} values, got {got}")]
    InsufficientN { needed: usize, got: usize },
    #[error("SRS variance is zero; design effect undefined")]
    ZeroSrsVariance,
    #[error("variable '{variable}' has {levels} levels (limit {limit})")]
    TooManyLevels {
        variable: String,
        levels: usize,
        limit: usize,
    },
    #[error("weights length {found} does not match frame length {expected}")]
    WeightLength { expected: usize, found: usize },
    #[error(transparent)]
    Design(#[from] DesignError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMethod {
    Srs,
    Taylor,
    Replicate,
}

/// Point estimate with a design-based standard error and 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithSE {
    pub point: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n: usize,
    pub method: EstimateMethod,
}

impl EstimateWithSE {
    /// Symmetric interval `point ± crit·se`.
    pub fn wald(point: f64, se: f64, n: usize, method: EstimateMethod, crit: f64) -> Self {
        EstimateWithSE {
            point,
            se,
            ci95: (point - crit * se, point + crit * se),
            n,
            method,
        }
    }

    fn scaled(self, factor: f64) -> Self {
        EstimateWithSE {
            point: self.point * factor,
            se: self.se * factor.abs(),
            ci95: (self.ci95.0 * factor, self.ci95.1 * factor),
            ..self
        }
    }
}

/// Critical value used for Taylor intervals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalValue {
    /// 1.96.
    #[default]
    Normal,
    /// Student t with `#PSUs - #strata` degrees of freedom.
    DesignDf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProportionInterval {
    /// Symmetric on the percent scale.
    #[default]
    Wald,
    /// Symmetric on the logit scale, back-transformed.
    Logit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalOptions {
    pub critical: CriticalValue,
    pub proportion: ProportionInterval,
}

impl IntervalOptions {
    fn crit(&self, frame: &DesignFrame) -> f64 {
        match self.critical {
            CriticalValue::Normal => Z95,
            CriticalValue::DesignDf => {
                let df = frame.psu_count() as f64 - frame.strata_count() as f64;
                stats::t_critical(0.05, df)
            }
        }
    }
}

/// Design degrees of freedom: number of PSUs minus number of strata.
pub fn design_df(frame: &DesignFrame) -> usize {
    frame.psu_count().saturating_sub(frame.strata_count())
}

/// With-replacement stratified variance of the total of `z` (one value per
/// row; masked-out rows should carry zero).
pub fn taylor_linearized_variance(frame: &DesignFrame, z: &[f64]) -> Result<f64, EstimateError> {
    check_len(frame, z.len())?;
    let mut totals = vec![0.0; frame.psu_count()];
    for (&p, &zi) in frame.psus().iter().zip(z) {
        totals[p] += zi;
    }
    let mut var = 0.0;
    for group in frame.variance_strata()? {
        let n_h = group.psus.len();
        if n_h < 2 {
            continue;
        }
        let mean = group.psus.iter().map(|&p| totals[p]).sum::<f64>() / n_h as f64;
        let ss: f64 = group.psus.iter().map(|&p| (totals[p] - mean).powi(2)).sum();
        var += n_h as f64 / (n_h - 1) as f64 * ss;
    }
    Ok(var)
}

/// Matrix version of [`taylor_linearized_variance`]: `z` is `n × p`, the
/// result the `p × p` covariance of the column totals.
pub fn taylor_linearized_covariance(
    frame: &DesignFrame,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>, EstimateError> {
    check_len(frame, z.nrows())?;
    let p = z.ncols();
    let mut totals = vec![DVector::<f64>::zeros(p); frame.psu_count()];
    for (i, &psu) in frame.psus().iter().enumerate() {
        totals[psu] += z.row(i).transpose();
    }
    let mut cov = DMatrix::<f64>::zeros(p, p);
    for group in frame.variance_strata()? {
        let n_h = group.psus.len();
        if n_h < 2 {
            continue;
        }
        let mut mean = DVector::<f64>::zeros(p);
        for &psu in &group.psus {
            mean += &totals[psu];
        }
        mean /= n_h as f64;
        let mut ss = DMatrix::<f64>::zeros(p, p);
        for &psu in &group.psus {
            let d = &totals[psu] - &mean;
            ss += &d * d.transpose();
        }
        cov += ss * (n_h as f64 / (n_h - 1) as f64);
    }
    Ok(cov)
}

fn check_len(frame: &DesignFrame, len: usize) -> Result<(), EstimateError> {
    if len != frame.len() {
        return Err(EstimateError::WeightLength {
            expected: frame.len(),
            found: len,
        });
    }
    Ok(())
}

/// Rows in the domain with an observed value of `variable`.
fn usable<'a>(frame: &'a DesignFrame, variable: &str) -> Result<(&'a [Option<f64>], usize), EstimateError> {
    let values = frame.variable(variable)?;
    if frame.domain_size() == 0 {
        return Err(EstimateError::EmptyDomain);
    }
    let n = values
        .iter()
        .zip(frame.domain_mask())
        .filter(|(v, &d)| d && v.is_some())
        .count();
    if n == 0 {
        return Err(EstimateError::AllMissing(variable.to_string()));
    }
    Ok((values, n))
}

/// Ratio-mean point estimate under arbitrary non-negative weights; rows out
/// of the domain or missing the variable are skipped. Returns `None` when no
/// weight falls on usable rows.
pub fn weighted_mean_point(frame: &DesignFrame, values: &[Option<f64>], weights: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((v, &w), &d) in values.iter().zip(weights).zip(frame.domain_mask()) {
        if let (true, Some(y)) = (d, v) {
            num += w * y;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Weighted (Hajek) mean `sum w y / sum w` with a Taylor-linearized SE.
pub fn weighted_mean(frame: &DesignFrame, variable: &str) -> Result<EstimateWithSE, EstimateError> {
    weighted_mean_with(frame, variable, IntervalOptions::default())
}

pub fn weighted_mean_with(
    frame: &DesignFrame,
    variable: &str,
    options: IntervalOptions,
) -> Result<EstimateWithSE, EstimateError> {
    let (values, n) = usable(frame, variable)?;
    let w = frame.weights();
    let point = weighted_mean_point(frame, values, w).ok_or(EstimateError::EmptyDomain)?;
    let total_w: f64 = values
        .iter()
        .zip(w)
        .zip(frame.domain_mask())
        .filter(|((v, _), &d)| d && v.is_some())
        .map(|((_, &wi), _)| wi)
        .sum();
    let z: Vec<f64> = values
        .iter()
        .zip(w)
        .zip(frame.domain_mask())
        .map(|((v, &wi), &d)| match (d, v) {
            (true, Some(y)) => wi * (y - point) / total_w,
            _ => 0.0,
        })
        .collect();
    let se = taylor_linearized_variance(frame, &z)?.sqrt();
    Ok(EstimateWithSE::wald(point, se, n, EstimateMethod::Taylor, options.crit(frame)))
}

/// Weighted population total `sum w y` with a Taylor SE.
pub fn weighted_total(frame: &DesignFrame, variable: &str) -> Result<EstimateWithSE, EstimateError> {
    let (values, n) = usable(frame, variable)?;
    let z: Vec<f64> = values
        .iter()
        .zip(frame.weights())
        .zip(frame.domain_mask())
        .map(|((v, &w), &d)| match (d, v) {
            (true, Some(y)) => w * y,
            _ => 0.0,
        })
        .collect();
    let point = z.iter().sum();
    let se = taylor_linearized_variance(frame, &z)?.sqrt();
    Ok(EstimateWithSE::wald(point, se, n, EstimateMethod::Taylor, Z95))
}

/// Weighted prevalence of a 0/1 indicator, in percent.
pub fn weighted_proportion(frame: &DesignFrame, indicator: &str) -> Result<EstimateWithSE, EstimateError> {
    weighted_proportion_with(frame, indicator, IntervalOptions::default())
}

pub fn weighted_proportion_with(
    frame: &DesignFrame,
    indicator: &str,
    options: IntervalOptions,
) -> Result<EstimateWithSE, EstimateError> {
    check_indicator(frame, indicator)?;
    let est = weighted_mean_with(frame, indicator, options)?;
    Ok(match options.proportion {
        ProportionInterval::Wald => est.scaled(100.0),
        ProportionInterval::Logit => logit_interval(est, options.crit(frame)).scaled(100.0),
    })
}

fn logit_interval(est: EstimateWithSE, crit: f64) -> EstimateWithSE {
    let p = est.point;
    if p <= 0.0 || p >= 1.0 {
        return EstimateWithSE { ci95: (p, p), ..est };
    }
    let half = crit * est.se / (p * (1.0 - p));
    let center = stats::logit(p);
    EstimateWithSE {
        ci95: (stats::logistic(center - half), stats::logistic(center + half)),
        ..est
    }
}

fn check_indicator(frame: &DesignFrame, indicator: &str) -> Result<(), EstimateError> {
    for value in frame.variable(indicator)?.iter().flatten() {
        if *value != 0.0 && *value != 1.0 {
            return Err(EstimateError::NotIndicator {
                variable: indicator.to_string(),
                value: *value,
            });
        }
    }
    Ok(())
}

/// `s / sqrt(n)` with the n-1 sample standard deviation.
pub fn srs_se(values: &[f64]) -> Result<f64, EstimateError> {
    if values.len() < 2 {
        return Err(EstimateError::InsufficientN {
            needed: 2,
            got: values.len(),
        });
    }
    Ok(stats::sample_sd(values) / (values.len() as f64).sqrt())
}

/// Unweighted mean of the domain's observed values with an SRS standard error.
pub fn unweighted_mean(frame: &DesignFrame, variable: &str) -> Result<EstimateWithSE, EstimateError> {
    let (values, n) = usable(frame, variable)?;
    let observed: Vec<f64> = values
        .iter()
        .zip(frame.domain_mask())
        .filter_map(|(v, &d)| if d { *v } else { None })
        .collect();
    let se = if n >= 2 { srs_se(&observed)? } else { 0.0 };
    Ok(EstimateWithSE::wald(stats::mean(&observed), se, n, EstimateMethod::Srs, Z95))
}

/// Unweighted percentage of a 0/1 indicator with SRS standard error
/// `sqrt(p(1-p)/n)` expressed via `srs_se`.
pub fn unweighted_proportion(frame: &DesignFrame, indicator: &str) -> Result<EstimateWithSE, EstimateError> {
    check_indicator(frame, indicator)?;
    Ok(unweighted_mean(frame, indicator)?.scaled(100.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignEffect {
    pub deff: f64,
    pub n_eff: f64,
}

/// Design effect of the weighted mean: Taylor variance over the variance the
/// same estimator would have under simple random sampling of `n` units,
/// `s_w^2 / n` with `s_w^2` the weighted population variance estimate.
pub fn design_effect(frame: &DesignFrame, variable: &str) -> Result<DesignEffect, EstimateError> {
    let est = weighted_mean(frame, variable)?;
    let (values, n) = usable(frame, variable)?;
    let mut sw = 0.0;
    let mut ss = 0.0;
    for ((v, &w), &d) in values.iter().zip(frame.weights()).zip(frame.domain_mask()) {
        if let (true, Some(y)) = (d, v) {
            sw += w;
            ss += w * (y - est.point).powi(2);
        }
    }
    if n < 2 {
        return Err(EstimateError::InsufficientN { needed: 2, got: n });
    }
    let pop_var = ss / sw * n as f64 / (n - 1) as f64;
    let var_srs = pop_var / n as f64;
    if var_srs <= 0.0 {
        return Err(EstimateError::ZeroSrsVariance);
    }
    let deff = est.se.powi(2) / var_srs;
    Ok(DesignEffect {
        deff,
        n_eff: n as f64 / deff,
    })
}

/// Sample share versus weighted population share for one level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub level: String,
    pub n: usize,
    pub sample_pct: f64,
    pub weighted_pct: f64,
    pub weighted_se: f64,
    pub diff_pp: f64,
}

pub const MAX_LEVELS: usize = 50;

/// Composition of a categorical variable: one row per observed level (in
/// numeric order), optionally renamed through `labels`.
pub fn composition_table(
    frame: &DesignFrame,
    categorical: &str,
    labels: Option<&BTreeMap<String, String>>,
) -> Result<Vec<CompositionRow>, EstimateError> {
    let (values, total) = usable(frame, categorical)?;
    let mut levels: Vec<f64> = values
        .iter()
        .zip(frame.domain_mask())
        .filter_map(|(v, &d)| if d { *v } else { None })
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    if levels.len() > MAX_LEVELS {
        return Err(EstimateError::TooManyLevels {
            variable: categorical.to_string(),
            levels: levels.len(),
            limit: MAX_LEVELS,
        });
    }
    let mut rows = Vec::with_capacity(levels.len());
    for level in levels {
        let indicator: Vec<Option<f64>> = values
            .iter()
            .map(|v| v.map(|x| if x == level { 1.0 } else { 0.0 }))
            .collect();
        let n = values
            .iter()
            .zip(frame.domain_mask())
            .filter(|(v, &d)| d && **v == Some(level))
            .count();
        let name = "__level_indicator";
        let tmp = frame.with_variable(name, indicator)?;
        let est = weighted_proportion(&tmp, name)?;
        let code = format_number(level);
        let sample_pct = 100.0 * n as f64 / total as f64;
        rows.push(CompositionRow {
            level: labels.and_then(|m| m.get(&code).cloned()).unwrap_or(code),
            n,
            sample_pct,
            weighted_pct: est.point,
            weighted_se: est.se,
            diff_pp: est.point - sample_pct,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignBuilder;
    use approx::assert_relative_eq;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hand_weighted_mean() {
        let f = DesignBuilder::new(vec![1.0, 2.0, 3.0], labels(&["1", "1", "1"]), labels(&["1", "2", "3"]))
            .values("y", &[10.0, 20.0, 30.0])
            .build()
            .unwrap();
        let e = weighted_mean(&f, "y").unwrap();
        assert_relative_eq!(e.point, 140.0 / 6.0, max_relative = 1e-15);
        assert_eq!(e.method, EstimateMethod::Taylor);
        assert_relative_eq!(e.ci95.1 - e.point, 1.96 * e.se, max_relative = 1e-12);
    }

    #[test]
    fn two_psu_variance_is_squared_difference() {
        let f = DesignBuilder::new(vec![1.0; 4], labels(&["1"; 4]), labels(&["a", "a", "b", "b"]))
            .build()
            .unwrap();
        let z = [1.0, 2.5, -4.0, 0.25]; // totals 3.5 and -3.75
        let v = taylor_linearized_variance(&f, &z).unwrap();
        assert_relative_eq!(v, (3.5f64 + 3.75).powi(2), max_relative = 1e-14);
    }

    #[test]
    fn equal_psu_totals_give_zero_variance() {
        let f = DesignBuilder::new(vec![1.0; 6], labels(&["1", "1", "1", "2", "2", "2"]), labels(&["1", "2", "3", "1", "2", "3"]))
            .build()
            .unwrap();
        assert_eq!(taylor_linearized_variance(&f, &[2.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn srs_se_cases() {
        assert_relative_eq!(srs_se(&[0.0, 2.0]).unwrap(), 1.0, max_relative = 1e-15);
        assert_eq!(srs_se(&[3.0; 10]).unwrap(), 0.0);
        assert!(matches!(srs_se(&[1.0]), Err(EstimateError::InsufficientN { .. })));
    }

    #[test]
    fn all_ones_indicator() {
        let f = DesignBuilder::new(vec![1.0, 3.0, 2.0, 5.0], labels(&["1", "1", "2", "2"]), labels(&["1", "2", "1", "2"]))
            .values("d", &[1.0; 4])
            .build()
            .unwrap();
        let e = weighted_proportion(&f, "d").unwrap();
        assert_eq!(e.point, 100.0);
        assert_eq!(e.se, 0.0);
    }

    #[test]
    fn non_indicator_rejected() {
        let f = DesignBuilder::new(vec![1.0; 2], labels(&["1", "1"]), labels(&["1", "2"]))
            .values("d", &[1.0, 2.0])
            .build()
            .unwrap();
        assert!(matches!(weighted_proportion(&f, "d"), Err(EstimateError::NotIndicator { .. })));
    }

    #[test]
    fn missing_values_are_skipped() {
        let f = DesignBuilder::new(vec![1.0, 1.0, 5.0], labels(&["1"; 3]), labels(&["1", "2", "3"]))
            .variable("y", vec![Some(1.0), Some(3.0), None])
            .variable("m", vec![None, None, None])
            .build()
            .unwrap();
        let e = weighted_mean(&f, "y").unwrap();
        assert_eq!(e.point, 2.0);
        assert_eq!(e.n, 2);
        assert!(matches!(weighted_mean(&f, "m"), Err(EstimateError::AllMissing(_))));
    }

    #[test]
    fn self_weighting_single_row_psus_have_unit_deff() {
        let y: Vec<f64> = (0..40).map(|i| ((i * 37) % 11) as f64).collect();
        let f = DesignBuilder::new(vec![2.0; 40], vec!["1".to_string(); 40], (0..40).map(|i| i.to_string()).collect())
            .values("y", &y)
            .build()
            .unwrap();
        let d = design_effect(&f, "y").unwrap();
        assert_relative_eq!(d.deff, 1.0, max_relative = 1e-12);
        assert_relative_eq!(d.n_eff, 40.0, max_relative = 1e-12);
        // Taylor SE equals the SRS SE here.
        assert_relative_eq!(weighted_mean(&f, "y").unwrap().se, srs_se(&y).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn balanced_clusters_give_deff_below_one() {
        // Every PSU holds one low and one high value: PSU totals are nearly equal.
        let mut y = Vec::new();
        let mut psu = Vec::new();
        for j in 0..20 {
            y.push(j as f64 * 0.01);
            y.push(10.0 - j as f64 * 0.01);
            psu.push(j.to_string());
            psu.push(j.to_string());
        }
        let f = DesignBuilder::new(vec![1.0; 40], vec!["1".to_string(); 40], psu)
            .values("y", &y)
            .build()
            .unwrap();
        assert!(design_effect(&f, "y").unwrap().deff < 0.01);
    }

    #[test]
    fn composition_single_level() {
        let f = DesignBuilder::new(vec![1.0, 4.0], labels(&["1", "1"]), labels(&["1", "2"]))
            .values("g", &[3.0, 3.0])
            .build()
            .unwrap();
        let rows = composition_table(&f, "g", None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].sample_pct, 100.0);
        assert_eq!(rows[0].weighted_pct, 100.0);
        assert_eq!(rows[0].diff_pp, 0.0);
    }

    #[test]
    fn composition_sums_and_labels() {
        let g = [1.0, 2.0, 2.0, 3.0, 1.0, 3.0, 3.0, 2.0];
        let w = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let f = DesignBuilder::new(w.clone(), labels(&["1", "1", "1", "1", "2", "2", "2", "2"]), labels(&["1", "1", "2", "2", "1", "1", "2", "2"]))
            .values("g", &g)
            .build()
            .unwrap();
        let names = BTreeMap::from([("2".to_string(), "two".to_string())]);
        let rows = composition_table(&f, "g", Some(&names)).unwrap();
        assert_eq!(rows[1].level, "two");
        let total: f64 = rows.iter().map(|r| r.weighted_pct).sum();
        assert_relative_eq!(total, 100.0, max_relative = 1e-12);
        let sample: f64 = rows.iter().map(|r| r.sample_pct).sum();
        assert_relative_eq!(sample, 100.0, max_relative = 1e-12);
        // Level 1: weights 1 + 5 of 36.
        assert_relative_eq!(rows[0].weighted_pct, 600.0 / 36.0, max_relative = 1e-12);
    }

    #[test]
    fn too_many_levels() {
        let g: Vec<f64> = (0..60).map(f64::from).collect();
        let f = DesignBuilder::new(vec![1.0; 60], vec!["1".to_string(); 60], (0..60).map(|i| (i % 2).to_string()).collect())
            .values("g", &g)
            .build()
            .unwrap();
        assert!(matches!(composition_table(&f, "g", None), Err(EstimateError::TooManyLevels { .. })));
    }

    #[test]
    fn logit_interval_is_inside_unit_range() {
        let f = DesignBuilder::new(vec![1.0; 6], labels(&["1"; 6]), labels(&["1", "2", "3", "4", "5", "6"]))
            .values("d", &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .build()
            .unwrap();
        let opts = IntervalOptions {
            proportion: ProportionInterval::Logit,
            ..Default::default()
        };
        let e = weighted_proportion_with(&f, "d", opts).unwrap();
        assert!(e.ci95.0 > 0.0 && e.ci95.1 < 100.0);
        assert!(e.ci95.0 < e.point && e.point < e.ci95.1);
        let wald = weighted_proportion(&f, "d").unwrap();
        assert!(wald.ci95.0 < 0.0);
    }

    #[test]
    fn design_df_knob_widens_interval() {
        let f = DesignBuilder::new(vec![1.0; 4], labels(&["1"; 4]), labels(&["a", "a", "b", "c"]))
            .values("y", &[1.0, 2.0, 3.0, 7.0])
            .build()
            .unwrap();
        let opts = IntervalOptions {
            critical: CriticalValue::DesignDf,
            ..Default::default()
        };
        let t = weighted_mean_with(&f, "y", opts).unwrap();
        let z = weighted_mean(&f, "y").unwrap();
        assert_eq!(design_df(&f), 2);
        assert!(t.ci95.1 - t.ci95.0 > z.ci95.1 - z.ci95.0);
    }
}
