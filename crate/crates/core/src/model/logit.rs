//! Pseudo-maximum-likelihood logistic regression by IRLS, with sandwich
//! variance, Wald tests and design-adjusted information criteria.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{ModelError, Predictor, TrainingData};
use crate::design::DesignFrame;
use crate::estimate::{design_effect, taylor_linearized_covariance};
use crate::stats::logistic;

/// Linear predictors beyond this magnitude are treated as separation.
const SEPARATION_ETA: f64 = 35.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    /// Convergence bound on the max-norm of the score (weights scaled to mean one).
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogitOptions {
    fn default() -> Self {
        LogitOptions { tol: 1e-8, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    /// Intercept first, then one coefficient per feature.
    pub coefficients: Vec<f64>,
    pub feature_names: Vec<String>,
    pub outcome: String,
    /// Weighted log-likelihood at the estimate, on the training weights.
    pub pseudo_loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final score max-norm (weights scaled to mean one).
    pub score_norm: f64,
    pub n: usize,
    pub weighted: bool,
}

impl LogitModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

impl Predictor for LogitModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        logistic(self.linear_predictor(x))
    }
}

fn with_intercept(x: &[Vec<f64>]) -> DMatrix<f64> {
    let p = x.first().map_or(0, Vec::len) + 1;
    DMatrix::from_fn(x.len(), p, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] })
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted log-likelihood `sum w [y log mu + (1-y) log(1-mu)]`.
pub fn logit_loglik(x: &[Vec<f64>], y: &[f64], w: &[f64], beta: &[f64]) -> f64 {
    let xm = with_intercept(x);
    let eta = &xm * DVector::from_column_slice(beta);
    eta.iter()
        .zip(y)
        .zip(w)
        .map(|((&e, &yi), &wi)| -wi * (yi * softplus(-e) + (1.0 - yi) * softplus(e)))
        .sum()
}

/// Analytic gradient of [`logit_loglik`]: `sum w (y - mu) x`.
pub fn logit_score(x: &[Vec<f64>], y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
    let xm = with_intercept(x);
    let eta = &xm * DVector::from_column_slice(beta);
    let r = DVector::from_iterator(
        y.len(),
        eta.iter().zip(y).zip(w).map(|((&e, &yi), &wi)| wi * (yi - logistic(e))),
    );
    (xm.transpose() * r).iter().copied().collect()
}

/// Fits on the frame's domain rows with complete data, using design weights.
pub fn fit_weighted_logit(
    frame: &DesignFrame,
    features: &[String],
    outcome: &str,
    options: LogitOptions,
) -> Result<LogitModel, ModelError> {
    fit_weighted_logit_rows(frame, features, outcome, None, true, options)
}

/// Fits on a subset of rows; `weighted = false` gives every row weight one.
pub fn fit_weighted_logit_rows(
    frame: &DesignFrame,
    features: &[String],
    outcome: &str,
    rows: Option<&[usize]>,
    weighted: bool,
    options: LogitOptions,
) -> Result<LogitModel, ModelError> {
    let data = TrainingData::from_frame(frame, features, outcome, rows)?;
    fit_data(&data, weighted, options)
}

fn fit_data(data: &TrainingData, weighted: bool, options: LogitOptions) -> Result<LogitModel, ModelError> {
    let n = data.len();
    let xm = with_intercept(&data.x);
    let p = xm.ncols();
    let w = if weighted { data.normalized_weights() } else { vec![1.0; n] };
    let y = DVector::from_column_slice(&data.y);

    let pos: f64 = w.iter().zip(&data.y).map(|(w, y)| w * y).sum();
    let total: f64 = w.iter().sum();
    if pos <= 0.0 || pos >= total {
        return Err(ModelError::SingleClass);
    }
    if n < p || !full_rank(&xm) {
        return Err(ModelError::RankDeficient);
    }

    let loglik = |beta: &DVector<f64>| -> f64 {
        let eta = &xm * beta;
        eta.iter()
            .zip(data.y.iter())
            .zip(&w)
            .map(|((&e, &yi), &wi)| -wi * (yi * softplus(-e) + (1.0 - yi) * softplus(e)))
            .sum()
    };

    let mut beta = DVector::<f64>::zeros(p);
    beta[0] = (pos / (total - pos)).ln();
    let mut iterations = 0;
    let mut converged = false;
    let mut score_norm;
    let mut current = loglik(&beta);
    loop {
        let eta = &xm * &beta;
        let max_eta = eta.amax();
        if max_eta > SEPARATION_ETA {
            return Err(ModelError::Separation(SEPARATION_ETA));
        }
        let mu = eta.map(logistic);
        let resid = DVector::from_iterator(n, (0..n).map(|i| w[i] * (y[i] - mu[i])));
        let score = xm.transpose() * resid;
        score_norm = score.amax();
        if score_norm <= options.tol {
            converged = true;
            // One more Newton step takes the quadratically converging iterate
            // to machine precision, so equivalent fits agree to rounding.
            let info = information(&xm, &mu, &w);
            if let Some(chol) = info.cholesky() {
                let polished = &beta + chol.solve(&score);
                let mu = (&xm * &polished).map(logistic);
                let resid = DVector::from_iterator(n, (0..n).map(|i| w[i] * (y[i] - mu[i])));
                let norm = (xm.transpose() * resid).amax();
                if norm <= score_norm {
                    beta = polished;
                    score_norm = norm;
                }
            }
            break;
        }
        if iterations >= options.max_iter {
            break;
        }
        let info = information(&xm, &mu, &w);
        let step = info.cholesky().ok_or(ModelError::Singular("information"))?.solve(&score);
        let mut t = 1.0;
        let mut candidate = &beta + &step;
        let mut value = loglik(&candidate);
        while value < current - 1e-12 * current.abs() && t > 1e-10 {
            t /= 2.0;
            candidate = &beta + &step * t;
            value = loglik(&candidate);
        }
        beta = candidate;
        current = value;
        iterations += 1;
    }
    if !converged {
        warn!("IRLS stopped after {iterations} iterations with score norm {score_norm:.3e}");
    }
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let train_w = if weighted { data.w.clone() } else { vec![1.0; n] };
    Ok(LogitModel {
        pseudo_loglik: logit_loglik(&data.x, &data.y, &train_w, &coefficients),
        coefficients,
        feature_names: data.feature_names.clone(),
        outcome: data.outcome.clone(),
        iterations,
        converged,
        score_norm,
        n,
        weighted,
    })
}

fn full_rank(xm: &DMatrix<f64>) -> bool {
    // Scale columns so the check is not fooled by units.
    let mut scaled = xm.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return false;
        }
        col /= norm;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    sv.min() > max * 1e-10
}

fn information(xm: &DMatrix<f64>, mu: &DVector<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut weighted = xm.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w[i] * mu[i] * (1.0 - mu[i]);
    }
    xm.transpose() * weighted
}

/// Weighted information `H` and the Taylor covariance `G` of the score
/// totals, both on the frame's design weights.
fn bread_and_meat(model: &LogitModel, frame: &DesignFrame) -> Result<(DMatrix<f64>, DMatrix<f64>, TrainingData), ModelError> {
    let data = TrainingData::from_frame(frame, &model.feature_names, &model.outcome, None)?;
    let xm = with_intercept(&data.x);
    let p = xm.ncols();
    let beta = DVector::from_column_slice(&model.coefficients);
    let mu = (&xm * &beta).map(logistic);
    let h = information(&xm, &mu, &data.w);
    let mut u = DMatrix::<f64>::zeros(frame.len(), p);
    for (k, &row) in data.rows.iter().enumerate() {
        let r = data.w[k] * (data.y[k] - mu[k]);
        for j in 0..p {
            u[(row, j)] = r * xm[(k, j)];
        }
    }
    let g = taylor_linearized_covariance(frame, &u)?;
    Ok((h, g, data))
}

/// Sandwich covariance `H^-1 G H^-1` of the coefficients.
pub fn sandwich_variance(model: &LogitModel, frame: &DesignFrame) -> Result<DMatrix<f64>, ModelError> {
    let (h, g, _) = bread_and_meat(model, frame)?;
    let h_inv = h.try_inverse().ok_or(ModelError::Singular("information"))?;
    Ok(&h_inv * g * &h_inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Tests `L beta = 0` with `W = (L beta)' (L V L')^-1 (L beta)` against a
/// chi-square on `rank(L)` degrees of freedom.
pub fn wald_test(model: &LogitModel, cov: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<WaldResult, ModelError> {
    if l.nrows() == 0 {
        return Err(ModelError::EmptyConstraint);
    }
    let p = model.coefficients.len();
    if l.ncols() != p {
        return Err(ModelError::ConstraintShape {
            expected: p,
            found: l.ncols(),
        });
    }
    let lb = l * DVector::from_column_slice(&model.coefficients);
    let lvl = l * cov * l.transpose();
    let inv = lvl.cholesky().ok_or(ModelError::Singular("L V L'"))?.inverse();
    let statistic = (lb.transpose() * inv * &lb)[(0, 0)].max(0.0);
    let df = l.rank(1e-10);
    let chi = ChiSquared::new(df as f64).map_err(|_| ModelError::Singular("L"))?;
    Ok(WaldResult {
        statistic,
        df,
        p_value: (1.0 - chi.cdf(statistic)).clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoCriteria {
    pub daic: f64,
    pub dbic: f64,
    /// Effective number of parameters `trace(H^-1 G)`.
    pub p_star: f64,
    pub n_eff: f64,
    /// Pseudo-log-likelihood with weights rescaled to sum to `n`.
    pub loglik: f64,
}

/// Design-adjusted AIC and BIC. Weights are rescaled to sum to the number of
/// training rows, so both criteria are invariant to constant weight scaling;
/// `dAIC = -2 l + 2 p*` and `dBIC = -2 l + log(n_eff) p*`.
pub fn design_aic_bic(model: &LogitModel, frame: &DesignFrame) -> Result<InfoCriteria, ModelError> {
    let (h, g, data) = bread_and_meat(model, frame)?;
    let n = data.len() as f64;
    let scale = n / data.w.iter().sum::<f64>();
    let h_inv = h.try_inverse().ok_or(ModelError::Singular("information"))?;
    let p_star = scale * (h_inv * g).trace();
    let loglik = scale * logit_loglik(&data.x, &data.y, &data.w, &model.coefficients);

    let mut in_fit = vec![false; frame.len()];
    for &r in &data.rows {
        in_fit[r] = true;
    }
    let fit_frame = frame.subset_domain(|o| in_fit[o.row()])?;
    let n_eff = design_effect(&fit_frame, &model.outcome)?.n_eff;
    Ok(InfoCriteria {
        daic: -2.0 * loglik + 2.0 * p_star,
        dbic: -2.0 * loglik + n_eff.ln() * p_star,
        p_star,
        n_eff,
        loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignBuilder;
    use crate::estimate::weighted_proportion;
    use approx::assert_relative_eq;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    /// Deterministic pseudo-random data with a logistic signal.
    fn sample(n: usize, strata: usize, per_psu: usize) -> DesignFrame {
        let mut w = Vec::new();
        let mut s = Vec::new();
        let mut p = Vec::new();
        let mut x1 = Vec::new();
        let mut x2 = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let u = ((i as f64 + 1.0) * 0.6180339887).fract();
            let v = ((i as f64 + 1.0) * 0.7548776662).fract();
            let a = (u - 0.5) * 4.0;
            let b = (v - 0.5) * 2.0;
            let eta = -0.5 + 1.2 * a - 0.8 * b;
            let t = ((i as f64 + 1.0) * 0.5698402910).fract();
            y.push(if t < logistic(eta) { 1.0 } else { 0.0 });
            x1.push(a);
            x2.push(b);
            w.push(1.0 + 3.0 * ((i * 7) % 5) as f64);
            s.push((i % strata).to_string());
            p.push((i / (strata * per_psu)).to_string());
        }
        DesignBuilder::new(w, s, p).values("x1", &x1).values("x2", &x2).values("y", &y).build().unwrap()
    }

    #[test]
    fn converges_and_score_is_small() {
        let f = sample(400, 4, 5);
        let m = fit_weighted_logit(&f, &names(&["x1", "x2"]), "y", LogitOptions::default()).unwrap();
        assert!(m.converged);
        let d = TrainingData::from_frame(&f, &m.feature_names, "y", None).unwrap();
        let g = logit_score(&d.x, &d.y, &d.normalized_weights(), &m.coefficients);
        assert!(g.iter().all(|v| v.abs() <= 1e-8));
        assert!(m.coefficients[1] > 0.5 && m.coefficients[2] < 0.0);
    }

    #[test]
    fn equal_weights_give_ordinary_mle() {
        let f = sample(300, 3, 5);
        let equal = f.with_weights(vec![2.5; f.len()]).unwrap();
        let a = fit_weighted_logit(&equal, &names(&["x1", "x2"]), "y", LogitOptions::default()).unwrap();
        let b = fit_weighted_logit_rows(&f, &names(&["x1", "x2"]), "y", None, false, LogitOptions::default()).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }

    #[test]
    fn separation_detected() {
        let f = DesignBuilder::new(vec![1.0; 4], vec!["1".into(); 4], names(&["1", "2", "3", "4"]))
            .values("x", &[0.0, 1.0, 2.0, 3.0])
            .values("y", &[0.0, 0.0, 1.0, 1.0])
            .build()
            .unwrap();
        assert!(matches!(
            fit_weighted_logit(&f, &names(&["x"]), "y", LogitOptions::default()),
            Err(ModelError::Separation(_))
        ));
    }

    #[test]
    fn rank_deficiency_detected() {
        let f = sample(100, 2, 5);
        let x1 = f.variable("x1").unwrap().to_vec();
        let dup = f.with_variable("x1_copy", x1.iter().map(|v| v.map(|x| 2.0 * x)).collect()).unwrap();
        assert!(matches!(
            fit_weighted_logit(&dup, &names(&["x1", "x1_copy"]), "y", LogitOptions::default()),
            Err(ModelError::RankDeficient)
        ));
    }

    #[test]
    fn zero_coefficients_predict_half() {
        let m = LogitModel {
            coefficients: vec![0.0, 0.0],
            feature_names: names(&["x"]),
            outcome: "y".into(),
            pseudo_loglik: 0.0,
            iterations: 0,
            converged: true,
            score_norm: 0.0,
            n: 0,
            weighted: true,
        };
        assert_eq!(m.predict(&[vec![-3.0], vec![7.0]]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn sandwich_matches_hc_on_srs_frame() {
        let base = sample(200, 1, 1);
        let n = base.len();
        let f = DesignBuilder::new(base.weights().to_vec(), vec!["1".into(); n], (0..n).map(|i| i.to_string()).collect())
            .variable("x1", base.variable("x1").unwrap().to_vec())
            .variable("y", base.variable("y").unwrap().to_vec())
            .build()
            .unwrap();
        let m = fit_weighted_logit(&f, &names(&["x1"]), "y", LogitOptions::default()).unwrap();
        let v = sandwich_variance(&m, &f).unwrap();
        // Direct HC formula: H^-1 (n/(n-1) sum u u') H^-1 with centered scores.
        let d = TrainingData::from_frame(&f, &m.feature_names, "y", None).unwrap();
        let mut h = DMatrix::<f64>::zeros(2, 2);
        let mut us = Vec::new();
        for k in 0..n {
            let x = DVector::from_vec(vec![1.0, d.x[k][0]]);
            let mu = m.predict_one(&d.x[k]);
            h += &x * x.transpose() * (d.w[k] * mu * (1.0 - mu));
            us.push(&x * (d.w[k] * (d.y[k] - mu)));
        }
        let mean = us.iter().fold(DVector::zeros(2), |a, u| a + u) / n as f64;
        let mut meat = DMatrix::<f64>::zeros(2, 2);
        for u in &us {
            let c = u - &mean;
            meat += &c * c.transpose();
        }
        meat *= n as f64 / (n as f64 - 1.0);
        let hi = h.try_inverse().unwrap();
        let direct = &hi * meat * &hi;
        for (a, b) in v.iter().zip(direct.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-6);
        }
    }

    #[test]
    fn intercept_only_matches_delta_method() {
        let f = sample(240, 4, 6);
        let m = fit_weighted_logit(&f, &[], "y", LogitOptions::default()).unwrap();
        let v = sandwich_variance(&m, &f).unwrap();
        let p = logistic(m.coefficients[0]);
        let prop = weighted_proportion(&f, "y").unwrap();
        assert_relative_eq!(p * 100.0, prop.point, max_relative = 1e-8);
        assert_relative_eq!(p * (1.0 - p) * v[(0, 0)].sqrt() * 100.0, prop.se, max_relative = 1e-6);
    }

    #[test]
    fn wald_guards_and_strong_effect() {
        let f = sample(400, 4, 5);
        let m = fit_weighted_logit(&f, &names(&["x1", "x2"]), "y", LogitOptions::default()).unwrap();
        let v = sandwich_variance(&m, &f).unwrap();
        assert!(matches!(wald_test(&m, &v, &DMatrix::zeros(0, 3)), Err(ModelError::EmptyConstraint)));
        assert!(matches!(wald_test(&m, &v, &DMatrix::zeros(1, 2)), Err(ModelError::ConstraintShape { .. })));
        let l = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0]);
        let r = wald_test(&m, &v, &l).unwrap();
        assert_eq!(r.df, 1);
        assert!(r.p_value < 1e-3);
        let l2 = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(wald_test(&m, &v, &l2).unwrap().df, 2);
    }

    #[test]
    fn srs_daic_is_close_to_aic() {
        let base = sample(600, 1, 1);
        let n = base.len();
        let f = DesignBuilder::new(vec![1.0; n], vec!["1".into(); n], (0..n).map(|i| i.to_string()).collect())
            .variable("x1", base.variable("x1").unwrap().to_vec())
            .variable("x2", base.variable("x2").unwrap().to_vec())
            .variable("y", base.variable("y").unwrap().to_vec())
            .build()
            .unwrap();
        let m = fit_weighted_logit(&f, &names(&["x1", "x2"]), "y", LogitOptions::default()).unwrap();
        let ic = design_aic_bic(&m, &f).unwrap();
        let aic = -2.0 * m.pseudo_loglik + 2.0 * 3.0;
        assert!((ic.daic - aic).abs() / aic < 0.01, "{} vs {}", ic.daic, aic);
        assert!((ic.p_star - 3.0).abs() < 0.6);
    }

    #[test]
    fn weight_scale_invariance() {
        let f = sample(300, 3, 5);
        let scaled = f.with_weights(f.weights().iter().map(|w| w * 7.3).collect()).unwrap();
        let feats = names(&["x1", "x2"]);
        let a = fit_weighted_logit(&f, &feats, "y", LogitOptions::default()).unwrap();
        let b = fit_weighted_logit(&scaled, &feats, "y", LogitOptions::default()).unwrap();
        for (x, y) in a.coefficients.iter().zip(&b.coefficients) {
            assert_relative_eq!(x, y, max_relative = 1e-9);
        }
        let va = sandwich_variance(&a, &f).unwrap();
        let vb = sandwich_variance(&b, &scaled).unwrap();
        for (x, y) in va.iter().zip(vb.iter()) {
            assert_relative_eq!(x, y, max_relative = 1e-9);
        }
        let ia = design_aic_bic(&a, &f).unwrap();
        let ib = design_aic_bic(&b, &scaled).unwrap();
        assert_relative_eq!(ia.daic, ib.daic, max_relative = 1e-9);
        assert_relative_eq!(ia.dbic, ib.dbic, max_relative = 1e-9);
    }
}
