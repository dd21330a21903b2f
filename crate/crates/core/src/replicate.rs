//! Replicate weights (delete-one-PSU jackknife, BRR/Fay, Rao-Wu bootstrap)
//! and the replicate variance combiner.

use std::error::Error as StdError;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, DesignFrame};
use crate::estimate::{EstimateMethod, EstimateWithSE};
use crate::ingest::{self, Cell, Column, IngestError, RawTable};
use crate::stats::{self, Z95};

type BoxError = Box<dyn StdError + Send + Sync>;

#[derive(Debug, Error)]
pub enum ReplicateError {
    #[error("stratum '{stratum}' has {found} PSUs; BRR needs exactly 2")]
    NotTwoPsu { stratum: String, found: usize },
    #[error("design has no stratum with two or more PSUs")]
    NoReplicates,
    #[error("Fay coefficient {0} outside [0, 1)")]
    InvalidFay(f64),
    #[error("bootstrap needs at least one replicate")]
    InvalidReplicateCount,
    #[error("replicate set covers {found} rows, frame has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("replicate {replicate} has a negative or non-finite multiplier")]
    BadMultiplier { replicate: usize },
    #[error("{found} coefficients for {expected} replicates")]
    CoefLength { expected: usize, found: usize },
    #[error("statistic failed on {}: {source}", replicate.map_or("full sample".to_string(), |r| format!("replicate {r}")))]
    Statistic {
        replicate: Option<usize>,
        #[source]
        source: BoxError,
    },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "rho")]
pub enum ReplicateMethod {
    Jackknife,
    Brr,
    Fay(f64),
    Bootstrap,
}

/// `R` multiplier vectors on the base weights plus per-replicate variance
/// coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSet {
    pub method: ReplicateMethod,
    multipliers: Vec<Vec<f64>>,
    coef: Vec<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplicateInterval {
    /// `point ± 1.96·se`.
    #[default]
    Wald,
    /// 2.5% and 97.5% quantiles of the replicate estimates, widened if
    /// needed so the interval contains the full-sample estimate.
    Percentile,
}

impl ReplicateSet {
    /// Builds a set from explicit multipliers and coefficients.
    pub fn new(
        method: ReplicateMethod,
        multipliers: Vec<Vec<f64>>,
        coef: Vec<f64>,
        seed: Option<u64>,
    ) -> Result<Self, ReplicateError> {
        if multipliers.is_empty() {
            return Err(ReplicateError::NoReplicates);
        }
        if coef.len() != multipliers.len() {
            return Err(ReplicateError::CoefLength {
                expected: multipliers.len(),
                found: coef.len(),
            });
        }
        let n = multipliers[0].len();
        for (r, m) in multipliers.iter().enumerate() {
            if m.len() != n {
                return Err(ReplicateError::LengthMismatch {
                    expected: n,
                    found: m.len(),
                });
            }
            if m.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(ReplicateError::BadMultiplier { replicate: r });
            }
        }
        Ok(ReplicateSet {
            method,
            multipliers,
            coef,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.multipliers[0].len()
    }

    pub fn multipliers(&self) -> &[Vec<f64>] {
        &self.multipliers
    }

    pub fn coef(&self) -> &[f64] {
        &self.coef
    }

    /// Full replicate weights `w_i · m_ri` for replicate `r`.
    pub fn replicate_weights(&self, base: &[f64], r: usize) -> Vec<f64> {
        base.iter().zip(&self.multipliers[r]).map(|(w, m)| w * m).collect()
    }

    /// Same replicates in a different order.
    pub fn permuted(&self, order: &[usize]) -> ReplicateSet {
        ReplicateSet {
            multipliers: order.iter().map(|&r| self.multipliers[r].clone()).collect(),
            coef: order.iter().map(|&r| self.coef[r]).collect(),
            ..self.clone()
        }
    }

    /// Writes full replicate weights, one column per replicate (`rep_1`..),
    /// preceded by a 1-based `row_id`.
    pub fn write_csv(&self, frame: &DesignFrame, path: impl AsRef<Path>) -> Result<(), ReplicateError> {
        self.check_frame(frame)?;
        let mut columns = vec![Column::numeric(
            "row_id",
            (1..=frame.len()).map(|i| Cell::Num(i as f64)).collect(),
        )];
        for r in 0..self.len() {
            let w = self.replicate_weights(frame.weights(), r);
            columns.push(Column::numeric(format!("rep_{}", r + 1), w.into_iter().map(Cell::Num).collect()));
        }
        let table = RawTable::with_row_count("replicates", columns, frame.len())?;
        ingest::write_csv(&table, path.as_ref())?;
        Ok(())
    }

    /// Reads full replicate weights (every column except `row_id`) and turns
    /// them into multipliers on the frame's base weights.
    pub fn read_csv(
        frame: &DesignFrame,
        path: impl AsRef<Path>,
        method: ReplicateMethod,
        coef: Vec<f64>,
    ) -> Result<Self, ReplicateError> {
        let table = ingest::read_csv(path.as_ref(), None)?;
        if table.row_count() != frame.len() {
            return Err(ReplicateError::LengthMismatch {
                expected: frame.len(),
                found: table.row_count(),
            });
        }
        let mut multipliers = Vec::new();
        for column in table.columns().iter().filter(|c| c.name != "row_id") {
            let m = column
                .values
                .iter()
                .zip(frame.weights())
                .map(|(c, w)| c.as_f64().map_or(f64::NAN, |v| v / w))
                .collect();
            multipliers.push(m);
        }
        ReplicateSet::new(method, multipliers, coef, None)
    }

    fn check_frame(&self, frame: &DesignFrame) -> Result<(), ReplicateError> {
        if self.rows() != frame.len() {
            return Err(ReplicateError::LengthMismatch {
                expected: frame.len(),
                found: self.rows(),
            });
        }
        Ok(())
    }
}

/// Per-PSU multiplier table expanded to rows.
fn expand(frame: &DesignFrame, per_psu: &[f64]) -> Vec<f64> {
    frame.psus().iter().map(|&p| per_psu[p]).collect()
}

fn replicable_groups(frame: &DesignFrame) -> Result<Vec<Vec<usize>>, ReplicateError> {
    let groups: Vec<Vec<usize>> = frame
        .variance_strata()?
        .into_iter()
        .map(|g| g.psus)
        .filter(|p| p.len() >= 2)
        .collect();
    if groups.is_empty() {
        return Err(ReplicateError::NoReplicates);
    }
    Ok(groups)
}

/// Delete-one-PSU jackknife (JKn): one replicate per PSU in every variance
/// stratum with at least two PSUs.
pub fn make_jackknife_weights(frame: &DesignFrame) -> Result<ReplicateSet, ReplicateError> {
    let groups = replicable_groups(frame)?;
    let mut multipliers = Vec::new();
    let mut coef = Vec::new();
    for psus in &groups {
        let n_h = psus.len() as f64;
        for &dropped in psus {
            let mut per_psu = vec![1.0; frame.psu_count()];
            for &p in psus {
                per_psu[p] = if p == dropped { 0.0 } else { n_h / (n_h - 1.0) };
            }
            multipliers.push(expand(frame, &per_psu));
            coef.push((n_h - 1.0) / n_h);
        }
    }
    ReplicateSet::new(ReplicateMethod::Jackknife, multipliers, coef, None)
}

/// Sylvester Hadamard matrix of the given order (a power of two).
pub fn sylvester_hadamard(order: usize) -> Vec<Vec<i8>> {
    assert!(order.is_power_of_two(), "Sylvester order must be a power of two");
    let mut h = vec![vec![1i8]];
    while h.len() < order {
        let k = h.len();
        let mut next = vec![vec![0i8; 2 * k]; 2 * k];
        for i in 0..k {
            for j in 0..k {
                next[i][j] = h[i][j];
                next[i][j + k] = h[i][j];
                next[i + k][j] = h[i][j];
                next[i + k][j + k] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

/// Number of BRR replicates for `h` strata: the smallest Sylvester order that
/// is at least `h` and at least 4.
pub fn brr_replicate_count(h: usize) -> usize {
    h.next_power_of_two().max(4)
}

/// Balanced repeated replication with Fay coefficient `rho` (0 gives classic
/// BRR). Every variance stratum must hold exactly two PSUs.
pub fn make_brr_weights(frame: &DesignFrame, rho: f64) -> Result<ReplicateSet, ReplicateError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(ReplicateError::InvalidFay(rho));
    }
    let groups = frame.variance_strata()?;
    for g in &groups {
        if g.psus.len() != 2 {
            return Err(ReplicateError::NotTwoPsu {
                stratum: frame.strata_labels()[g.strata[0]].clone(),
                found: g.psus.len(),
            });
        }
    }
    if groups.is_empty() {
        return Err(ReplicateError::NoReplicates);
    }
    let r_count = brr_replicate_count(groups.len());
    let hadamard = sylvester_hadamard(r_count);
    let mut multipliers = Vec::with_capacity(r_count);
    for row in &hadamard {
        let mut per_psu = vec![1.0; frame.psu_count()];
        for (h, g) in groups.iter().enumerate() {
            let (first, second) = if row[h] > 0 { (2.0 - rho, rho) } else { (rho, 2.0 - rho) };
            per_psu[g.psus[0]] = first;
            per_psu[g.psus[1]] = second;
        }
        multipliers.push(expand(frame, &per_psu));
    }
    let method = if rho == 0.0 { ReplicateMethod::Brr } else { ReplicateMethod::Fay(rho) };
    let c = 1.0 / (r_count as f64 * (1.0 - rho).powi(2));
    ReplicateSet::new(method, multipliers, vec![c; r_count], None)
}

/// Rao-Wu rescaling bootstrap: each replicate draws `n_h - 1` PSUs with
/// replacement in every variance stratum.
pub fn make_bootstrap_weights(frame: &DesignFrame, b: usize, seed: u64) -> Result<ReplicateSet, ReplicateError> {
    if b == 0 {
        return Err(ReplicateError::InvalidReplicateCount);
    }
    let groups = replicable_groups(frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut multipliers = Vec::with_capacity(b);
    for _ in 0..b {
        let mut per_psu = vec![1.0; frame.psu_count()];
        for psus in &groups {
            let n_h = psus.len();
            let mut counts = vec![0u32; n_h];
            for _ in 0..n_h - 1 {
                counts[rng.random_range(0..n_h as u64) as usize] += 1;
            }
            let scale = n_h as f64 / (n_h - 1) as f64;
            for (&p, &m) in psus.iter().zip(&counts) {
                per_psu[p] = m as f64 * scale;
            }
        }
        multipliers.push(expand(frame, &per_psu));
    }
    ReplicateSet::new(ReplicateMethod::Bootstrap, multipliers, vec![1.0 / b as f64; b], Some(seed))
}

/// Replicate estimates of a statistic together with the full-sample value.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateEstimates {
    pub point: f64,
    pub replicates: Vec<f64>,
}

/// Evaluates `statistic` on the base weights and on every replicate weight
/// vector. Replicates run in parallel; results keep replicate order.
pub fn replicate_estimates<F, E>(
    statistic: F,
    frame: &DesignFrame,
    reps: &ReplicateSet,
) -> Result<ReplicateEstimates, ReplicateError>
where
    F: Fn(&DesignFrame, &[f64]) -> Result<f64, E> + Sync,
    E: Into<BoxError>,
{
    reps.check_frame(frame)?;
    let point = statistic(frame, frame.weights()).map_err(|e| ReplicateError::Statistic {
        replicate: None,
        source: e.into(),
    })?;
    let replicates = (0..reps.len())
        .into_par_iter()
        .map(|r| {
            let w = reps.replicate_weights(frame.weights(), r);
            statistic(frame, &w).map_err(|e| ReplicateError::Statistic {
                replicate: Some(r),
                source: e.into(),
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(ReplicateEstimates { point, replicates })
}

/// `Var = sum_r coef_r (theta_r - theta)^2` around the full-sample estimate.
pub fn combine_replicates(
    estimates: &ReplicateEstimates,
    reps: &ReplicateSet,
    interval: ReplicateInterval,
    n: usize,
) -> EstimateWithSE {
    let var: f64 = estimates
        .replicates
        .iter()
        .zip(reps.coef())
        .map(|(t, c)| c * (t - estimates.point).powi(2))
        .sum();
    let se = var.sqrt();
    let point = estimates.point;
    let ci95 = match interval {
        ReplicateInterval::Wald => (point - Z95 * se, point + Z95 * se),
        ReplicateInterval::Percentile => {
            let lo = stats::quantile(&estimates.replicates, 0.025);
            let hi = stats::quantile(&estimates.replicates, 0.975);
            (lo.min(point), hi.max(point))
        }
    };
    EstimateWithSE {
        point,
        se,
        ci95,
        n,
        method: EstimateMethod::Replicate,
    }
}

/// Replicate-based standard error and interval for an arbitrary statistic
/// of the frame under a weight vector.
pub fn replicate_variance<F, E>(
    statistic: F,
    frame: &DesignFrame,
    reps: &ReplicateSet,
    interval: ReplicateInterval,
) -> Result<EstimateWithSE, ReplicateError>
where
    F: Fn(&DesignFrame, &[f64]) -> Result<f64, E> + Sync,
    E: Into<BoxError>,
{
    let estimates = replicate_estimates(statistic, frame, reps)?;
    Ok(combine_replicates(&estimates, reps, interval, frame.domain_size()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignBuilder;
    use crate::estimate::taylor_linearized_variance;
    use approx::assert_relative_eq;
    use std::convert::Infallible;

    fn frame(strata: usize, psus: usize, per_psu: usize) -> DesignFrame {
        let mut w = Vec::new();
        let mut s = Vec::new();
        let mut p = Vec::new();
        let mut y = Vec::new();
        for h in 0..strata {
            for j in 0..psus {
                for k in 0..per_psu {
                    let i = (h * 31 + j * 7 + k * 3) as f64;
                    w.push(1.0 + (i * 0.37).sin().abs() * 4.0);
                    y.push((i * 0.11).cos() * 10.0 + h as f64);
                    s.push(h.to_string());
                    p.push(j.to_string());
                }
            }
        }
        DesignBuilder::new(w, s, p).values("y", &y).build().unwrap()
    }

    fn total(frame: &DesignFrame, w: &[f64]) -> Result<f64, Infallible> {
        let y = frame.variable("y").unwrap();
        Ok(y.iter().zip(w).map(|(v, w)| v.unwrap() * w).sum())
    }

    fn taylor_total_var(f: &DesignFrame) -> f64 {
        let z: Vec<f64> = f
            .variable("y")
            .unwrap()
            .iter()
            .zip(f.weights())
            .map(|(v, w)| v.unwrap() * w)
            .collect();
        taylor_linearized_variance(f, &z).unwrap()
    }

    #[test]
    fn jackknife_shape_and_multipliers() {
        let f = frame(2, 2, 3);
        let reps = make_jackknife_weights(&f).unwrap();
        assert_eq!(reps.len(), 4);
        for m in reps.multipliers() {
            let mut distinct: Vec<f64> = m.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            assert_eq!(distinct, vec![0.0, 1.0, 2.0]);
        }
        assert!(reps.coef().iter().all(|&c| c == 0.5));
    }

    #[test]
    fn jackknife_preserves_other_strata_totals() {
        let f = frame(3, 4, 2);
        let reps = make_jackknife_weights(&f).unwrap();
        for r in 0..reps.len() {
            let w = reps.replicate_weights(f.weights(), r);
            let mut base_tot = [0.0; 3];
            let mut rep_tot = [0.0; 3];
            for (i, &h) in f.strata().iter().enumerate() {
                base_tot[h] += f.weights()[i];
                rep_tot[h] += w[i];
            }
            let touched = r / 4;
            for h in 0..3 {
                if h != touched {
                    assert_eq!(base_tot[h], rep_tot[h]);
                }
            }
        }
    }

    #[test]
    fn jackknife_total_matches_taylor() {
        let f = frame(5, 3, 4);
        let reps = make_jackknife_weights(&f).unwrap();
        let e = replicate_variance(total, &f, &reps, ReplicateInterval::Wald).unwrap();
        assert_relative_eq!(e.se.powi(2), taylor_total_var(&f), max_relative = 1e-10);
    }

    #[test]
    fn brr_padding_and_fay() {
        let f = frame(3, 2, 2);
        let reps = make_brr_weights(&f, 0.0).unwrap();
        assert_eq!(reps.len(), 4);
        assert_eq!(reps.method, ReplicateMethod::Brr);
        for m in reps.multipliers() {
            assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        }
        assert_relative_eq!(reps.coef()[0], 0.25);
        let fay = make_brr_weights(&f, 0.5).unwrap();
        assert!(fay.multipliers()[0].iter().all(|&v| v == 0.5 || v == 1.5));
        assert_relative_eq!(fay.coef()[0], 1.0);
        assert!(matches!(make_brr_weights(&f, 1.0), Err(ReplicateError::InvalidFay(_))));
    }

    #[test]
    fn brr_total_matches_taylor() {
        for h in [1, 3, 4, 7, 9] {
            let f = frame(h, 2, 3);
            for rho in [0.0, 0.3] {
                let reps = make_brr_weights(&f, rho).unwrap();
                let e = replicate_variance(total, &f, &reps, ReplicateInterval::Wald).unwrap();
                assert_relative_eq!(e.se.powi(2), taylor_total_var(&f), max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn brr_rejects_three_psus() {
        let f = frame(2, 3, 1);
        assert!(matches!(make_brr_weights(&f, 0.0), Err(ReplicateError::NotTwoPsu { found: 3, .. })));
    }

    #[test]
    fn hadamard_rows_orthogonal() {
        for order in [1, 2, 4, 8, 16, 32] {
            let h = sylvester_hadamard(order);
            for i in 0..order {
                for j in 0..order {
                    let dot: i32 = (0..order).map(|k| (h[i][k] * h[j][k]) as i32).sum();
                    assert_eq!(dot, if i == j { order as i32 } else { 0 });
                }
            }
        }
        assert_eq!(brr_replicate_count(3), 4);
        assert_eq!(brr_replicate_count(5), 8);
        assert_eq!(brr_replicate_count(15), 16);
    }

    #[test]
    fn bootstrap_two_psu_multipliers() {
        let f = frame(4, 2, 2);
        let reps = make_bootstrap_weights(&f, 50, 9).unwrap();
        for m in reps.multipliers() {
            assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        }
        assert_eq!(reps, make_bootstrap_weights(&f, 50, 9).unwrap());
        assert_ne!(reps, make_bootstrap_weights(&f, 50, 10).unwrap());
    }

    #[test]
    fn bootstrap_multiplier_mean_is_one() {
        let f = frame(2, 2, 1);
        let reps = make_bootstrap_weights(&f, 10_000, 1).unwrap();
        for i in 0..f.len() {
            let mean: f64 = reps.multipliers().iter().map(|m| m[i]).sum::<f64>() / 10_000.0;
            assert!((mean - 1.0).abs() < 0.02, "row {i}: {mean}");
        }
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let f = frame(3, 3, 2);
        let reps = make_bootstrap_weights(&f, 20, 3).unwrap();
        let e = replicate_variance(|_, _| Ok::<_, Infallible>(4.2), &f, &reps, ReplicateInterval::Percentile).unwrap();
        assert_eq!(e.se, 0.0);
        assert_eq!(e.ci95, (4.2, 4.2));
    }

    #[test]
    fn order_invariance() {
        let f = frame(4, 3, 2);
        let reps = make_jackknife_weights(&f).unwrap();
        let mut order: Vec<usize> = (0..reps.len()).rev().collect();
        order.swap(0, 5);
        let a = replicate_variance(total, &f, &reps, ReplicateInterval::Wald).unwrap();
        let b = replicate_variance(total, &f, &reps.permuted(&order), ReplicateInterval::Wald).unwrap();
        assert_relative_eq!(a.se, b.se, max_relative = 1e-12);
    }

    #[test]
    fn statistic_error_names_replicate() {
        let f = frame(2, 2, 1);
        let reps = make_jackknife_weights(&f).unwrap();
        let err = replicate_variance(
            |_, w: &[f64]| if w.contains(&0.0) { Err("zero weight") } else { Ok(1.0) },
            &f,
            &reps,
            ReplicateInterval::Wald,
        )
        .unwrap_err();
        assert!(matches!(err, ReplicateError::Statistic { replicate: Some(0), .. }));
    }

    #[test]
    fn csv_round_trip() {
        let f = frame(2, 3, 2);
        let reps = make_bootstrap_weights(&f, 7, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reps.csv");
        reps.write_csv(&f, &path).unwrap();
        let back = ReplicateSet::read_csv(&f, &path, ReplicateMethod::Bootstrap, reps.coef().to_vec()).unwrap();
        assert_eq!(back.len(), 7);
        for (a, b) in reps.multipliers().iter().zip(back.multipliers()) {
            for (x, y) in a.iter().zip(b) {
                assert_relative_eq!(x, y, max_relative = 1e-12);
            }
        }
    }
}
