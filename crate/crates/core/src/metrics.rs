//! Survey-weighted classification metrics: Horvitz-Thompson AUROC, weighted
//! confusion counts, ROC/PR curves and AUPRC, plus design-based intervals.

use std::cmp::Ordering;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, DesignFrame};
use crate::estimate::{EstimateMethod, EstimateWithSE};
use crate::ingest::{self, Cell, Column, IngestError, RawTable};
use crate::replicate::{
    combine_replicates, make_bootstrap_weights, replicate_estimates, ReplicateError, ReplicateInterval,
    ReplicateMethod, ReplicateSet,
};
use crate::stats::Z95;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("labels, scores and weights differ in length ({labels}, {scores}, {weights})")]
    LengthMismatch {
        labels: usize,
        scores: usize,
        weights: usize,
    },
    #[error("label {0} is not 0 or 1")]
    NotBinary(f64),
    #[error("score or weight at position {0} is not finite")]
    NonFinite(usize),
    #[error("negative weight at position {0}")]
    NegativeWeight(usize),
    #[error("rank metrics need positive weight on both classes")]
    SingleClass,
    #[error("no positive weight; sensitivity undefined")]
    NoPositives,
    #[error("no negative weight; specificity undefined")]
    NoNegatives,
    #[error("frame has no outcome variable")]
    NoOutcome,
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Replicate(#[from] Box<ReplicateError>),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

impl From<ReplicateError> for MetricError {
    fn from(e: ReplicateError) -> Self {
        MetricError::Replicate(Box::new(e))
    }
}

/// Aligned labels, scores and non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    labels: Vec<bool>,
    scores: Vec<f64>,
    weights: Vec<f64>,
}

impl ScoredSet {
    pub fn new(labels: &[f64], scores: &[f64], weights: &[f64]) -> Result<Self, MetricError> {
        if labels.len() != scores.len() || labels.len() != weights.len() {
            return Err(MetricError::LengthMismatch {
                labels: labels.len(),
                scores: scores.len(),
                weights: weights.len(),
            });
        }
        let mut flags = Vec::with_capacity(labels.len());
        for (i, ((&y, &s), &w)) in labels.iter().zip(scores).zip(weights).enumerate() {
            flags.push(match y {
                1.0 => true,
                0.0 => false,
                v => return Err(MetricError::NotBinary(v)),
            });
            if !s.is_finite() || !w.is_finite() {
                return Err(MetricError::NonFinite(i));
            }
            if w < 0.0 {
                return Err(MetricError::NegativeWeight(i));
            }
        }
        Ok(ScoredSet {
            labels: flags,
            scores: scores.to_vec(),
            weights: weights.to_vec(),
        })
    }

    /// Equal unit weights.
    pub fn unweighted(labels: &[f64], scores: &[f64]) -> Result<Self, MetricError> {
        Self::new(labels, scores, &vec![1.0; labels.len()])
    }

    /// Rows of `frame` in the domain with an observed outcome, scored by
    /// `scores` (one per frame row) and weighted by `weights`.
    pub fn from_frame(frame: &DesignFrame, scores: &[f64], weights: &[f64]) -> Result<Self, MetricError> {
        let outcome = frame.outcome().map_err(|_| MetricError::NoOutcome)?;
        if scores.len() != frame.len() || weights.len() != frame.len() {
            return Err(MetricError::LengthMismatch {
                labels: frame.len(),
                scores: scores.len(),
                weights: weights.len(),
            });
        }
        let mut y = Vec::new();
        let mut s = Vec::new();
        let mut w = Vec::new();
        for i in 0..frame.len() {
            if let (true, Some(v)) = (frame.domain_mask()[i], outcome[i]) {
                y.push(v);
                s.push(scores[i]);
                w.push(weights[i]);
            }
        }
        Self::new(&y, &s, &w)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn with_weights(&self, weights: &[f64]) -> Result<Self, MetricError> {
        let labels: Vec<f64> = self.labels.iter().map(|&b| f64::from(u8::from(b))).collect();
        Self::new(&labels, &self.scores, weights)
    }

    pub fn with_unit_weights(&self) -> Self {
        ScoredSet {
            weights: vec![1.0; self.len()],
            ..self.clone()
        }
    }

    /// Total positive and negative weight.
    pub fn class_weights(&self) -> (f64, f64) {
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (&y, &w) in self.labels.iter().zip(&self.weights) {
            if y {
                pos += w;
            } else {
                neg += w;
            }
        }
        (pos, neg)
    }

    fn require_both(&self) -> Result<(f64, f64), MetricError> {
        let (pos, neg) = self.class_weights();
        if pos > 0.0 && neg > 0.0 {
            Ok((pos, neg))
        } else {
            Err(MetricError::SingleClass)
        }
    }

    /// Groups of rows sharing a score, in ascending score order, as
    /// (score, positive weight, negative weight).
    fn tie_groups(&self) -> Vec<(f64, f64, f64)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        let mut groups: Vec<(f64, f64, f64)> = Vec::new();
        for i in order {
            let s = self.scores[i];
            let (p, n) = if self.labels[i] { (self.weights[i], 0.0) } else { (0.0, self.weights[i]) };
            match groups.last_mut() {
                Some(g) if g.0 == s => {
                    g.1 += p;
                    g.2 += n;
                }
                _ => groups.push((s, p, n)),
            }
        }
        groups
    }
}

/// Horvitz-Thompson AUROC: the weighted probability that a positive outscores
/// a negative, ties counting one half. Pair weights are
/// `(w_i / W+) (w_j / W-)`; computed in `O(n log n)` from cumulative negative
/// weight below each score.
pub fn weighted_auroc(set: &ScoredSet) -> Result<f64, MetricError> {
    let (pos, neg) = set.require_both()?;
    let mut below = 0.0;
    let mut c = 0.0;
    for (_, p, n) in set.tie_groups() {
        c += p * (below + 0.5 * n);
        below += n;
    }
    Ok((c / (pos * neg)).clamp(0.0, 1.0))
}

/// Mann-Whitney AUROC with DeLong's standard error; the interval is clipped
/// to `[0, 1]`.
pub fn unweighted_auroc_delong_ci(set: &ScoredSet) -> Result<EstimateWithSE, MetricError> {
    let unit = set.with_unit_weights();
    let (n_pos, n_neg) = unit.require_both()?;
    let groups = unit.tie_groups();
    // Per-group placement values: share of the other class beaten, ties half.
    let mut v10 = Vec::with_capacity(n_pos as usize);
    let mut v01 = Vec::with_capacity(n_neg as usize);
    let mut neg_below = 0.0;
    let mut pos_below = 0.0;
    for &(_, p, n) in &groups {
        let beat_neg = (neg_below + 0.5 * n) / n_neg;
        let beaten_by_pos = (n_pos - pos_below - p + 0.5 * p) / n_pos;
        v10.extend(std::iter::repeat_n(beat_neg, p as usize));
        v01.extend(std::iter::repeat_n(beaten_by_pos, n as usize));
        neg_below += n;
        pos_below += p;
    }
    let auc = v10.iter().sum::<f64>() / n_pos;
    let var_component = |v: &[f64]| {
        if v.len() < 2 {
            return 0.0;
        }
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let se = (var_component(&v10) / n_pos + var_component(&v01) / n_neg).sqrt();
    Ok(EstimateWithSE {
        point: auc,
        se,
        ci95: ((auc - Z95 * se).max(0.0), (auc + Z95 * se).min(1.0)),
        n: unit.len(),
        method: EstimateMethod::Srs,
    })
}

/// Weight sums of the four confusion cells at a threshold; a row is
/// predicted positive when its score is at least the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedConfusion {
    pub tp_w: f64,
    pub fp_w: f64,
    pub tn_w: f64,
    pub fn_w: f64,
    pub threshold: f64,
}

pub fn weighted_confusion(set: &ScoredSet, threshold: f64) -> Result<WeightedConfusion, MetricError> {
    if !threshold.is_finite() {
        return Err(MetricError::NonFinite(usize::MAX));
    }
    let mut c = WeightedConfusion {
        tp_w: 0.0,
        fp_w: 0.0,
        tn_w: 0.0,
        fn_w: 0.0,
        threshold,
    };
    for ((&y, &s), &w) in set.labels.iter().zip(&set.scores).zip(&set.weights) {
        match (y, s >= threshold) {
            (true, true) => c.tp_w += w,
            (true, false) => c.fn_w += w,
            (false, true) => c.fp_w += w,
            (false, false) => c.tn_w += w,
        }
    }
    Ok(c)
}

/// Weighted sensitivity and specificity.
pub fn weighted_sens_spec(conf: &WeightedConfusion) -> Result<(f64, f64), MetricError> {
    let pos = conf.tp_w + conf.fn_w;
    let neg = conf.tn_w + conf.fp_w;
    if pos <= 0.0 {
        return Err(MetricError::NoPositives);
    }
    if neg <= 0.0 {
        return Err(MetricError::NoNegatives);
    }
    Ok((conf.tp_w / pos, conf.tn_w / neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Roc,
    Pr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
}

impl CurvePoints {
    /// Trapezoidal area under the curve.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|p| (p[1].x - p[0].x) * (p[1].y + p[0].y) / 2.0)
            .sum()
    }

    /// Plot-ready CSV with columns `threshold,x,y`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), MetricError> {
        let col = |name: &str, f: fn(&CurvePoint) -> f64| {
            Column::numeric(name, self.points.iter().map(|p| Cell::Num(f(p))).collect())
        };
        let table = RawTable::with_row_count(
            "curve",
            vec![col("threshold", |p| p.threshold), col("x", |p| p.x), col("y", |p| p.y)],
            self.points.len(),
        )?;
        ingest::write_csv(&table, path)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub roc: CurvePoints,
    pub pr: CurvePoints,
    pub auprc: f64,
}

/// ROC `(FPR, TPR)` and PR `(recall, precision)` curves from a descending
/// sweep over distinct scores, with step-wise AUPRC (average precision:
/// each recall increment weighted by the precision at that threshold).
pub fn weighted_curves(set: &ScoredSet) -> Result<Curves, MetricError> {
    let (pos, neg) = set.require_both()?;
    let mut roc = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut pr = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 1.0,
    }];
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut auprc = 0.0;
    let mut last_recall = 0.0;
    for (s, p, n) in set.tie_groups().into_iter().rev() {
        tp += p;
        fp += n;
        let recall = tp / pos;
        let predicted = tp + fp;
        let precision = if predicted > 0.0 { tp / predicted } else { 1.0 };
        roc.push(CurvePoint {
            threshold: s,
            x: fp / neg,
            y: recall,
        });
        pr.push(CurvePoint {
            threshold: s,
            x: recall,
            y: precision,
        });
        auprc += (recall - last_recall) * precision;
        last_recall = recall;
    }
    // Guard the endpoint against rounding in the cumulative sums.
    if let Some(last) = roc.last_mut() {
        last.x = 1.0;
        last.y = 1.0;
    }
    Ok(Curves {
        roc: CurvePoints {
            kind: CurveKind::Roc,
            points: roc,
        },
        pr: CurvePoints {
            kind: CurveKind::Pr,
            points: pr,
        },
        auprc,
    })
}

pub fn weighted_auprc(set: &ScoredSet) -> Result<f64, MetricError> {
    Ok(weighted_curves(set)?.auprc)
}

/// Metric selector for interval and CV code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "name", content = "threshold")]
pub enum Metric {
    Auroc,
    Auprc,
    Sensitivity(f64),
    Specificity(f64),
}

impl Metric {
    pub fn evaluate(&self, set: &ScoredSet) -> Result<f64, MetricError> {
        match *self {
            Metric::Auroc => weighted_auroc(set),
            Metric::Auprc => weighted_auprc(set),
            Metric::Sensitivity(t) => Ok(weighted_sens_spec(&weighted_confusion(set, t)?)?.0),
            Metric::Specificity(t) => Ok(weighted_sens_spec(&weighted_confusion(set, t)?)?.1),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Metric::Auroc => "auroc".into(),
            Metric::Auprc => "auprc".into(),
            Metric::Sensitivity(t) => format!("sensitivity@{t}"),
            Metric::Specificity(t) => format!("specificity@{t}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    /// Rao-Wu bootstrap of PSUs within strata.
    #[default]
    Psu,
    /// Rows drawn with replacement, design ignored.
    Row,
}

#[derive(Debug, Clone)]
pub enum CiMethod<'a> {
    Bootstrap {
        b: usize,
        seed: u64,
        unit: ResampleUnit,
        interval: ReplicateInterval,
    },
    Replicates(&'a ReplicateSet, ReplicateInterval),
}

/// Row-level bootstrap multipliers over the frame's domain rows.
pub fn row_bootstrap_weights(frame: &DesignFrame, b: usize, seed: u64) -> Result<ReplicateSet, ReplicateError> {
    if b == 0 {
        return Err(ReplicateError::InvalidReplicateCount);
    }
    let rows: Vec<usize> = (0..frame.len()).filter(|&i| frame.domain_mask()[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut multipliers = Vec::with_capacity(b);
    for _ in 0..b {
        let mut m = vec![0.0; frame.len()];
        for _ in 0..rows.len() {
            m[rows[rng.random_range(0..rows.len() as u64) as usize]] += 1.0;
        }
        multipliers.push(m);
    }
    ReplicateSet::new(ReplicateMethod::Bootstrap, multipliers, vec![1.0 / b as f64; b], Some(seed))
}

/// Interval for a metric computed on the frame's domain rows with scores
/// `scores` (one per frame row). With `weighted = false` every row carries
/// unit base weight, so resampling reflects the design but the metric is the
/// unweighted one.
pub fn metric_ci(
    frame: &DesignFrame,
    scores: &[f64],
    metric: Metric,
    weighted: bool,
    method: &CiMethod<'_>,
) -> Result<EstimateWithSE, MetricError> {
    if scores.len() != frame.len() {
        return Err(MetricError::LengthMismatch {
            labels: frame.len(),
            scores: scores.len(),
            weights: frame.len(),
        });
    }
    let owned;
    let (reps, interval) = match method {
        CiMethod::Bootstrap { b, seed, unit, interval } => {
            owned = match unit {
                ResampleUnit::Psu => make_bootstrap_weights(frame, *b, *seed)?,
                ResampleUnit::Row => row_bootstrap_weights(frame, *b, *seed)?,
            };
            (&owned, *interval)
        }
        CiMethod::Replicates(r, interval) => (*r, *interval),
    };
    let base = if weighted {
        frame.clone()
    } else {
        frame.with_weights(vec![1.0; frame.len()])?
    };
    let statistic = |f: &DesignFrame, w: &[f64]| -> Result<f64, MetricError> {
        metric.evaluate(&ScoredSet::from_frame(f, scores, w)?)
    };
    let estimates = replicate_estimates(statistic, &base, reps)?;
    let n = ScoredSet::from_frame(&base, scores, base.weights())?.len();
    Ok(combine_replicates(&estimates, reps, interval, n))
}

/// Unweighted and weighted versions of a metric and their difference
/// (weighted minus unweighted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricGap {
    pub unweighted: EstimateWithSE,
    pub weighted: EstimateWithSE,
    pub gap: f64,
}

impl MetricGap {
    pub fn new(unweighted: EstimateWithSE, weighted: EstimateWithSE) -> Self {
        MetricGap {
            unweighted,
            weighted,
            gap: weighted.point - unweighted.point,
        }
    }
}

/// Brute-force pairwise definition of the weighted AUROC, used as a check on
/// the sorted fast path.
pub fn pairwise_auroc(set: &ScoredSet) -> Result<f64, MetricError> {
    let (pos, neg) = set.require_both()?;
    let mut c = 0.0;
    for i in (0..set.len()).filter(|&i| set.labels[i]) {
        for j in (0..set.len()).filter(|&j| !set.labels[j]) {
            let omega = (set.weights[i] / pos) * (set.weights[j] / neg);
            c += match set.scores[i].total_cmp(&set.scores[j]) {
                Ordering::Greater => omega,
                Ordering::Equal => 0.5 * omega,
                Ordering::Less => 0.0,
            };
        }
    }
    Ok(c)
}
