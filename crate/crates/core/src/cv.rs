//! Fold construction that respects the sampling design, fold screening and
//! a repeated cross-validation runner.

use std::collections::HashSet;
use std::error::Error as StdError;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, DesignFrame};
use crate::ingest::{self, Cell, Column, IngestError, RawTable};
use crate::metrics::{Metric, MetricError, ScoredSet};
use crate::model::Predictor;
use crate::stats;

type BoxError = Box<dyn StdError + Send + Sync>;

pub const DEFAULT_MIN_TEST_N: usize = 50;
pub const DEFAULT_MIN_TEST_POS: usize = 5;

#[derive(Debug, Error)]
pub enum CvError {
    #[error("K must be at least 1")]
    ZeroK,
    #[error("K = {k} exceeds the {available} available units")]
    KTooLarge { k: usize, available: usize },
    #[error("frame has no outcome variable")]
    NoOutcome,
    #[error("plan covers {found} rows, frame has {expected}")]
    PlanMismatch { expected: usize, found: usize },
    #[error("training failed in repeat {repeat}, fold {fold}: {source}")]
    Trainer {
        repeat: usize,
        fold: usize,
        #[source]
        source: BoxError,
    },
    #[error("metric '{metric}' failed in repeat {repeat}, fold {fold}: {source}")]
    Metric {
        metric: String,
        repeat: usize,
        fold: usize,
        #[source]
        source: MetricError,
    },
    #[error("PSU shared between training and test rows in repeat {repeat}, fold {fold}")]
    Leakage { repeat: usize, fold: usize },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    PsuStratified,
    Random,
}

/// Fold assignment for `repeats` repetitions of `k`-fold CV. Folds are
/// 0-based in memory and 1-based in exported CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub repeats: usize,
    pub scheme: FoldScheme,
    pub seed: u64,
    /// `assignment[r][i]` is the fold of row `i` in repeat `r`.
    pub assignment: Vec<Vec<usize>>,
    /// `retained[r][f]`: whether fold `f` of repeat `r` passed screening.
    pub retained: Vec<Vec<bool>>,
    /// Test rows with an observed outcome, per cell (filled by screening).
    pub test_n: Vec<Vec<usize>>,
    /// Positive test rows, per cell (filled by screening).
    pub test_pos: Vec<Vec<usize>>,
}

impl FoldPlan {
    fn new(k: usize, repeats: usize, scheme: FoldScheme, seed: u64, assignment: Vec<Vec<usize>>) -> Self {
        FoldPlan {
            k,
            repeats,
            scheme,
            seed,
            assignment,
            retained: vec![vec![true; k]; repeats],
            test_n: Vec::new(),
            test_pos: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.assignment.first().map_or(0, Vec::len)
    }

    pub fn retained_count(&self) -> usize {
        self.retained.iter().flatten().filter(|&&r| r).count()
    }

    pub fn cell_count(&self) -> usize {
        self.k * self.repeats
    }

    pub fn test_rows(&self, repeat: usize, fold: usize) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.assignment[repeat][i] == fold).collect()
    }

    pub fn train_rows(&self, repeat: usize, fold: usize) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.assignment[repeat][i] != fold).collect()
    }

    /// Long-format CSV: `row_id,repeat,fold`, all 1-based.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), CvError> {
        let n = self.rows();
        let mut row_id = Vec::with_capacity(n * self.repeats);
        let mut repeat = Vec::with_capacity(n * self.repeats);
        let mut fold = Vec::with_capacity(n * self.repeats);
        for (r, a) in self.assignment.iter().enumerate() {
            for (i, &f) in a.iter().enumerate() {
                row_id.push(Cell::Num((i + 1) as f64));
                repeat.push(Cell::Num((r + 1) as f64));
                fold.push(Cell::Num((f + 1) as f64));
            }
        }
        let len = row_id.len();
        let table = RawTable::with_row_count(
            "folds",
            vec![Column::numeric("row_id", row_id), Column::numeric("repeat", repeat), Column::numeric("fold", fold)],
            len,
        )?;
        ingest::write_csv(&table, path)?;
        Ok(())
    }
}

/// Smallest number of PSUs in any stratum.
pub fn min_psus_per_stratum(frame: &DesignFrame) -> usize {
    frame.psus_by_stratum().iter().map(Vec::len).min().unwrap_or(0)
}

/// How shuffled PSUs are dealt to folds within a stratum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FoldDealing {
    /// The dealing position carries over from one stratum to the next
    /// (random start), so folds stay balanced even when strata hold fewer
    /// PSUs than there are folds.
    #[default]
    CarryOver,
    /// Every stratum is dealt from fold 1. With fewer PSUs per stratum than
    /// folds, the last folds stay empty and are removed by screening.
    PerStratum,
}

/// Stratified PSU-level folds: in each repeat the strata are visited in a
/// random order, PSUs are shuffled within each stratum and dealt round-robin
/// to folds, the dealing position carrying over between strata so fold
/// sizes stay balanced. All rows of a PSU share its fold.
///
/// `K` above the smallest per-stratum PSU count is allowed (some
/// stratum-fold cells stay empty) and logged.
pub fn assign_psu_folds(frame: &DesignFrame, k: usize, repeats: usize, seed: u64) -> Result<FoldPlan, CvError> {
    assign_psu_folds_with(frame, k, repeats, seed, FoldDealing::CarryOver)
}

pub fn assign_psu_folds_with(
    frame: &DesignFrame,
    k: usize,
    repeats: usize,
    seed: u64,
    dealing: FoldDealing,
) -> Result<FoldPlan, CvError> {
    if k == 0 {
        return Err(CvError::ZeroK);
    }
    let min_psus = min_psus_per_stratum(frame);
    if k > min_psus {
        warn!("K = {k} exceeds the smallest per-stratum PSU count ({min_psus}); some strata miss some folds");
    }
    let by_stratum = frame.psus_by_stratum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut psu_fold = vec![0usize; frame.psu_count()];
        let mut strata: Vec<usize> = (0..by_stratum.len()).collect();
        strata.shuffle(&mut rng);
        let mut position = rng.random_range(0..k as u64) as usize;
        for h in strata {
            if dealing == FoldDealing::PerStratum {
                position = 0;
            }
            let mut psus = by_stratum[h].clone();
            psus.shuffle(&mut rng);
            for p in psus {
                psu_fold[p] = position % k;
                position += 1;
            }
        }
        assignment.push(frame.psus().iter().map(|&p| psu_fold[p]).collect());
    }
    Ok(FoldPlan::new(k, repeats, FoldScheme::PsuStratified, seed, assignment))
}

/// As [`assign_psu_folds`] but rejects `K` above the smallest per-stratum
/// PSU count.
pub fn assign_psu_folds_strict(frame: &DesignFrame, k: usize, repeats: usize, seed: u64) -> Result<FoldPlan, CvError> {
    let available = min_psus_per_stratum(frame);
    if k > available {
        return Err(CvError::KTooLarge { k, available });
    }
    assign_psu_folds(frame, k, repeats, seed)
}

/// Row-level folds ignoring the design: rows are shuffled and dealt
/// round-robin, giving fold sizes that differ by at most one.
pub fn assign_random_folds(frame: &DesignFrame, k: usize, repeats: usize, seed: u64) -> Result<FoldPlan, CvError> {
    if k == 0 {
        return Err(CvError::ZeroK);
    }
    let n = frame.len();
    if k > n {
        return Err(CvError::KTooLarge { k, available: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut folds = vec![0usize; n];
        for (pos, i) in order.into_iter().enumerate() {
            folds[i] = pos % k;
        }
        assignment.push(folds);
    }
    Ok(FoldPlan::new(k, repeats, FoldScheme::Random, seed, assignment))
}

/// Marks folds whose test part has fewer than `min_test_n` rows with an
/// observed outcome (in the domain) or fewer than `min_test_pos` positives.
pub fn screen_folds(plan: &FoldPlan, frame: &DesignFrame, min_test_n: usize, min_test_pos: usize) -> Result<FoldPlan, CvError> {
    check_plan(plan, frame)?;
    let outcome = frame.outcome().map_err(|_| CvError::NoOutcome)?;
    let mut out = plan.clone();
    out.test_n = vec![vec![0; plan.k]; plan.repeats];
    out.test_pos = vec![vec![0; plan.k]; plan.repeats];
    for (r, a) in plan.assignment.iter().enumerate() {
        for (i, &f) in a.iter().enumerate() {
            if let (true, Some(y)) = (frame.domain_mask()[i], outcome[i]) {
                out.test_n[r][f] += 1;
                if y == 1.0 {
                    out.test_pos[r][f] += 1;
                }
            }
        }
        for f in 0..plan.k {
            out.retained[r][f] = plan.retained[r][f] && out.test_n[r][f] >= min_test_n && out.test_pos[r][f] >= min_test_pos;
        }
    }
    Ok(out)
}

fn check_plan(plan: &FoldPlan, frame: &DesignFrame) -> Result<(), CvError> {
    if plan.rows() != frame.len() {
        return Err(CvError::PlanMismatch {
            expected: frame.len(),
            found: plan.rows(),
        });
    }
    Ok(())
}

/// Errors if any PSU has rows in two different folds of the same repeat.
pub fn check_leakage(plan: &FoldPlan, frame: &DesignFrame) -> Result<(), CvError> {
    check_plan(plan, frame)?;
    for (r, a) in plan.assignment.iter().enumerate() {
        let mut fold_of = vec![None; frame.psu_count()];
        for (i, &f) in a.iter().enumerate() {
            let p = frame.psus()[i];
            match fold_of[p] {
                None => fold_of[p] = Some(f),
                Some(g) if g != f => return Err(CvError::Leakage { repeat: r, fold: f }),
                Some(_) => {}
            }
        }
    }
    Ok(())
}

/// A metric evaluated on each test fold, with design weights or unit weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvMetric {
    pub name: String,
    pub metric: Metric,
    pub weighted: bool,
}

impl CvMetric {
    pub fn new(metric: Metric, weighted: bool) -> Self {
        let prefix = if weighted { "weighted" } else { "unweighted" };
        CvMetric {
            name: format!("{prefix}_{}", metric.name()),
            metric,
            weighted,
        }
    }
}

/// Repeat × fold scores; `None` where the fold was screened out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub metric_name: String,
    pub values: Vec<Vec<Option<f64>>>,
}

impl ScoreMatrix {
    pub fn retained(&self) -> Vec<f64> {
        self.values.iter().flatten().filter_map(|v| *v).collect()
    }

    pub fn retained_count(&self) -> usize {
        self.retained().len()
    }

    pub fn mean(&self) -> Option<f64> {
        let v = self.retained();
        (!v.is_empty()).then(|| stats::mean(&v))
    }

    /// Sample standard deviation over retained cells.
    pub fn sd(&self) -> Option<f64> {
        let v = self.retained();
        (v.len() >= 2).then(|| stats::sample_sd(&v))
    }
}

/// Runs `trainer` on the complement of every retained fold and evaluates
/// each metric on the fold's test rows (domain rows with an observed outcome
/// and a finite score). Cells run in parallel; results are assembled in
/// (repeat, fold) order.
pub fn run_cv_multi<M, E, T>(
    plan: &FoldPlan,
    frame: &DesignFrame,
    trainer: T,
    metrics: &[CvMetric],
) -> Result<Vec<ScoreMatrix>, CvError>
where
    M: Predictor,
    E: Into<BoxError>,
    T: Fn(&DesignFrame, &[usize]) -> Result<M, E> + Sync,
{
    check_plan(plan, frame)?;
    let outcome = frame.outcome().map_err(|_| CvError::NoOutcome)?;
    if plan.scheme == FoldScheme::PsuStratified {
        check_leakage(plan, frame)?;
    }
    let cells: Vec<(usize, usize)> = (0..plan.repeats)
        .flat_map(|r| (0..plan.k).map(move |f| (r, f)))
        .collect();
    let results = cells
        .par_iter()
        .map(|&(r, f)| -> Result<Vec<Option<f64>>, CvError> {
            if !plan.retained[r][f] {
                return Ok(vec![None; metrics.len()]);
            }
            let train = plan.train_rows(r, f);
            let test = plan.test_rows(r, f);
            if plan.scheme == FoldScheme::PsuStratified {
                let train_psus: HashSet<usize> = train.iter().map(|&i| frame.psus()[i]).collect();
                if test.iter().any(|&i| train_psus.contains(&frame.psus()[i])) {
                    return Err(CvError::Leakage { repeat: r, fold: f });
                }
            }
            let model = trainer(frame, &train).map_err(|e| CvError::Trainer {
                repeat: r,
                fold: f,
                source: e.into(),
            })?;
            let names = model.feature_names().to_vec();
            let columns = names
                .iter()
                .map(|n| frame.variable(n))
                .collect::<Result<Vec<_>, _>>()?;
            let mut labels = Vec::new();
            let mut scores = Vec::new();
            let mut weights = Vec::new();
            let mut x = vec![0.0; columns.len()];
            'rows: for &i in &test {
                let Some(y) = outcome[i] else { continue };
                if !frame.domain_mask()[i] {
                    continue;
                }
                for (slot, col) in x.iter_mut().zip(&columns) {
                    match col[i] {
                        Some(v) => *slot = v,
                        None => continue 'rows,
                    }
                }
                let s = model.predict_one(&x);
                if !s.is_finite() {
                    continue;
                }
                labels.push(y);
                scores.push(s);
                weights.push(frame.weights()[i]);
            }
            metrics
                .iter()
                .map(|m| {
                    let w = if m.weighted { weights.clone() } else { vec![1.0; weights.len()] };
                    let tag = |source| CvError::Metric {
                        metric: m.name.clone(),
                        repeat: r,
                        fold: f,
                        source,
                    };
                    let set = ScoredSet::new(&labels, &scores, &w).map_err(tag)?;
                    m.metric.evaluate(&set).map(Some).map_err(tag)
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(metrics
        .iter()
        .enumerate()
        .map(|(j, m)| ScoreMatrix {
            metric_name: m.name.clone(),
            values: (0..plan.repeats)
                .map(|r| (0..plan.k).map(|f| results[r * plan.k + f][j]).collect())
                .collect(),
        })
        .collect())
}

/// Single-metric form of [`run_cv_multi`].
pub fn run_cv<M, E, T>(plan: &FoldPlan, frame: &DesignFrame, trainer: T, metric: &CvMetric) -> Result<ScoreMatrix, CvError>
where
    M: Predictor,
    E: Into<BoxError>,
    T: Fn(&DesignFrame, &[usize]) -> Result<M, E> + Sync,
{
    Ok(run_cv_multi(plan, frame, trainer, std::slice::from_ref(metric))?.remove(0))
}
