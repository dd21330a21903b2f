//! Synthetic finite populations with strata, clusters and informative
//! selection, and a two-stage sampler that records exact inclusion
//! probabilities. Census values are computed by full enumeration.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignBuilder, DesignError, DesignFrame};
use crate::ingest::{Column, IngestError, RawTable};
use crate::metrics::{weighted_auroc, MetricError, ScoredSet};
use crate::stats::logistic;

/// Seed of the frozen reference population.
pub const REFERENCE_POPULATION_SEED: u64 = 20_230_101;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid population spec: {0}")]
    InvalidSpec(String),
    #[error("stratum '{stratum}' has {available} clusters, {requested} requested")]
    InsufficientPsus {
        stratum: String,
        requested: usize,
        available: usize,
    },
    #[error("sample design lists {found} strata, population has {expected}")]
    StrataMismatch { expected: usize, found: usize },
    #[error("sample is empty")]
    EmptySample,
    #[error("score vector has {found} entries for {expected} units")]
    ScoreLength { expected: usize, found: usize },
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub label: String,
    pub clusters: usize,
    /// Inclusive range of cluster sizes.
    pub cluster_size: (usize, usize),
    /// Outcome log-odds intercept in this stratum.
    pub intercept: f64,
    /// Intra-cluster correlation of the latent outcome scale.
    pub icc: f64,
}

/// Selection propensity `q = exp(gamma_x x + gamma_y y)` used for the
/// within-cluster draw; zero coefficients give equal-probability sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionModel {
    pub gamma_x: f64,
    pub gamma_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    pub strata: Vec<StratumSpec>,
    /// Log-odds slope on the unit covariate `x`.
    pub beta_x: f64,
    /// Standard deviation of cluster means of `x` (unit deviations are N(0,1)).
    pub x_cluster_sd: f64,
    pub selection: SelectionModel,
}

impl PopulationSpec {
    /// Frozen reference population: 10 strata of 200 clusters with 20 to 60
    /// units each, prevalence rising across strata, mild clustering and
    /// selection that favours cases.
    pub fn reference() -> Self {
        PopulationSpec {
            strata: (0..10)
                .map(|h| StratumSpec {
                    label: format!("S{:02}", h + 1),
                    clusters: 200,
                    cluster_size: (20, 60),
                    intercept: -2.5 + 0.15 * h as f64,
                    icc: 0.05,
                })
                .collect(),
            beta_x: 0.8,
            x_cluster_sd: 0.5,
            selection: SelectionModel {
                gamma_x: 0.3,
                gamma_y: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.strata.is_empty() {
            return Err(SynthError::InvalidSpec("no strata".into()));
        }
        for s in &self.strata {
            if s.clusters == 0 {
                return Err(SynthError::InvalidSpec(format!("stratum '{}' has no clusters", s.label)));
            }
            if s.cluster_size.0 == 0 || s.cluster_size.0 > s.cluster_size.1 {
                return Err(SynthError::InvalidSpec(format!("stratum '{}' has a bad size range", s.label)));
            }
            if !(0.0..1.0).contains(&s.icc) {
                return Err(SynthError::InvalidSpec(format!("stratum '{}' icc outside [0, 1)", s.label)));
            }
        }
        if self.x_cluster_sd.is_nan() || self.x_cluster_sd < 0.0 || !self.beta_x.is_finite() {
            return Err(SynthError::InvalidSpec("bad outcome model".into()));
        }
        Ok(())
    }
}

/// A finite population. Clusters are numbered globally; `cluster_stratum`
/// maps each to its stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub strata_labels: Vec<String>,
    pub cluster_stratum: Vec<usize>,
    /// Units of each cluster, as indices into the unit arrays.
    pub cluster_units: Vec<Vec<usize>>,
    pub stratum: Vec<usize>,
    pub cluster: Vec<usize>,
    /// Covariate related to the outcome.
    pub x: Vec<f64>,
    /// Pure-noise covariate.
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    /// Selection propensity.
    pub q: Vec<f64>,
}

impl Population {
    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn clusters_in(&self, stratum: usize) -> Vec<usize> {
        (0..self.cluster_stratum.len()).filter(|&c| self.cluster_stratum[c] == stratum).collect()
    }

    pub fn to_table(&self) -> Result<RawTable, SynthError> {
        let opt = |v: &[f64]| v.iter().map(|&x| Some(x)).collect::<Vec<_>>();
        let idx = |v: &[usize]| v.iter().map(|&x| Some(x as f64)).collect::<Vec<_>>();
        Ok(RawTable::new(
            "population",
            vec![
                Column::from_options("stratum", &idx(&self.stratum)),
                Column::from_options("cluster", &idx(&self.cluster)),
                Column::from_options("x", &opt(&self.x)),
                Column::from_options("z", &opt(&self.z)),
                Column::from_options("y", &opt(&self.y)),
                Column::from_options("q", &opt(&self.q)),
            ],
        )?)
    }
}

/// Draws a population: cluster random effect `u ~ N(0, s2)` with
/// `s2 = icc/(1-icc) * pi^2/3`, `x = m_c + e`, `z ~ N(0,1)`,
/// `y ~ Bernoulli(logistic(a_h + beta_x x + u))`.
pub fn gen_population(spec: &PopulationSpec, seed: u64) -> Result<Population, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pop = Population {
        strata_labels: spec.strata.iter().map(|s| s.label.clone()).collect(),
        cluster_stratum: Vec::new(),
        cluster_units: Vec::new(),
        stratum: Vec::new(),
        cluster: Vec::new(),
        x: Vec::new(),
        z: Vec::new(),
        y: Vec::new(),
        q: Vec::new(),
    };
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    for (h, s) in spec.strata.iter().enumerate() {
        let sd_u = (s.icc / (1.0 - s.icc) * std::f64::consts::PI.powi(2) / 3.0).sqrt();
        for _ in 0..s.clusters {
            let c = pop.cluster_stratum.len();
            pop.cluster_stratum.push(h);
            let size = rng.random_range(s.cluster_size.0 as u64..=s.cluster_size.1 as u64) as usize;
            let u = sd_u * normal(&mut rng);
            let m = spec.x_cluster_sd * normal(&mut rng);
            let mut members = Vec::with_capacity(size);
            for _ in 0..size {
                let x = m + normal(&mut rng);
                let z = normal(&mut rng);
                let p = logistic(s.intercept + spec.beta_x * x + u);
                let y = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                members.push(pop.y.len());
                pop.stratum.push(h);
                pop.cluster.push(c);
                pop.x.push(x);
                pop.z.push(z);
                pop.y.push(y);
                pop.q.push((spec.selection.gamma_x * x + spec.selection.gamma_y * y).exp());
            }
            pop.cluster_units.push(members);
        }
    }
    Ok(pop)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum PsuTake {
    /// Every cluster (first stage is a census).
    All,
    /// The same number of clusters in every stratum.
    Uniform(usize),
    PerStratum(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum UnitTake {
    All,
    /// Poisson sampling with probability proportional to `q` and this
    /// expected number of units per cluster (capped at one per unit).
    Expected(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDesign {
    pub psus: PsuTake,
    pub units: UnitTake,
}

impl SampleDesign {
    /// Design used with [`PopulationSpec::reference`]: 6 clusters per
    /// stratum, about 10 units per cluster.
    pub fn reference() -> Self {
        SampleDesign {
            psus: PsuTake::Uniform(6),
            units: UnitTake::Expected(10.0),
        }
    }

    pub fn census() -> Self {
        SampleDesign {
            psus: PsuTake::All,
            units: UnitTake::All,
        }
    }
}

/// Two-stage sample: simple random sampling of clusters within strata, then
/// Poisson sampling of units within each selected cluster. Weights are
/// inverse inclusion probabilities. The frame carries `x`, `z`, `y` (as
/// outcome), the first- and second-stage probabilities and the population
/// unit index `unit`; features are `x` and `z`.
pub fn draw_sample(pop: &Population, design: &SampleDesign, seed: u64) -> Result<DesignFrame, SynthError> {
    let h_count = pop.strata_labels.len();
    let takes: Vec<Option<usize>> = match &design.psus {
        PsuTake::All => vec![None; h_count],
        PsuTake::Uniform(m) => vec![Some(*m); h_count],
        PsuTake::PerStratum(v) => {
            if v.len() != h_count {
                return Err(SynthError::StrataMismatch {
                    expected: h_count,
                    found: v.len(),
                });
            }
            v.iter().map(|&m| Some(m)).collect()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<(usize, f64, f64)> = Vec::new(); // unit, pi1, pi2
    for (h, take) in takes.iter().enumerate() {
        let mut clusters = pop.clusters_in(h);
        let available = clusters.len();
        let m = take.unwrap_or(available);
        if m > available || m == 0 {
            return Err(SynthError::InsufficientPsus {
                stratum: pop.strata_labels[h].clone(),
                requested: m,
                available,
            });
        }
        let chosen: Vec<usize> = if m == available {
            clusters
        } else {
            clusters.partial_shuffle(&mut rng, m).0.to_vec()
        };
        let mut chosen = chosen;
        chosen.sort_unstable();
        let pi1 = m as f64 / available as f64;
        for c in chosen {
            let members = &pop.cluster_units[c];
            match design.units {
                UnitTake::All => rows.extend(members.iter().map(|&i| (i, pi1, 1.0))),
                UnitTake::Expected(n) => {
                    let total_q: f64 = members.iter().map(|&i| pop.q[i]).sum();
                    for &i in members {
                        let pi2 = (n * pop.q[i] / total_q).min(1.0);
                        if rng.random::<f64>() < pi2 {
                            rows.push((i, pi1, pi2));
                        }
                    }
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(SynthError::EmptySample);
    }
    let pick = |f: &dyn Fn(usize) -> f64| rows.iter().map(|&(i, _, _)| f(i)).collect::<Vec<f64>>();
    let frame = DesignBuilder::new(
        rows.iter().map(|&(_, a, b)| 1.0 / (a * b)).collect(),
        rows.iter().map(|&(i, _, _)| pop.strata_labels[pop.stratum[i]].clone()).collect(),
        rows.iter().map(|&(i, _, _)| pop.cluster[i].to_string()).collect(),
    )
    .values("x", &pick(&|i| pop.x[i]))
    .values("z", &pick(&|i| pop.z[i]))
    .values("y", &pick(&|i| pop.y[i]))
    .values("unit", &pick(&|i| i as f64))
    .values("pi1", &rows.iter().map(|r| r.1).collect::<Vec<_>>())
    .values("pi2", &rows.iter().map(|r| r.2).collect::<Vec<_>>())
    .outcome("y")
    .features(["x", "z"])
    .build()?;
    Ok(frame)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitVar {
    X,
    Z,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CensusStatistic {
    Mean(UnitVar),
    /// Share of units with the variable equal to one.
    Proportion(UnitVar),
    /// Census AUROC of the outcome against one score per unit.
    Auroc(Vec<f64>),
}

/// Exact population value by enumeration over all units.
pub fn census_value(pop: &Population, statistic: &CensusStatistic) -> Result<f64, SynthError> {
    let var = |v: &UnitVar| match v {
        UnitVar::X => &pop.x,
        UnitVar::Z => &pop.z,
        UnitVar::Y => &pop.y,
    };
    let n = pop.size() as f64;
    match statistic {
        CensusStatistic::Mean(v) => Ok(var(v).iter().sum::<f64>() / n),
        CensusStatistic::Proportion(v) => Ok(var(v).iter().filter(|&&x| x == 1.0).count() as f64 / n),
        CensusStatistic::Auroc(scores) => {
            if scores.len() != pop.size() {
                return Err(SynthError::ScoreLength {
                    expected: pop.size(),
                    found: scores.len(),
                });
            }
            Ok(weighted_auroc(&ScoredSet::unweighted(&pop.y, scores)?)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::weighted_mean;

    fn small_spec(icc: f64) -> PopulationSpec {
        PopulationSpec {
            strata: vec![StratumSpec {
                label: "A".into(),
                clusters: 5,
                cluster_size: (2, 2),
                intercept: 0.0,
                icc,
            }],
            beta_x: 0.0,
            x_cluster_sd: 0.0,
            selection: SelectionModel::default(),
        }
    }

    #[test]
    fn deterministic_population() {
        let spec = PopulationSpec::reference();
        let a = gen_population(&spec, 3).unwrap();
        let b = gen_population(&spec, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y, gen_population(&spec, 4).unwrap().y);
        assert!(a.q.iter().all(|&q| q > 0.0 && q.is_finite()));
    }

    #[test]
    fn ten_unit_census_proportion() {
        let pop = gen_population(&small_spec(0.0), 1).unwrap();
        assert_eq!(pop.size(), 10);
        let count = pop.y.iter().filter(|&&y| y == 1.0).count();
        assert_eq!(census_value(&pop, &CensusStatistic::Proportion(UnitVar::Y)).unwrap(), count as f64 / 10.0);
    }

    #[test]
    fn census_sample_has_unit_weights_and_matches() {
        let pop = gen_population(&PopulationSpec::reference(), 2).unwrap();
        let f = draw_sample(&pop, &SampleDesign::census(), 0).unwrap();
        assert_eq!(f.len(), pop.size());
        assert!(f.weights().iter().all(|&w| w == 1.0));
        let est = weighted_mean(&f, "x").unwrap().point;
        let truth = census_value(&pop, &CensusStatistic::Mean(UnitVar::X)).unwrap();
        assert!((est - truth).abs() < 1e-9);
    }

    #[test]
    fn sample_is_deterministic_and_sized() {
        let pop = gen_population(&PopulationSpec::reference(), 2).unwrap();
        let a = draw_sample(&pop, &SampleDesign::reference(), 5).unwrap();
        let b = draw_sample(&pop, &SampleDesign::reference(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.strata_count(), 10);
        assert_eq!(a.psu_count(), 60);
        assert!(a.len() > 400 && a.len() < 800, "{}", a.len());
    }

    #[test]
    fn insufficient_psus() {
        let pop = gen_population(&small_spec(0.1), 1).unwrap();
        let d = SampleDesign {
            psus: PsuTake::Uniform(6),
            units: UnitTake::All,
        };
        assert!(matches!(draw_sample(&pop, &d, 0), Err(SynthError::InsufficientPsus { .. })));
    }

    #[test]
    fn invalid_specs() {
        let mut s = small_spec(0.0);
        s.strata[0].cluster_size = (3, 2);
        assert!(gen_population(&s, 0).is_err());
        let mut s = small_spec(1.0);
        s.strata[0].clusters = 1;
        assert!(gen_population(&s, 0).is_err());
    }

    #[test]
    fn census_auroc_matches_pairwise() {
        let mut spec = small_spec(0.0);
        spec.strata[0].clusters = 20;
        spec.beta_x = 1.0;
        let pop = gen_population(&spec, 8).unwrap();
        let mut c = 0.0;
        let mut pairs = 0.0;
        for i in 0..pop.size() {
            for j in 0..pop.size() {
                if pop.y[i] == 1.0 && pop.y[j] == 0.0 {
                    pairs += 1.0;
                    c += if pop.x[i] > pop.x[j] { 1.0 } else if pop.x[i] == pop.x[j] { 0.5 } else { 0.0 };
                }
            }
        }
        let v = census_value(&pop, &CensusStatistic::Auroc(pop.x.clone())).unwrap();
        assert!((v - c / pairs).abs() < 1e-12);
    }
}
