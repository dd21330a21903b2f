//! Weighted trainers and design-based inference for fitted models.

mod boost;
mod logit;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{DesignError, DesignFrame};
use crate::estimate::EstimateError;

pub use boost::{fit_weighted_boost, fit_weighted_boost_rows, BoostModel, BoostParams, Tree, TreeNode};
pub use logit::{
    design_aic_bic, fit_weighted_logit, fit_weighted_logit_rows, logit_loglik, logit_score, sandwich_variance,
    wald_test, InfoCriteria, LogitModel, LogitOptions, WaldResult,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("outcome '{variable}' holds {value}, expected 0 or 1")]
    NotBinary { variable: String, value: f64 },
    #[error("no complete training rows")]
    EmptyTraining,
    #[error("outcome has a single class in the training rows")]
    SingleClass,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("complete or quasi-complete separation detected (|linear predictor| > {0})")]
    Separation(f64),
    #[error("{0} matrix is singular")]
    Singular(&'static str),
    #[error("expected {expected} features, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("constraint matrix has no rows")]
    EmptyConstraint,
    #[error("constraint matrix has {found} columns, model has {expected} coefficients")]
    ConstraintShape { expected: usize, found: usize },
    #[error("unsupported model schema version {0}")]
    UnsupportedSchema(u32),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
}

/// Anything that maps a feature vector to a probability.
pub trait Predictor: Send + Sync {
    fn feature_names(&self) -> &[String];

    /// Score for one row; `x` must have one entry per feature.
    fn predict_one(&self, x: &[f64]) -> f64;

    fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        let p = self.feature_names().len();
        rows.iter()
            .map(|x| {
                if x.len() != p {
                    return Err(ModelError::Arity {
                        expected: p,
                        found: x.len(),
                    });
                }
                Ok(self.predict_one(x))
            })
            .collect()
    }

    /// Scores every frame row; rows with a missing feature get NaN.
    fn predict_frame(&self, frame: &DesignFrame) -> Result<Vec<f64>, ModelError> {
        let columns = self
            .feature_names()
            .iter()
            .map(|n| frame.variable(n))
            .collect::<Result<Vec<_>, _>>()?;
        let mut x = vec![0.0; columns.len()];
        Ok((0..frame.len())
            .map(|i| {
                for (slot, col) in x.iter_mut().zip(&columns) {
                    match col[i] {
                        Some(v) => *slot = v,
                        None => return f64::NAN,
                    }
                }
                self.predict_one(&x)
            })
            .collect())
    }
}

/// Complete-case training rows drawn from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    /// Feature rows, no intercept column.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    /// Frame row index of each training row.
    pub rows: Vec<usize>,
    pub feature_names: Vec<String>,
    pub outcome: String,
}

impl TrainingData {
    /// Rows in the domain (and in `rows`, when given) with a 0/1 outcome and
    /// all features observed.
    pub fn from_frame(
        frame: &DesignFrame,
        features: &[String],
        outcome: &str,
        rows: Option<&[usize]>,
    ) -> Result<Self, ModelError> {
        let y_col = frame.variable(outcome)?;
        let x_cols = features
            .iter()
            .map(|n| frame.variable(n))
            .collect::<Result<Vec<_>, _>>()?;
        let all: Vec<usize>;
        let candidates = match rows {
            Some(r) => r,
            None => {
                all = (0..frame.len()).collect();
                &all
            }
        };
        let mut data = TrainingData {
            x: Vec::new(),
            y: Vec::new(),
            w: Vec::new(),
            rows: Vec::new(),
            feature_names: features.to_vec(),
            outcome: outcome.to_string(),
        };
        'rows: for &i in candidates {
            if !frame.domain_mask()[i] {
                continue;
            }
            let Some(y) = y_col[i] else { continue };
            if y != 0.0 && y != 1.0 {
                return Err(ModelError::NotBinary {
                    variable: outcome.to_string(),
                    value: y,
                });
            }
            let mut x = Vec::with_capacity(x_cols.len());
            for col in &x_cols {
                match col[i] {
                    Some(v) => x.push(v),
                    None => continue 'rows,
                }
            }
            data.x.push(x);
            data.y.push(y);
            data.w.push(frame.weights()[i]);
            data.rows.push(i);
        }
        if data.rows.is_empty() {
            return Err(ModelError::EmptyTraining);
        }
        Ok(data)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Weights rescaled to mean one (exactly one when all are equal).
    pub fn normalized_weights(&self) -> Vec<f64> {
        if self.w.iter().all(|&w| w == self.w[0]) {
            return vec![1.0; self.w.len()];
        }
        let mean = self.w.iter().sum::<f64>() / self.w.len() as f64;
        self.w.iter().map(|w| w / mean).collect()
    }
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Versioned, serializable fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum SavedModel {
    Logit(LogitModel),
    Boost(BoostModel),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    schema_version: u32,
    #[serde(flatten)]
    model: SavedModel,
}

impl SavedModel {
    pub fn to_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string_pretty(&Envelope {
            schema_version: MODEL_SCHEMA_VERSION,
            model: self.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let env: Envelope = serde_json::from_str(text)?;
        if env.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ModelError::UnsupportedSchema(env.schema_version));
        }
        Ok(env.model)
    }
}

impl Predictor for SavedModel {
    fn feature_names(&self) -> &[String] {
        match self {
            SavedModel::Logit(m) => m.feature_names(),
            SavedModel::Boost(m) => m.feature_names(),
        }
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        match self {
            SavedModel::Logit(m) => m.predict_one(x),
            SavedModel::Boost(m) => m.predict_one(x),
        }
    }
}

/// Scores every row with a constant; a reference model for AUROC 0.5.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantModel {
    pub value: f64,
    pub feature_names: Vec<String>,
}

impl Predictor for ConstantModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_one(&self, _x: &[f64]) -> f64 {
        self.value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignBuilder;

    #[test]
    fn training_rows_are_complete_cases() {
        let f = DesignBuilder::new(vec![1.0, 2.0, 3.0, 4.0], vec!["1".into(); 4], vec!["1".into(), "1".into(), "2".into(), "2".into()])
            .variable("y", vec![Some(1.0), None, Some(0.0), Some(1.0)])
            .variable("x", vec![Some(0.5), Some(1.0), None, Some(2.0)])
            .build()
            .unwrap();
        let d = TrainingData::from_frame(&f, &["x".to_string()], "y", None).unwrap();
        assert_eq!(d.rows, vec![0, 3]);
        assert_eq!(d.w, vec![1.0, 4.0]);
        let sub = TrainingData::from_frame(&f, &["x".to_string()], "y", Some(&[3])).unwrap();
        assert_eq!(sub.rows, vec![3]);
    }

    #[test]
    fn non_binary_outcome_rejected() {
        let f = DesignBuilder::new(vec![1.0; 2], vec!["1".into(); 2], vec!["1".into(), "2".into()])
            .values("y", &[0.0, 2.0])
            .values("x", &[0.0, 1.0])
            .build()
            .unwrap();
        assert!(matches!(
            TrainingData::from_frame(&f, &["x".to_string()], "y", None),
            Err(ModelError::NotBinary { .. })
        ));
    }

    #[test]
    fn constant_model_predicts_constant() {
        let m = ConstantModel {
            value: 0.3,
            feature_names: vec!["a".into()],
        };
        assert_eq!(m.predict(&[vec![1.0], vec![5.0]]).unwrap(), vec![0.3, 0.3]);
        assert!(matches!(m.predict(&[vec![]]), Err(ModelError::Arity { .. })));
    }
}
