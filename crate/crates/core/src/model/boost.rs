//! Gradient-boosted regression trees on the logistic loss with optional
//! sample weights (second-order leaf values, exact greedy splits).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, Predictor, TrainingData};
use crate::design::DesignFrame;
use crate::stats::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub max_depth: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian mass in a child.
    pub min_child_weight: f64,
    /// Fraction of rows drawn (without replacement) for each tree.
    pub subsample: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            max_depth: 3,
            learning_rate: 0.1,
            rounds: 100,
            lambda: 1.0,
            min_child_weight: 1.0,
            subsample: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TreeNode {
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            match self.nodes[k] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], k: usize) -> usize {
            match nodes[k] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            TreeNode::Leaf { value } => Some(*value),
            TreeNode::Split { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub rounds: usize,
    /// Initial log-odds.
    pub base_score: f64,
    pub params: BoostParams,
    pub feature_names: Vec<String>,
    pub outcome: String,
    pub weighted: bool,
    pub seed: u64,
}

impl BoostModel {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

impl Predictor for BoostModel {
    fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn predict_one(&self, x: &[f64]) -> f64 {
        logistic(self.margin(x))
    }
}

/// Fits on the frame's domain rows with complete data. With `weighted =
/// false` every row has weight one; otherwise design weights are rescaled to
/// mean one so that the hyperparameters keep their unweighted meaning.
pub fn fit_weighted_boost(
    frame: &DesignFrame,
    features: &[String],
    outcome: &str,
    params: BoostParams,
    weighted: bool,
    seed: u64,
) -> Result<BoostModel, ModelError> {
    fit_weighted_boost_rows(frame, features, outcome, None, params, weighted, seed)
}

pub fn fit_weighted_boost_rows(
    frame: &DesignFrame,
    features: &[String],
    outcome: &str,
    rows: Option<&[usize]>,
    params: BoostParams,
    weighted: bool,
    seed: u64,
) -> Result<BoostModel, ModelError> {
    let data = TrainingData::from_frame(frame, features, outcome, rows)?;
    let w = if weighted { data.normalized_weights() } else { vec![1.0; data.len()] };
    Ok(fit_boost(&data.x, &data.y, &w, params, seed, BoostModel {
        trees: Vec::new(),
        learning_rate: params.learning_rate,
        rounds: params.rounds,
        base_score: 0.0,
        params,
        feature_names: data.feature_names.clone(),
        outcome: data.outcome.clone(),
        weighted,
        seed,
    }))
}

fn fit_boost(x: &[Vec<f64>], y: &[f64], w: &[f64], params: BoostParams, seed: u64, mut model: BoostModel) -> BoostModel {
    let n = y.len();
    let p = x.first().map_or(0, Vec::len);
    let pos: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let total: f64 = w.iter().sum();
    let prior = (pos / total).clamp(1e-6, 1.0 - 1e-6);
    model.base_score = (prior / (1.0 - prior)).ln();

    // Rows sorted by each feature once; nodes filter these orders.
    let orders: Vec<Vec<usize>> = (0..p)
        .map(|j| {
            let mut o: Vec<usize> = (0..n).collect();
            o.sort_by(|&a, &b| x[a][j].total_cmp(&x[b][j]));
            o
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margin = vec![model.base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _ in 0..params.rounds {
        for i in 0..n {
            let prob = logistic(margin[i]);
            grad[i] = w[i] * (prob - y[i]);
            hess[i] = w[i] * prob * (1.0 - prob);
        }
        let in_sample: Vec<bool> = if params.subsample < 1.0 {
            (0..n).map(|_| rng.random::<f64>() < params.subsample).collect()
        } else {
            vec![true; n]
        };
        let mut builder = TreeBuilder {
            x,
            grad: &grad,
            hess: &hess,
            params,
            nodes: Vec::new(),
        };
        let root_orders: Vec<Vec<usize>> = orders
            .iter()
            .map(|o| o.iter().copied().filter(|&i| in_sample[i]).collect())
            .collect();
        let root_rows: Vec<usize> = (0..n).filter(|&i| in_sample[i]).collect();
        builder.grow(&root_rows, root_orders, 0);
        let tree = Tree { nodes: builder.nodes };
        for i in 0..n {
            margin[i] += params.learning_rate * tree.predict(&x[i]);
        }
        model.trees.push(tree);
    }
    model
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: BoostParams,
    nodes: Vec<TreeNode>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl TreeBuilder<'_> {
    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.lambda)
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    /// Appends the subtree for `rows` and returns its node index.
    fn grow(&mut self, rows: &[usize], orders: Vec<Vec<usize>>, depth: usize) -> usize {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        let index = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: if rows.is_empty() { 0.0 } else { self.leaf_value(g, h) },
        });
        if depth >= self.params.max_depth || rows.len() < 2 {
            return index;
        }
        let Some(split) = self.best_split(&orders, g, h) else {
            return index;
        };
        let goes_left = |i: usize| self.x[i][split.feature] < split.threshold;
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| goes_left(i));
        let mut left_orders = Vec::with_capacity(orders.len());
        let mut right_orders = Vec::with_capacity(orders.len());
        for o in orders {
            let (l, r): (Vec<usize>, Vec<usize>) = o.into_iter().partition(|&i| goes_left(i));
            left_orders.push(l);
            right_orders.push(r);
        }
        let left = self.grow(&left_rows, left_orders, depth + 1);
        let right = self.grow(&right_rows, right_orders, depth + 1);
        self.nodes[index] = TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        index
    }

    fn best_split(&self, orders: &[Vec<usize>], g: f64, h: f64) -> Option<Split> {
        let parent = self.score(g, h);
        let mut best: Option<Split> = None;
        for (feature, order) in orders.iter().enumerate() {
            let mut gl = 0.0;
            let mut hl = 0.0;
            for k in 0..order.len().saturating_sub(1) {
                let i = order[k];
                gl += self.grad[i];
                hl += self.hess[i];
                let here = self.x[i][feature];
                let next = self.x[order[k + 1]][feature];
                if here == next {
                    continue;
                }
                let hr = h - hl;
                if hl < self.params.min_child_weight || hr < self.params.min_child_weight {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(g - gl, hr) - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = here + (next - here) / 2.0;
                    best = Some(Split {
                        feature,
                        threshold: if mid > here { mid } else { next },
                        gain,
                    });
                }
            }
        }
        best
    }
}
