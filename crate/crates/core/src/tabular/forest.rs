//! Bootstrap random forest with soft voting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, TrainingSet, TreeNode, TreeParams};
use crate::config::ForestParams;
use crate::domain::RiskLabel;
use crate::error::{Error, Result};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format_version: u32,
    pub params: ForestParams,
    pub trees: Vec<TreeNode>,
    pub n_features: usize,
    pub feature_subsample_count: usize,
    /// `N / (2 N_c)` from the training labels, or `[1, 1]` when unweighted.
    pub class_weights: [f64; 2],
    pub seed: u64,
}

/// `N / (2 N_c)` per class.
pub fn inverse_frequency_weights(y: &[RiskLabel]) -> Result<[f64; 2]> {
    let mut counts = [0usize; 2];
    for l in y {
        counts[l.index()] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::SingleClass);
    }
    let n = y.len() as f64;
    Ok(counts.map(|c| n / (2.0 * c as f64)))
}

/// Deterministic per-tree generator: `seed XOR tree_index`.
fn tree_rng(seed: u64, tree_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ tree_index as u64)
}

pub fn fit_forest(x: &[Vec<f64>], y: &[RiskLabel], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    fit_forest_inner(x, y, params, seed).map(|(m, _)| m)
}

/// Fits the forest and also returns each training row's out-of-bag
/// probability: the mean over trees whose bootstrap sample missed the row.
/// Rows drawn by every tree fall back to the full-forest prediction.
pub fn fit_forest_oob(
    x: &[Vec<f64>],
    y: &[RiskLabel],
    params: &ForestParams,
    seed: u64,
) -> Result<(ForestModel, Vec<[f64; 2]>)> {
    let (model, in_bag) = fit_forest_inner(x, y, params, seed)?;
    let oob = x
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut acc = [0.0; 2];
            let mut count = 0usize;
            for (tree, bag) in model.trees.iter().zip(&in_bag) {
                if !bag[i] {
                    let p = tree.predict_proba(row);
                    acc[0] += p[0];
                    acc[1] += p[1];
                    count += 1;
                }
            }
            if count == 0 {
                model.predict_proba(row)
            } else {
                [acc[0] / count as f64, acc[1] / count as f64]
            }
        })
        .collect();
    Ok((model, oob))
}

fn fit_forest_inner(
    x: &[Vec<f64>],
    y: &[RiskLabel],
    params: &ForestParams,
    seed: u64,
) -> Result<(ForestModel, Vec<Vec<bool>>)> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(y.len(), x.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidParam("forest needs at least 2 rows".into()));
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidParam("n_trees must be positive".into()));
    }
    let class_weights = if params.class_weighted {
        inverse_frequency_weights(y)?
    } else {
        inverse_frequency_weights(y)?;
        [1.0, 1.0]
    };
    let n = x.len();
    let n_features = x[0].len();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        features_per_node: params.features_per_node(n_features),
    };

    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(seed, t);
            let mut multiplicity = vec![0u32; n];
            if params.bootstrap {
                for _ in 0..n {
                    multiplicity[rng.random_range(0..n)] += 1;
                }
            } else {
                multiplicity.fill(1);
            }
            let rows: Vec<usize> = (0..n).filter(|&i| multiplicity[i] > 0).collect();
            let weights: Vec<f64> = (0..n)
                .map(|i| multiplicity[i] as f64 * class_weights[y[i].index()])
                .collect();
            let data = TrainingSet {
                x,
                y,
                weights: &weights,
            };
            let tree = fit_tree(&data, &rows, &tree_params, &mut rng);
            (tree, multiplicity.iter().map(|&m| m > 0).collect::<Vec<bool>>())
        })
        .collect::<Vec<_>>();
    let (trees, in_bag): (Vec<TreeNode>, Vec<Vec<bool>>) = trees.into_iter().unzip();

    let model = ForestModel {
        format_version: FOREST_FORMAT_VERSION,
        params: params.clone(),
        trees,
        n_features,
        feature_subsample_count: tree_params.features_per_node,
        class_weights,
        seed,
    };
    Ok((model, in_bag))
}

impl ForestModel {
    /// Unweighted mean of the trees' leaf distributions.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; 2] {
        let mut acc = [0.0; 2];
        for t in &self.trees {
            let p = t.predict_proba(x);
            acc[0] += p[0];
            acc[1] += p[1];
        }
        let n = self.trees.len() as f64;
        [acc[0] / n, acc[1] / n]
    }

    pub fn predict(&self, x: &[f64]) -> RiskLabel {
        RiskLabel::from_p_high(self.predict_proba(x)[1])
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ForestModel = serde_json::from_str(s)?;
        if m.format_version != FOREST_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                kind: "forest",
                found: m.format_version,
                expected: FOREST_FORMAT_VERSION,
            });
        }
        Ok(m)
    }
}

/// Single-tree baseline: no bootstrap, every feature considered at each node.
pub fn fit_decision_tree(x: &[Vec<f64>], y: &[RiskLabel], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let p = ForestParams {
        n_trees: 1,
        bootstrap: false,
        max_features: x.first().map(Vec::len),
        ..params.clone()
    };
    fit_forest(x, y, &p, seed)
}
