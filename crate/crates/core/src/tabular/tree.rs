//! Weighted CART classification tree with Gini impurity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::RiskLabel;
use crate::error::{Error, Result};

/// `G = 1 - p0^2 - p1^2` over weighted class totals.
pub fn gini(totals: [f64; 2]) -> Result<f64> {
    let sum = totals[0] + totals[1];
    if !(sum > 0.0) || totals[0] < 0.0 || totals[1] < 0.0 {
        return Err(Error::EmptyNode);
    }
    let p0 = totals[0] / sum;
    let p1 = totals[1] / sum;
    Ok(1.0 - p0 * p0 - p1 * p1)
}

fn gini_unchecked(totals: [f64; 2]) -> f64 {
    let sum = totals[0] + totals[1];
    if sum <= 0.0 {
        return 0.0;
    }
    let p0 = totals[0] / sum;
    let p1 = totals[1] / sum;
    1.0 - p0 * p0 - p1 * p1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        probs: [f64; 2],
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    /// Class probabilities of the leaf `x` falls into. `x[f] <= threshold` goes left.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; 2] {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { probs } => return *probs,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    /// Longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> Vec<[f64; 2]> {
        match self {
            TreeNode::Leaf { probs } => vec![*probs],
            TreeNode::Split { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        match self {
            TreeNode::Leaf { .. } => false,
            TreeNode::Split {
                feature, left, right, ..
            } => *feature == f || left.uses_feature(f) || right.uses_feature(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

/// Training view: feature rows, labels and per-row sample weights.
#[derive(Clone, Copy, Debug)]
pub struct TrainingSet<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [RiskLabel],
    pub weights: &'a [f64],
}

impl TrainingSet<'_> {
    fn totals(&self, rows: &[usize]) -> [f64; 2] {
        let mut t = [0.0; 2];
        for &r in rows {
            t[self.y[r].index()] += self.weights[r];
        }
        t
    }
}

/// Exhaustive midpoint search over `features`, minimizing the weighted mean
/// child Gini. Ties go to the lower feature index, then the lower threshold.
pub fn best_split(data: &TrainingSet<'_>, rows: &[usize], features: &[usize]) -> Option<Split> {
    if rows.len() < 2 {
        return None;
    }
    let parent = data.totals(rows);
    let total = parent[0] + parent[1];
    let parent_gini = gini_unchecked(parent);
    if parent_gini <= 0.0 {
        return None;
    }

    let mut features = features.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = rows.to_vec();
    for &f in &features {
        order.sort_by(|&a, &b| data.x[a][f].total_cmp(&data.x[b][f]));
        let mut left = [0.0; 2];
        for i in 0..order.len() - 1 {
            let r = order[i];
            left[data.y[r].index()] += data.weights[r];
            let (lo, hi) = (data.x[r][f], data.x[order[i + 1]][f]);
            if lo == hi {
                continue;
            }
            let right = [parent[0] - left[0], parent[1] - left[1]];
            let wl = left[0] + left[1];
            let wr = total - wl;
            let child = (wl * gini_unchecked(left) + wr * gini_unchecked(right)) / total;
            if best.is_none_or(|(b, _, _)| child < b) {
                let mut threshold = 0.5 * (lo + hi);
                if threshold >= hi {
                    threshold = lo;
                }
                best = Some((child, f, threshold));
            }
        }
    }
    let (child, feature, threshold) = best?;
    let impurity_decrease = parent_gini - child;
    (impurity_decrease > 1e-12).then_some(Split {
        feature,
        threshold,
        impurity_decrease,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Features drawn per node, without replacement. Equal to the feature
    /// count disables subsampling (and consumes no randomness).
    pub features_per_node: usize,
}

pub fn fit_tree<R: Rng + ?Sized>(data: &TrainingSet<'_>, rows: &[usize], params: &TreeParams, rng: &mut R) -> TreeNode {
    grow(data, rows, params, 0, rng)
}

fn grow<R: Rng + ?Sized>(
    data: &TrainingSet<'_>,
    rows: &[usize],
    params: &TreeParams,
    depth: usize,
    rng: &mut R,
) -> TreeNode {
    let totals = data.totals(rows);
    let leaf = || {
        let sum = totals[0] + totals[1];
        let probs = if sum > 0.0 {
            [totals[0] / sum, totals[1] / sum]
        } else {
            [0.5, 0.5]
        };
        TreeNode::Leaf { probs }
    };
    if depth >= params.max_depth || rows.len() < 2 || totals[0] <= 0.0 || totals[1] <= 0.0 {
        return leaf();
    }

    let n_features = data.x[rows[0]].len();
    let k = params.features_per_node.clamp(1, n_features);
    let features: Vec<usize> = if k >= n_features {
        (0..n_features).collect()
    } else {
        rand::seq::index::sample(rng, n_features, k).into_vec()
    };

    let Some(split) = best_split(data, rows, &features) else {
        return leaf();
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| data.x[i][split.feature] <= split.threshold);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(data, &l, params, depth + 1, rng)),
        right: Box::new(grow(data, &r, params, depth + 1, rng)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use RiskLabel::{HighRisk as H, LowRisk as L};

    #[test]
    fn gini_values() {
        assert_abs_diff_eq!(gini([5.0, 5.0]).unwrap(), 0.5);
        assert_abs_diff_eq!(gini([7.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(gini([3.0, 1.0]).unwrap(), 0.375);
        assert!(gini([0.0, 0.0]).is_err());
    }

    fn brute_force_1d(x: &[f64], y: &[RiskLabel]) -> (f64, f64) {
        // every midpoint, child impurity by direct counting
        let mut xs = x.to_vec();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        let mut best = (f64::INFINITY, f64::NAN);
        for w in xs.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let side = |left: bool| {
                let mut c = [0.0; 2];
                for (xi, yi) in x.iter().zip(y) {
                    if (*xi <= t) == left {
                        c[yi.index()] += 1.0;
                    }
                }
                c
            };
            let (a, b) = (side(true), side(false));
            let n = x.len() as f64;
            let g = ((a[0] + a[1]) * gini(a).unwrap() + (b[0] + b[1]) * gini(b).unwrap()) / n;
            if g < best.0 {
                best = (g, t);
            }
        }
        best
    }

    #[test]
    fn separable_split_matches_brute_force() {
        let xs = [1.0, 2.0, 10.0, 11.0];
        let y = [L, L, H, H];
        let (g, t) = brute_force_1d(&xs, &y);
        assert_eq!((g, t), (0.0, 6.0));

        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let w = [1.0; 4];
        let data = TrainingSet {
            x: &x,
            y: &y,
            weights: &w,
        };
        let s = best_split(&data, &[0, 1, 2, 3], &[0]).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!(s.threshold, t);
        assert_abs_diff_eq!(s.impurity_decrease, 0.5);

        let params = TreeParams {
            max_depth: 1,
            features_per_node: 1,
        };
        let tree = fit_tree(&data, &[0, 1, 2, 3], &params, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(tree.depth(), 1);
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(RiskLabel::from_p_high(tree.predict_proba(xi)[1]), *yi);
        }
    }

    #[test]
    fn no_split_cases() {
        let x = vec![vec![3.0, 1.0]; 4];
        let w = [1.0; 4];
        let data = TrainingSet {
            x: &x,
            y: &[L, H, L, H],
            weights: &w,
        };
        assert!(best_split(&data, &[0, 1, 2, 3], &[0, 1]).is_none());

        let x: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let data = TrainingSet {
            x: &x,
            y: &[H; 4],
            weights: &w,
        };
        assert!(best_split(&data, &[0, 1, 2, 3], &[0]).is_none());
        let tree = fit_tree(
            &data,
            &[0, 1, 2, 3],
            &TreeParams {
                max_depth: 5,
                features_per_node: 1,
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(tree, TreeNode::Leaf { probs: [0.0, 1.0] });
    }

    #[test]
    fn ties_prefer_lower_feature_then_threshold() {
        // both features separate perfectly
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let y = [L, H, H, L];
        let w = [1.0; 4];
        let data = TrainingSet {
            x: &x,
            y: &y,
            weights: &w,
        };
        let s = best_split(&data, &[0, 1, 2, 3], &[1, 0]).unwrap();
        assert_eq!(s.feature, 0);
        // thresholds 0.5 and 2.5 give mirror-image children
        assert_eq!(s.threshold, 0.5);
    }

    #[test]
    fn weighted_leaf_frequencies() {
        let x = vec![vec![0.0]; 4];
        let y = [L, L, L, H];
        let w = [4.0 / 6.0, 4.0 / 6.0, 4.0 / 6.0, 2.0];
        let data = TrainingSet {
            x: &x,
            y: &y,
            weights: &w,
        };
        let tree = fit_tree(
            &data,
            &[0, 1, 2, 3],
            &TreeParams {
                max_depth: 0,
                features_per_node: 1,
            },
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let p = tree.predict_proba(&[0.0]);
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn depth_is_capped() {
        let x: Vec<Vec<f64>> = (0..64).map(|i| vec![i as f64, (i * 7 % 13) as f64]).collect();
        let y: Vec<RiskLabel> = (0..64).map(|i| if (i / 3) % 2 == 0 { L } else { H }).collect();
        let w = vec![1.0; 64];
        let data = TrainingSet {
            x: &x,
            y: &y,
            weights: &w,
        };
        let rows: Vec<usize> = (0..64).collect();
        for max_depth in 0..5 {
            let t = fit_tree(
                &data,
                &rows,
                &TreeParams {
                    max_depth,
                    features_per_node: 2,
                },
                &mut ChaCha8Rng::seed_from_u64(1),
            );
            assert!(t.depth() <= max_depth);
            for p in t.leaves() {
                assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
            }
        }
    }
}
