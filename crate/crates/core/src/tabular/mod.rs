//! Numerical stream and tabular baselines.

pub mod forest;
pub mod logistic;
pub mod tree;

pub use forest::{fit_decision_tree, fit_forest, fit_forest_oob, inverse_frequency_weights, ForestModel};
pub use logistic::{fit_logistic, LogisticModel};
pub use tree::{best_split, fit_tree, gini, Split, TrainingSet, TreeNode, TreeParams};
