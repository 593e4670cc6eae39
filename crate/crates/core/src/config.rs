//! Run configuration. Every default is the full-scale training recipe;
//! desk-scale runs override them explicitly.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features drawn per node; `None` means `ceil(sqrt(n_features))`.
    pub max_features: Option<usize>,
    /// Bootstrap each tree; disabled only in test mode.
    pub bootstrap: bool,
    /// Inverse-frequency class weights.
    pub class_weighted: bool,
    /// Append TF-IDF narrative features to the forest input.
    pub use_tfidf: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            max_features: None,
            bootstrap: true,
            class_weighted: true,
            use_tfidf: false,
        }
    }
}

impl ForestParams {
    pub fn features_per_node(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextParams {
    /// TF-IDF vocabulary cap.
    pub tfidf_max_terms: usize,
    /// TF-IDF minimum document frequency.
    pub tfidf_min_df: usize,
    /// Encoder sequence cap, CLS included.
    pub max_tokens: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_mult: usize,
    /// Cap on the encoder's token vocabulary (most frequent first).
    pub encoder_vocab_max: usize,
}

impl Default for TextParams {
    fn default() -> Self {
        TextParams {
            tfidf_max_terms: 1000,
            tfidf_min_df: 5,
            max_tokens: 128,
            epochs: 150,
            lr: 3e-5,
            weight_decay: 0.01,
            batch_size: 32,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            ff_mult: 4,
            encoder_vocab_max: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionParams {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Train the meta-classifier on out-of-bag forest probabilities rather
    /// than in-sample ones.
    pub rf_out_of_bag: bool,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            hidden: 16,
            epochs: 150,
            lr: 1e-2,
            weight_decay: 0.01,
            rf_out_of_bag: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogisticParams {
    pub l2: f64,
    pub lr: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            l2: 1e-4,
            lr: 0.5,
            max_iter: 10_000,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalParams {
    pub folds: usize,
    pub train_fraction: f64,
    /// Finite-difference step for sensitivity, in standardized units.
    pub sensitivity_step: f64,
    pub logistic: LogisticParams,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams {
            folds: 5,
            train_fraction: 0.8,
            sensitivity_step: 1e-3,
            logistic: LogisticParams::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub rf: ForestParams,
    pub text: TextParams,
    pub fusion: FusionParams,
    pub eval: EvalParams,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_training_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.rf.n_trees, 100);
        assert_eq!(c.rf.max_depth, 12);
        assert_eq!(c.rf.features_per_node(6), 3);
        assert!(c.rf.class_weighted);
        assert!(!c.rf.use_tfidf);
        assert_eq!(c.text.tfidf_max_terms, 1000);
        assert_eq!(c.text.tfidf_min_df, 5);
        assert_eq!(c.text.max_tokens, 128);
        assert_eq!(c.text.epochs, 150);
        assert_eq!(c.text.lr, 3e-5);
        assert_eq!(c.text.weight_decay, 0.01);
        assert_eq!(c.fusion.epochs, 150);
        assert_eq!(c.fusion.hidden, 16);
        assert_eq!(c.eval.folds, 5);
        assert_eq!(c.eval.train_fraction, 0.8);
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(RunConfig::default()).unwrap();
        v["rf"]["n_tres"] = 3.into();
        assert!(serde_json::from_value::<RunConfig>(v).is_err());
    }
}
