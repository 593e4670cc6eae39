//! Metrics, cross-validation, the baseline comparison and curve output.

pub mod curves;
pub mod metrics;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use curves::{curves_csv, emit_curves, CurveFiles};
pub use metrics::{confusion, evaluate_scores, metrics, roc_auc, roc_auc_trapezoid, ConfusionMatrix, EvalReport};

use crate::config::RunConfig;
use crate::domain::{Dataset, Observation, RiskLabel};
use crate::error::{Error, Result};
use crate::fusion::{fit_pipeline, Pipeline, Streams};
use crate::ingest::{fit_standardizer, stratified_kfold, ImputeStats, SplitSpec, StandardizationStats};
use crate::tabular::{fit_decision_tree, fit_logistic, ForestModel, LogisticModel};
use crate::text::softmax2;

/// A model fitted on some rows, able to score any observation.
pub trait FittedModel: Send + Sync {
    fn p_high(&self, obs: &Observation) -> Result<f64>;
    fn standardizer(&self) -> &StandardizationStats;
}

impl FittedModel for Pipeline {
    fn p_high(&self, obs: &Observation) -> Result<f64> {
        Ok(self.predict(obs)?.p_high)
    }

    fn standardizer(&self) -> &StandardizationStats {
        self.standardizer.as_ref().expect("fitted pipeline has a standardizer")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NumericModel {
    Logistic(LogisticModel),
    Tree(ForestModel),
}

/// Numeric-only baseline with its own imputation and standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericBaseline {
    pub impute: ImputeStats,
    pub standardizer: StandardizationStats,
    pub model: NumericModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumericKind {
    Logistic,
    DecisionTree,
}

pub fn fit_numeric_baseline(
    ds: &Dataset,
    rows: &[usize],
    kind: NumericKind,
    config: &RunConfig,
) -> Result<NumericBaseline> {
    let impute = ImputeStats::fit(ds, rows)?;
    let filled = impute.apply(ds);
    let standardizer = fit_standardizer(&filled, rows)?;
    let x: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| standardizer.transform(&filled.observations[r].values).to_vec())
        .collect();
    let y: Vec<RiskLabel> = rows
        .iter()
        .map(|&r| ds.observations[r].label.ok_or(Error::Unlabeled { index: r }))
        .collect::<Result<_>>()?;
    let model = match kind {
        NumericKind::Logistic => NumericModel::Logistic(fit_logistic(&x, &y, &config.eval.logistic)?),
        NumericKind::DecisionTree => NumericModel::Tree(fit_decision_tree(&x, &y, &config.rf, config.seed)?),
    };
    Ok(NumericBaseline {
        impute,
        standardizer,
        model,
    })
}

impl FittedModel for NumericBaseline {
    fn p_high(&self, obs: &Observation) -> Result<f64> {
        let x = self.standardizer.transform(&self.impute.fill(obs).values);
        Ok(match &self.model {
            NumericModel::Logistic(m) => m.predict_proba(&x)[1],
            NumericModel::Tree(m) => m.predict_proba(&x)[1],
        })
    }

    fn standardizer(&self) -> &StandardizationStats {
        &self.standardizer
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub report: EvalReport,
    pub standardizer_digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation over the folds where the metric is defined.
    pub std: f64,
    pub defined_folds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub folds: Vec<FoldResult>,
    pub aggregate: BTreeMap<String, Aggregate>,
}

fn aggregate(folds: &[FoldResult]) -> BTreeMap<String, Aggregate> {
    let mut out = BTreeMap::new();
    let names = folds.first().map(|f| f.report.named_metrics().map(|(n, _)| n));
    for (i, name) in names.into_iter().flatten().enumerate() {
        let vals: Vec<f64> = folds.iter().filter_map(|f| f.report.named_metrics()[i].1).collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        out.insert(
            name.to_string(),
            Aggregate {
                mean,
                std: var.sqrt(),
                defined_folds: vals.len(),
            },
        );
    }
    out
}

/// Scores every row in `rows` with `model` and builds the report.
pub fn evaluate_model<M: FittedModel + ?Sized>(model: &M, ds: &Dataset, rows: &[usize]) -> Result<EvalReport> {
    let labels: Vec<RiskLabel> = rows
        .iter()
        .map(|&r| ds.observations[r].label.ok_or(Error::Unlabeled { index: r }))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = rows
        .par_iter()
        .map(|&r| model.p_high(&ds.observations[r]))
        .collect::<Result<_>>()?;
    evaluate_scores(&labels, &scores)
}

/// Stratified k-fold: `factory` fits on the k-1 training folds only, the
/// held-out fold is scored. Folds run in parallel and are reported in fold
/// order.
pub fn cross_validate<M, F>(factory: F, ds: &Dataset, k: usize, seed: u64) -> Result<CvSummary>
where
    M: FittedModel,
    F: Fn(&Dataset, &[usize]) -> Result<M> + Sync,
{
    let split = stratified_kfold(ds, k, seed)?;
    let folds: Vec<FoldResult> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (train, test) = split.fold(fold);
            let model = factory(ds, &train)?;
            Ok(FoldResult {
                fold,
                n_train: train.len(),
                n_test: test.len(),
                report: evaluate_model(&model, ds, &test)?,
                standardizer_digest: model.standardizer().digest(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CvSummary {
        aggregate: aggregate(&folds),
        folds,
    })
}

/// Pipeline factory using `config`, for [`cross_validate`].
pub fn pipeline_factory(config: &RunConfig) -> impl Fn(&Dataset, &[usize]) -> Result<Pipeline> + Sync + '_ {
    move |ds, rows| fit_pipeline(ds, rows, None, config).map(|(p, _)| p)
}

pub const COMPARISON_ROWS: [&str; 5] = [
    "Logistic Regression",
    "Decision Tree",
    "Random Forest",
    "Text Encoder",
    "RF + Text Encoder (Dual-Stream)",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn accuracy(&self, index: usize) -> f64 {
        self.rows[index].accuracy.unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        let mut s = String::from("model,accuracy,macro_f1\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.model, fmt(r.accuracy), fmt(r.macro_f1)));
        }
        s
    }
}

struct ForestOnly<'a>(&'a Pipeline);
struct TextOnly<'a>(&'a Pipeline);

impl FittedModel for ForestOnly<'_> {
    fn p_high(&self, obs: &Observation) -> Result<f64> {
        let row = self.0.prepare(obs)?;
        let narrative = self.0.narrative(&row.tokens)?;
        Ok(self.0.streams.rf_probs(&row.x_std, &narrative)?[1])
    }

    fn standardizer(&self) -> &StandardizationStats {
        FittedModel::standardizer(self.0)
    }
}

impl FittedModel for TextOnly<'_> {
    fn p_high(&self, obs: &Observation) -> Result<f64> {
        let row = self.0.prepare(obs)?;
        Ok(softmax2(self.0.streams.encoder()?.encode(&row.tokens))[1])
    }

    fn standardizer(&self) -> &StandardizationStats {
        FittedModel::standardizer(self.0)
    }
}

/// The five-row comparison on `split`: numeric-only logistic regression,
/// decision tree and forest, text-only encoder, and the fused pipeline.
/// The forest and encoder rows are the fused pipeline's own frozen streams.
pub fn compare_baselines(ds: &Dataset, split: &SplitSpec, config: &RunConfig) -> Result<(ComparisonTable, Pipeline)> {
    let train = &split.train_indices;
    let test = &split.test_indices;
    if test.is_empty() {
        return Err(Error::EmptyRows);
    }
    let lr = fit_numeric_baseline(ds, train, NumericKind::Logistic, config)?;
    let dt = fit_numeric_baseline(ds, train, NumericKind::DecisionTree, config)?;
    let (pipeline, _) = fit_pipeline(ds, train, None, config)?;
    let reports = [
        evaluate_model(&lr, ds, test)?,
        evaluate_model(&dt, ds, test)?,
        evaluate_model(&ForestOnly(&pipeline), ds, test)?,
        evaluate_model(&TextOnly(&pipeline), ds, test)?,
        evaluate_model(&pipeline, ds, test)?,
    ];
    let rows = COMPARISON_ROWS
        .iter()
        .zip(reports)
        .map(|(name, report)| ComparisonRow {
            model: name.to_string(),
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            report,
        })
        .collect();
    Ok((ComparisonTable { rows }, pipeline))
}

/// Stream digest helper for frozen-stream checks.
pub fn stream_digest(streams: &Streams) -> String {
    streams.digest()
}
