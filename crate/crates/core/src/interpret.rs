//! Sensitivity of the risk score to each standardized numeric feature, zero-out
//! ablation, and a side-by-side ranking of the two.

use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Feature, RiskLabel, N_FEATURES};
use crate::error::{Error, Result};
use crate::fusion::{meta_forward, p_high_input_grad, FusedVector, MetaClassifier, NarrativeFeatures, Pipeline};

/// Anything mapping standardized numerics plus fixed per-sample context to
/// a High-risk probability.
pub trait RiskScorer: Sync {
    type Context: Sync;
    fn p_high(&self, x_std: &[f64; N_FEATURES], ctx: &Self::Context) -> Result<f64>;
}

impl RiskScorer for Pipeline {
    type Context = NarrativeFeatures;

    fn p_high(&self, x_std: &[f64; N_FEATURES], ctx: &NarrativeFeatures) -> Result<f64> {
        Ok(self.score(x_std, ctx)?.p_high)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<C> {
    pub x_std: [f64; N_FEATURES],
    pub context: C,
}

/// Which rows of an evaluation set the analyses run on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleSelection {
    CorrectHighRisk,
    All,
}

/// Prepared samples for `rows`, filtered by `selection`.
pub fn select_samples(
    pipeline: &Pipeline,
    ds: &Dataset,
    rows: &[usize],
    selection: SampleSelection,
) -> Result<Vec<Sample<NarrativeFeatures>>> {
    pipeline.check_fitted()?;
    let prepared: Vec<Option<Sample<NarrativeFeatures>>> = rows
        .par_iter()
        .map(|&r| {
            let obs = &ds.observations[r];
            let row = pipeline.prepare(obs)?;
            let context = pipeline.narrative(&row.tokens)?;
            let keep = match selection {
                SampleSelection::All => true,
                SampleSelection::CorrectHighRisk => {
                    let label = obs.label.ok_or(Error::Unlabeled { index: r })?;
                    label == RiskLabel::HighRisk && pipeline.score(&row.x_std, &context)?.label == label
                }
            };
            Ok(keep.then_some(Sample {
                x_std: row.x_std,
                context,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(prepared.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityMethod {
    /// Central differences of the end-to-end score.
    FiniteDifferencePipeline,
    /// Exact meta-classifier gradient chained with central differences of
    /// the forest probabilities.
    ExactMeta,
}

impl SensitivityMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            SensitivityMethod::FiniteDifferencePipeline => "finite-difference-pipeline",
            SensitivityMethod::ExactMeta => "exact-meta",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub values: [f64; N_FEATURES],
    pub method: SensitivityMethod,
    pub n_samples: usize,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline: f64,
    pub ablated: [f64; N_FEATURES],
    pub impact: [f64; N_FEATURES],
    pub n_samples: usize,
}

fn shifted(x: &[f64; N_FEATURES], f: usize, delta: f64) -> [f64; N_FEATURES] {
    let mut y = *x;
    y[f] += delta;
    y
}

/// Mean over samples of `[p(x + h e_f) - p(x - h e_f)] / 2h`, per feature.
pub fn sensitivity_fd<S: RiskScorer>(scorer: &S, samples: &[Sample<S::Context>], h: f64) -> Result<SensitivityReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParam(format!("step {h} must be positive")));
    }
    let per_feature: Vec<f64> = (0..N_FEATURES)
        .into_par_iter()
        .map(|f| {
            let mut sum = 0.0;
            for s in samples {
                let up = scorer.p_high(&shifted(&s.x_std, f, h), &s.context)?;
                let down = scorer.p_high(&shifted(&s.x_std, f, -h), &s.context)?;
                sum += (up - down) / (2.0 * h);
            }
            Ok(sum / samples.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(SensitivityReport {
        values: std::array::from_fn(|f| per_feature[f]),
        method: SensitivityMethod::FiniteDifferencePipeline,
        n_samples: samples.len(),
        step: h,
    })
}

/// Mean analytic gradient of `p_high` w.r.t. the four fused inputs.
pub fn sensitivity_exact_meta(g: &MetaClassifier, fused: &[FusedVector]) -> [f64; 4] {
    let mut acc = [0.0; 4];
    for z in fused {
        let d = p_high_input_grad(g, z);
        for i in 0..4 {
            acc[i] += d[i];
        }
    }
    let n = fused.len().max(1) as f64;
    acc.map(|v| v / n)
}

/// Per-feature sensitivity through the differentiable segment: the exact
/// meta gradient w.r.t. the forest probabilities times their central
/// difference in each feature.
pub fn sensitivity_chain(
    pipeline: &Pipeline,
    samples: &[Sample<NarrativeFeatures>],
    h: f64,
) -> Result<SensitivityReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let g = pipeline.meta()?;
    let streams = &pipeline.streams;
    let per_feature: Vec<f64> = (0..N_FEATURES)
        .into_par_iter()
        .map(|f| {
            let mut sum = 0.0;
            for s in samples {
                let z = streams.fused(&s.x_std, &s.context)?;
                let dz = p_high_input_grad(g, &z);
                let up = streams.rf_probs(&shifted(&s.x_std, f, h), &s.context)?;
                let down = streams.rf_probs(&shifted(&s.x_std, f, -h), &s.context)?;
                sum += dz[0] * (up[0] - down[0]) / (2.0 * h) + dz[1] * (up[1] - down[1]) / (2.0 * h);
            }
            Ok(sum / samples.len() as f64)
        })
        .collect::<Result<_>>()?;
    Ok(SensitivityReport {
        values: std::array::from_fn(|f| per_feature[f]),
        method: SensitivityMethod::ExactMeta,
        n_samples: samples.len(),
        step: h,
    })
}

/// Fused inputs of the samples, for [`sensitivity_exact_meta`].
pub fn fused_inputs(pipeline: &Pipeline, samples: &[Sample<NarrativeFeatures>]) -> Result<Vec<FusedVector>> {
    samples
        .iter()
        .map(|s| pipeline.streams.fused(&s.x_std, &s.context))
        .collect()
}

fn mean_p_high<S: RiskScorer>(scorer: &S, samples: &[Sample<S::Context>], zero: Option<usize>) -> Result<f64> {
    let mut sum = 0.0;
    for s in samples {
        let mut x = s.x_std;
        if let Some(f) = zero {
            x[f] = 0.0;
        }
        sum += scorer.p_high(&x, &s.context)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Zeroes each standardized feature in turn (its training mean in raw
/// units) and records the drop in mean High-risk confidence, floored at 0.
pub fn ablate<S: RiskScorer>(scorer: &S, samples: &[Sample<S::Context>]) -> Result<AblationReport> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let baseline = mean_p_high(scorer, samples, None)?;
    let ablated: Vec<f64> = (0..N_FEATURES)
        .into_par_iter()
        .map(|f| mean_p_high(scorer, samples, Some(f)))
        .collect::<Result<_>>()?;
    Ok(AblationReport {
        baseline,
        ablated: std::array::from_fn(|f| ablated[f]),
        impact: std::array::from_fn(|f| (baseline - ablated[f]).max(0.0)),
        n_samples: samples.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub feature: Feature,
    pub sensitivity: f64,
    /// 1 is the largest magnitude.
    pub sensitivity_rank: usize,
    pub impact: f64,
    pub ablation_rank: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastReport {
    pub rows: Vec<ContrastRow>,
    /// `(sensitivity leader, ablation leader)` when they differ.
    pub disagreements: Vec<(Feature, Feature)>,
}

/// 1-based ranks by descending score; ties keep feature order.
fn ranks(scores: &[f64; N_FEATURES]) -> [usize; N_FEATURES] {
    let mut order: Vec<usize> = (0..N_FEATURES).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut r = [0; N_FEATURES];
    for (rank, f) in order.into_iter().enumerate() {
        r[f] = rank + 1;
    }
    r
}

pub fn contrast_report(s: &SensitivityReport, a: &AblationReport) -> ContrastReport {
    let s_rank = ranks(&s.values.map(f64::abs));
    let a_rank = ranks(&a.impact);
    let rows: Vec<ContrastRow> = Feature::ALL
        .iter()
        .map(|&f| ContrastRow {
            feature: f,
            sensitivity: s.values[f.index()],
            sensitivity_rank: s_rank[f.index()],
            impact: a.impact[f.index()],
            ablation_rank: a_rank[f.index()],
        })
        .collect();
    let leader = |by: fn(&ContrastRow) -> usize| rows.iter().find(|r| by(r) == 1).map(|r| r.feature).unwrap();
    let top_s = leader(|r| r.sensitivity_rank);
    let top_a = leader(|r| r.ablation_rank);
    ContrastReport {
        disagreements: if top_s == top_a { vec![] } else { vec![(top_s, top_a)] },
        rows,
    }
}

pub fn interpret_sensitivity(v: f64) -> &'static str {
    if v > 0.0 {
        "raises risk when increased"
    } else if v < 0.0 {
        "lowers risk when increased"
    } else {
        "no local effect"
    }
}

pub fn interpret_impact(v: f64) -> &'static str {
    if v >= 0.1 {
        "large drop in confidence when removed"
    } else if v > 0.0 {
        "small drop in confidence when removed"
    } else {
        "no dominating effect"
    }
}

pub fn write_sensitivity_csv<W: Write>(r: &SensitivityReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "sensitivity", "interpretation"])?;
    for f in Feature::ALL {
        let v = r.values[f.index()];
        w.write_record([f.name(), &format!("{v}"), interpret_sensitivity(v)])?;
    }
    w.flush().map_err(|e| Error::io("<sensitivity>", e))?;
    Ok(())
}

pub fn write_ablation_csv<W: Write>(r: &AblationReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "impact", "ablated_confidence", "interpretation"])?;
    for f in Feature::ALL {
        let i = f.index();
        w.write_record([
            f.name(),
            &format!("{}", r.impact[i]),
            &format!("{}", r.ablated[i]),
            interpret_impact(r.impact[i]),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<ablation>", e))?;
    Ok(())
}

/// Plain-text sensitivity and ablation tables, followed by the rank
/// comparison.
pub fn render_tables(s: &SensitivityReport, a: &AblationReport, c: &ContrastReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Sensitivity ({}, {} samples, h = {})",
        s.method.as_str(),
        s.n_samples,
        s.step
    );
    let _ = writeln!(out, "{:<8} {:>14}  {}", "feature", "gradient", "interpretation");
    for f in Feature::ALL {
        let v = s.values[f.index()];
        let _ = writeln!(out, "{:<8} {:>14.6e}  {}", f.name(), v, interpret_sensitivity(v));
    }
    let _ = writeln!(
        out,
        "\nAblation ({} samples, baseline confidence {:.4})",
        a.n_samples, a.baseline
    );
    let _ = writeln!(out, "{:<8} {:>8}  {}", "feature", "impact", "interpretation");
    for f in Feature::ALL {
        let v = a.impact[f.index()];
        let _ = writeln!(out, "{:<8} {:>8.4}  {}", f.name(), v, interpret_impact(v));
    }
    let _ = writeln!(out, "\n{:<8} {:>10} {:>9}", "feature", "grad rank", "abl rank");
    for r in &c.rows {
        let mark = if r.sensitivity_rank != r.ablation_rank {
            " *"
        } else {
            ""
        };
        let _ = writeln!(
            out,
            "{:<8} {:>10} {:>9}{mark}",
            r.feature.name(),
            r.sensitivity_rank,
            r.ablation_rank
        );
    }
    for (s_top, a_top) in &c.disagreements {
        let _ = writeln!(
            out,
            "most sensitive: {}; most necessary: {}",
            s_top.name(),
            a_top.name()
        );
    }
    out
}

/// Convenience used by tests and the CLI: exact meta outputs for a sample.
pub fn meta_p_high(g: &MetaClassifier, z: &FusedVector) -> f64 {
    meta_forward(g, z).p_high
}
