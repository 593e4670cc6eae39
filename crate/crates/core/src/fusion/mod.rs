//! Late fusion: frozen stream outputs concatenated and fed to a small
//! meta-classifier.

pub mod meta;
pub mod pipeline;

use serde::{Deserialize, Serialize};

pub use meta::{
    cross_entropy, fuse, hidden_pre, meta_forward, meta_loss_grad, p_high_input_grad, FusedVector, MetaClassifier,
    MetaOutput,
};
pub use pipeline::{
    fit_pipeline, write_predictions_csv, Pipeline, PipelineSeeds, Prediction, PreparedRow, TrainingCurves,
};

use crate::config::FusionParams;
use crate::domain::{RiskLabel, N_FEATURES};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, EpochRecord, ParamSet};
use crate::tabular::ForestModel;
use crate::text::{TextEncoderModel, TfidfVectorizer};

/// The two independently trained streams, plus the TF-IDF vectorizer when
/// the forest consumes narrative features.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Streams {
    pub forest: Option<ForestModel>,
    pub encoder: Option<TextEncoderModel>,
    pub tfidf: Option<TfidfVectorizer>,
}

/// Everything a narrative contributes, computed once per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct NarrativeFeatures {
    pub z_text: [f64; 2],
    pub tfidf: Option<Vec<f64>>,
}

impl Streams {
    pub fn forest(&self) -> Result<&ForestModel> {
        self.forest.as_ref().ok_or(Error::NotFitted("forest"))
    }

    pub fn encoder(&self) -> Result<&TextEncoderModel> {
        self.encoder.as_ref().ok_or(Error::NotFitted("text encoder"))
    }

    fn uses_tfidf(&self) -> Result<bool> {
        Ok(self.forest()?.params.use_tfidf)
    }

    /// Fails naming the first absent component.
    pub fn require_fitted(&self) -> Result<()> {
        self.forest()?;
        self.encoder()?;
        if self.uses_tfidf()? && self.tfidf.is_none() {
            return Err(Error::NotFitted("tfidf vectorizer"));
        }
        Ok(())
    }

    pub fn narrative(&self, tokens: &[String]) -> Result<NarrativeFeatures> {
        let tfidf = if self.uses_tfidf()? {
            let v = self.tfidf.as_ref().ok_or(Error::NotFitted("tfidf vectorizer"))?;
            Some(v.transform_dense(tokens))
        } else {
            None
        };
        Ok(NarrativeFeatures {
            z_text: self.encoder()?.encode(tokens),
            tfidf,
        })
    }

    /// Forest input row: standardized numerics, then TF-IDF when enabled.
    pub fn rf_input(x_std: &[f64; N_FEATURES], narrative: &NarrativeFeatures) -> Vec<f64> {
        let mut row = x_std.to_vec();
        if let Some(t) = &narrative.tfidf {
            row.extend_from_slice(t);
        }
        row
    }

    pub fn rf_probs(&self, x_std: &[f64; N_FEATURES], narrative: &NarrativeFeatures) -> Result<[f64; 2]> {
        Ok(self.forest()?.predict_proba(&Self::rf_input(x_std, narrative)))
    }

    pub fn fused(&self, x_std: &[f64; N_FEATURES], narrative: &NarrativeFeatures) -> Result<FusedVector> {
        fuse(self.rf_probs(x_std, narrative)?, narrative.z_text)
    }

    /// Digest over both streams and the vectorizer.
    pub fn digest(&self) -> String {
        crate::digest::json_digest(self)
    }
}

/// Precomputed meta-classifier inputs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FusionRows {
    pub fused: Vec<FusedVector>,
    pub labels: Vec<RiskLabel>,
}

impl FusionRows {
    pub fn len(&self) -> usize {
        self.fused.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fused.is_empty()
    }
}

/// Mean loss and accuracy of `g` on `rows`.
pub fn evaluate_meta(g: &MetaClassifier, rows: &FusionRows) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    let (mut loss, mut correct) = (0.0, 0usize);
    for (z, &y) in rows.fused.iter().zip(&rows.labels) {
        let p = meta_forward(g, z).p_high;
        loss += cross_entropy(p, y);
        correct += usize::from(RiskLabel::from_p_high(p) == y);
    }
    (loss / n, correct as f64 / n)
}

/// Full-batch AdamW on the meta-classifier. The streams are only read, to
/// confirm they are fitted; one record per epoch, after the update.
pub fn train_fusion(
    g: &mut MetaClassifier,
    streams: &Streams,
    train: &FusionRows,
    val: Option<&FusionRows>,
    params: &FusionParams,
) -> Result<Vec<EpochRecord>> {
    streams.require_fitted()?;
    if train.is_empty() {
        return Err(Error::EmptyRows);
    }
    if train.fused.len() != train.labels.len() {
        return Err(Error::LengthMismatch(train.fused.len(), train.labels.len()));
    }
    let mut opt = AdamW::new(AdamWConfig::new(params.lr, params.weight_decay), g);
    let w = 1.0 / train.len() as f64;
    let mut records = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        let mut grads = MetaClassifier::zeros(g.hidden);
        for (z, &y) in train.fused.iter().zip(&train.labels) {
            meta_loss_grad(g, z, y, w, &mut grads);
        }
        opt.step(g, &grads);
        let (train_loss, train_acc) = evaluate_meta(g, train);
        if !train_loss.is_finite() || !g.all_finite() {
            return Err(Error::Diverged(epoch));
        }
        let (val_loss, val_acc) = match val {
            Some(v) if !v.is_empty() => {
                let (l, a) = evaluate_meta(g, v);
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_acc,
            val_acc,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::pipeline::tests::desk_config;
    use crate::synth::{generate, SynthSpec};

    fn fitted() -> (Pipeline, FusionRows) {
        let ds = generate(&SynthSpec {
            n: 200,
            seed: 4,
            ..SynthSpec::default()
        })
        .unwrap();
        let rows: Vec<usize> = (0..ds.len()).collect();
        let (p, _) = fit_pipeline(&ds, &rows, None, &desk_config(4)).unwrap();
        let mut data = FusionRows::default();
        for obs in &ds.observations {
            let row = p.prepare(obs).unwrap();
            let narr = p.narrative(&row.tokens).unwrap();
            data.fused.push(p.streams.fused(&row.x_std, &narr).unwrap());
            data.labels.push(obs.label.unwrap());
        }
        (p, data)
    }

    #[test]
    fn streams_stay_frozen_while_the_head_trains() {
        let (p, data) = fitted();
        let before = p.streams.digest();
        let forest = p.streams.forest.clone();
        let mut g = MetaClassifier::init(16, 9);
        let start = g.digest();
        let params = FusionParams {
            epochs: 20,
            ..FusionParams::default()
        };
        let records = train_fusion(&mut g, &p.streams, &data, None, &params).unwrap();
        assert_eq!(records.len(), 20);
        assert!(records.iter().all(|r| r.val_loss.is_none()));
        assert_ne!(g.digest(), start);
        assert_eq!(p.streams.digest(), before);
        assert_eq!(p.streams.forest, forest);
    }

    #[test]
    fn zero_epochs_leave_the_head_unchanged() {
        let (p, data) = fitted();
        let mut g = MetaClassifier::init(16, 2);
        let start = g.clone();
        let params = FusionParams {
            epochs: 0,
            ..FusionParams::default()
        };
        assert!(train_fusion(&mut g, &p.streams, &data, Some(&data), &params)
            .unwrap()
            .is_empty());
        assert_eq!(g, start);
    }

    #[test]
    fn unfitted_streams_are_rejected() {
        let data = FusionRows {
            fused: vec![fuse([0.5, 0.5], [0.0, 0.0]).unwrap()],
            labels: vec![RiskLabel::LowRisk],
        };
        let mut g = MetaClassifier::init(16, 0);
        let err = train_fusion(&mut g, &Streams::default(), &data, None, &FusionParams::default()).unwrap_err();
        assert!(matches!(err, Error::NotFitted("forest")), "{err}");
    }
}
