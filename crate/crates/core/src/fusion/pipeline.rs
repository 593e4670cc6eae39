//! The fitted end-to-end model: imputation, standardization, both streams
//! and the meta-classifier, stored as one versioned bundle.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fuse, meta_forward, train_fusion, FusedVector, FusionRows, MetaClassifier, NarrativeFeatures, Streams};
use crate::config::RunConfig;
use crate::domain::{Dataset, Observation, RiskLabel, N_FEATURES};
use crate::error::{Error, Result};
use crate::ingest::{fit_standardizer, ImputeStats, StandardizationStats};
use crate::optim::EpochRecord;
use crate::tabular::fit_forest_oob;
use crate::text::train::{train_encoder, EncoderDataset};
use crate::text::{fit_tfidf, tokenize, TextEncoderModel, Vocabulary};

pub const PIPELINE_FORMAT_VERSION: u32 = 1;
pub const BUNDLE_FILE: &str = "bundle.json";

/// Seeds derived from the run seed, one per stochastic component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineSeeds {
    pub forest: u64,
    pub encoder_init: u64,
    pub encoder_shuffle: u64,
    pub meta_init: u64,
}

impl PipelineSeeds {
    pub fn from_run_seed(seed: u64) -> Self {
        PipelineSeeds {
            forest: seed,
            encoder_init: seed.wrapping_add(1),
            encoder_shuffle: seed.wrapping_add(2),
            meta_init: seed.wrapping_add(3),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub format_version: u32,
    pub config: RunConfig,
    pub seeds: PipelineSeeds,
    pub impute: Option<ImputeStats>,
    pub standardizer: Option<StandardizationStats>,
    pub streams: Streams,
    pub meta: Option<MetaClassifier>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurves {
    pub text: Vec<EpochRecord>,
    pub fusion: Vec<EpochRecord>,
}

/// Standardized numerics and tokens for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRow {
    pub x_std: [f64; N_FEATURES],
    pub tokens: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: RiskLabel,
    pub p_high: f64,
    pub fused_input: FusedVector,
}

fn train_labels(ds: &Dataset, rows: &[usize]) -> Result<Vec<RiskLabel>> {
    rows.iter()
        .map(|&r| ds.observations[r].label.ok_or(Error::Unlabeled { index: r }))
        .collect()
}

/// Fits every component on `train_rows` only. `val_rows`, when given, are
/// used for monitoring curves and never for fitting.
pub fn fit_pipeline(
    ds: &Dataset,
    train_rows: &[usize],
    val_rows: Option<&[usize]>,
    config: &RunConfig,
) -> Result<(Pipeline, TrainingCurves)> {
    if train_rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let seeds = PipelineSeeds::from_run_seed(config.seed);
    let labels = train_labels(ds, train_rows)?;
    let impute = ImputeStats::fit(ds, train_rows)?;
    let filled = impute.apply(ds);
    let standardizer = fit_standardizer(&filled, train_rows)?;
    let prepared = |rows: &[usize]| -> Vec<PreparedRow> {
        rows.iter()
            .map(|&r| PreparedRow {
                x_std: standardizer.transform(&filled.observations[r].values),
                tokens: tokenize(&filled.observations[r].narrative),
            })
            .collect()
    };
    let train = prepared(train_rows);
    let docs: Vec<Vec<String>> = train.iter().map(|p| p.tokens.clone()).collect();

    let mut streams = Streams::default();
    if config.rf.use_tfidf {
        streams.tfidf = Some(fit_tfidf(&docs, config.text.tfidf_max_terms, config.text.tfidf_min_df)?);
    }

    let tp = &config.text;
    let vocab = Vocabulary::build(&docs, tp.encoder_vocab_max);
    let mut encoder = TextEncoderModel::new(
        vocab,
        tp.d_model,
        tp.n_heads,
        tp.n_layers,
        tp.ff_mult * tp.d_model,
        tp.max_tokens,
        seeds.encoder_init,
    )?;
    let enc_train = EncoderDataset::new(&encoder, &docs, &labels)?;
    let val = match val_rows {
        Some(rows) if !rows.is_empty() => Some((prepared(rows), train_labels(ds, rows)?)),
        _ => None,
    };
    let enc_val = match &val {
        Some((rows, y)) => {
            let d: Vec<Vec<String>> = rows.iter().map(|p| p.tokens.clone()).collect();
            Some(EncoderDataset::new(&encoder, &d, y)?)
        }
        None => None,
    };
    let text_curve = train_encoder(&mut encoder, &enc_train, enc_val.as_ref(), tp, seeds.encoder_shuffle)?;
    streams.encoder = Some(encoder);

    let narratives: Vec<NarrativeFeatures> = {
        // tfidf is needed for the forest input before the forest exists
        let tfidf = streams.tfidf.as_ref();
        let enc = streams.encoder()?;
        docs.par_iter()
            .map(|d| NarrativeFeatures {
                z_text: enc.encode(d),
                tfidf: tfidf.map(|v| v.transform_dense(d)),
            })
            .collect()
    };
    let x_rf: Vec<Vec<f64>> = train
        .iter()
        .zip(&narratives)
        .map(|(p, n)| Streams::rf_input(&p.x_std, n))
        .collect();
    let (forest, oob) = fit_forest_oob(&x_rf, &labels, &config.rf, seeds.forest)?;
    let rf_train: Vec<[f64; 2]> = if config.fusion.rf_out_of_bag {
        oob
    } else {
        x_rf.par_iter().map(|x| forest.predict_proba(x)).collect()
    };
    streams.forest = Some(forest);

    let fusion_train = FusionRows {
        fused: rf_train
            .iter()
            .zip(&narratives)
            .map(|(p, n)| fuse(*p, n.z_text))
            .collect::<Result<_>>()?,
        labels,
    };
    let fusion_val = match &val {
        Some((rows, y)) => Some(FusionRows {
            fused: rows
                .par_iter()
                .map(|p| streams.fused(&p.x_std, &streams.narrative(&p.tokens)?))
                .collect::<Result<_>>()?,
            labels: y.clone(),
        }),
        None => None,
    };
    let mut meta = MetaClassifier::init(config.fusion.hidden, seeds.meta_init);
    let fusion_curve = train_fusion(&mut meta, &streams, &fusion_train, fusion_val.as_ref(), &config.fusion)?;

    Ok((
        Pipeline {
            format_version: PIPELINE_FORMAT_VERSION,
            config: config.clone(),
            seeds,
            impute: Some(impute),
            standardizer: Some(standardizer),
            streams,
            meta: Some(meta),
        },
        TrainingCurves {
            text: text_curve,
            fusion: fusion_curve,
        },
    ))
}

impl Pipeline {
    pub fn standardizer(&self) -> Result<&StandardizationStats> {
        self.standardizer.as_ref().ok_or(Error::NotFitted("standardizer"))
    }

    pub fn meta(&self) -> Result<&MetaClassifier> {
        self.meta.as_ref().ok_or(Error::NotFitted("meta-classifier"))
    }

    /// Mean imputation then standardization; missing values land on the
    /// training mean either way.
    pub fn prepare(&self, obs: &Observation) -> Result<PreparedRow> {
        let filled = match &self.impute {
            Some(stats) => stats.fill(obs),
            None => obs.clone(),
        };
        Ok(PreparedRow {
            x_std: self.standardizer()?.transform(&filled.values),
            tokens: tokenize(&filled.narrative),
        })
    }

    pub fn narrative(&self, tokens: &[String]) -> Result<NarrativeFeatures> {
        self.streams.narrative(tokens)
    }

    /// Final prediction from standardized numerics and narrative features.
    pub fn score(&self, x_std: &[f64; N_FEATURES], narrative: &NarrativeFeatures) -> Result<Prediction> {
        let z = self.streams.fused(x_std, narrative)?;
        let out = meta_forward(self.meta()?, &z);
        Ok(Prediction {
            label: RiskLabel::from_p_high(out.p_high),
            p_high: out.p_high,
            fused_input: z,
        })
    }

    pub fn check_fitted(&self) -> Result<()> {
        self.standardizer()?;
        self.streams.require_fitted()?;
        self.meta()?;
        Ok(())
    }

    pub fn predict(&self, obs: &Observation) -> Result<Prediction> {
        self.check_fitted()?;
        let row = self.prepare(obs)?;
        self.score(&row.x_std, &self.narrative(&row.tokens)?)
    }

    /// One prediction per observation, in input order.
    pub fn predict_batch(&self, observations: &[Observation]) -> Result<Vec<Prediction>> {
        self.check_fitted()?;
        observations.par_iter().map(|o| self.predict(o)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Pipeline = serde_json::from_str(s)?;
        if p.format_version != PIPELINE_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                kind: "pipeline",
                found: p.format_version,
                expected: PIPELINE_FORMAT_VERSION,
            });
        }
        Ok(p)
    }

    /// Writes `bundle.json` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(BUNDLE_FILE);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads a bundle from a directory or directly from a bundle file.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(BUNDLE_FILE)
        } else {
            path.to_path_buf()
        };
        let s = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Self::from_json(&s)
    }
}

/// `row_id,p_high,label` with one line per prediction.
pub fn write_predictions_csv<W: Write>(row_ids: &[usize], predictions: &[Prediction], out: W) -> Result<()> {
    if row_ids.len() != predictions.len() {
        return Err(Error::LengthMismatch(row_ids.len(), predictions.len()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_id", "p_high", "label"])?;
    for (id, p) in row_ids.iter().zip(predictions) {
        w.write_record([id.to_string(), format!("{}", p.p_high), p.label.as_str().to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<predictions>", e))?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::config::{FusionParams, TextParams};
    use crate::ingest::train_test_split;
    use crate::synth::{generate, SynthSpec};

    pub(crate) fn desk_config(seed: u64) -> RunConfig {
        RunConfig {
            seed,
            rf: crate::config::ForestParams {
                n_trees: 20,
                max_depth: 8,
                ..Default::default()
            },
            text: TextParams {
                epochs: 3,
                lr: 1e-3,
                d_model: 16,
                n_heads: 2,
                n_layers: 1,
                ff_mult: 2,
                ..TextParams::default()
            },
            fusion: FusionParams {
                epochs: 100,
                ..FusionParams::default()
            },
            ..RunConfig::default()
        }
    }

    fn small_fit(seed: u64) -> (Dataset, Pipeline, TrainingCurves, Vec<usize>) {
        let ds = generate(&SynthSpec {
            n: 300,
            seed,
            ..SynthSpec::default()
        })
        .unwrap();
        let split = train_test_split(ds.len(), 0.8, seed).unwrap();
        let (p, c) = fit_pipeline(&ds, &split.train_indices, Some(&split.test_indices), &desk_config(seed)).unwrap();
        (ds, p, c, split.test_indices)
    }

    #[test]
    fn end_to_end_fit_predict_and_bundle() {
        let (ds, p, curves, test) = small_fit(1);
        assert_eq!(curves.text.len(), 3);
        assert_eq!(curves.fusion.len(), 100);
        let obs: Vec<Observation> = test.iter().map(|&i| ds.observations[i].clone()).collect();
        let preds = p.predict_batch(&obs).unwrap();
        assert_eq!(preds.len(), obs.len());
        for (o, pr) in obs.iter().zip(&preds) {
            assert_eq!(*pr, p.predict(o).unwrap());
            assert_eq!(pr.label == RiskLabel::HighRisk, pr.p_high >= 0.5);
        }
        let acc = obs.iter().zip(&preds).filter(|(o, p)| o.label == Some(p.label)).count() as f64 / obs.len() as f64;
        assert!(acc > 0.8, "{acc}");

        let back = Pipeline::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back.predict_batch(&obs).unwrap(), preds);
    }

    #[test]
    fn empty_narrative_and_missing_values_still_predict() {
        let (ds, p, _, _) = small_fit(2);
        let mut o = ds.observations[0].clone();
        o.narrative.clear();
        o.values[3] = None;
        let pr = p.predict(&o).unwrap();
        assert!((0.0..=1.0).contains(&pr.p_high));
    }

    #[test]
    fn missing_component_is_named() {
        let (ds, mut p, _, _) = small_fit(3);
        p.streams.encoder = None;
        let err = p.predict(&ds.observations[0]).unwrap_err();
        assert!(err.to_string().contains("text encoder"), "{err}");
        p.meta = None;
        p.streams.encoder = None;
        p.streams.forest = None;
        assert!(p
            .predict(&ds.observations[0])
            .unwrap_err()
            .to_string()
            .contains("forest"));
    }

    #[test]
    fn fitting_is_deterministic() {
        let (_, a, ca, _) = small_fit(4);
        let (_, b, cb, _) = small_fit(4);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(ca, cb);
    }

    #[test]
    fn tfidf_switch_widens_forest_input() {
        let ds = generate(&SynthSpec {
            n: 200,
            ..SynthSpec::default()
        })
        .unwrap();
        let mut cfg = desk_config(0);
        cfg.rf.use_tfidf = true;
        cfg.text.epochs = 1;
        let rows: Vec<usize> = (0..200).collect();
        let (p, _) = fit_pipeline(&ds, &rows, None, &cfg).unwrap();
        let v = p.streams.tfidf.as_ref().unwrap();
        assert_eq!(p.streams.forest().unwrap().n_features, N_FEATURES + v.len());
        p.predict(&ds.observations[0]).unwrap();
    }

    #[test]
    fn predictions_csv_schema() {
        let z = fuse([0.5, 0.5], [0.0, 0.0]).unwrap();
        let preds = [
            Prediction {
                label: RiskLabel::HighRisk,
                p_high: 0.75,
                fused_input: z,
            },
            Prediction {
                label: RiskLabel::LowRisk,
                p_high: 0.25,
                fused_input: z,
            },
        ];
        let mut buf = Vec::new();
        write_predictions_csv(&[4, 9], &preds, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "row_id,p_high,label\n4,0.75,high\n9,0.25,low\n"
        );
    }
}
