use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{logits_cross_entropy, EncoderWeights, TextEncoderModel};
use super::tokenize::tokenize;
use crate::config::TextParams;
use crate::domain::RiskLabel;
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, EpochRecord, ParamSet};

/// Narratives already mapped to `[CLS, ids...]`.
#[derive(Clone, Debug, Default)]
pub struct EncoderDataset {
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<RiskLabel>,
}

impl EncoderDataset {
    pub fn new(model: &TextEncoderModel, docs: &[Vec<String>], labels: &[RiskLabel]) -> Result<Self> {
        if docs.len() != labels.len() {
            return Err(Error::LengthMismatch(docs.len(), labels.len()));
        }
        Ok(EncoderDataset {
            ids: docs.iter().map(|d| model.token_ids(d)).collect(),
            labels: labels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Mean cross-entropy and accuracy.
pub fn evaluate(model: &TextEncoderModel, data: &EncoderDataset) -> (f64, f64) {
    let (mut loss, mut correct) = (0.0, 0usize);
    for (ids, &y) in data.ids.iter().zip(&data.labels) {
        let z = model.encode_ids(ids, &vec![true; ids.len()]);
        loss += logits_cross_entropy(z, y).0;
        correct += usize::from(RiskLabel::from_p_high(super::softmax2(z)[1]) == y);
    }
    let n = data.len().max(1) as f64;
    (loss / n, correct as f64 / n)
}

/// Minibatch AdamW on the mean cross-entropy of each batch. Training loss
/// and accuracy are averaged over the epoch's batches as they are seen;
/// validation metrics are computed after the epoch.
///
/// A `batch_size` of zero or at least the training size is full batch.
pub fn train_encoder(
    model: &mut TextEncoderModel,
    train: &EncoderDataset,
    val: Option<&EncoderDataset>,
    params: &TextParams,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(Error::EmptyRows);
    }
    let n = train.len();
    let batch = if params.batch_size == 0 {
        n
    } else {
        params.batch_size.min(n)
    };
    let mut opt = AdamW::new(AdamWConfig::new(params.lr, params.weight_decay), &model.weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(params.epochs);

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(batch) {
            let mut grads = EncoderWeights::zeros(&model.config);
            let w = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let y = train.labels[i];
                let (loss, z) = model.accumulate_grad(&train.ids[i], y, w, &mut grads);
                loss_sum += loss;
                correct += usize::from(RiskLabel::from_p_high(super::softmax2(z)[1]) == y);
            }
            opt.step(&mut model.weights, &grads);
        }
        let train_loss = loss_sum / n as f64;
        if !train_loss.is_finite() || !model.weights.all_finite() {
            return Err(Error::Diverged(epoch));
        }
        let (val_loss, val_acc) = match val {
            Some(v) if !v.is_empty() => {
                let (l, a) = evaluate(model, v);
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            train_acc: correct as f64 / n as f64,
            val_acc,
        });
    }
    Ok(records)
}

/// Thirty-two tokenized keyword narratives, half of them High-Risk.
pub fn keyword_corpus() -> (Vec<Vec<String>>, Vec<RiskLabel>) {
    let high = ["downed trees", "roof damage", "severe gusts", "power lines down"];
    let low = ["calm winds", "light breeze", "clear skies", "quiet evening"];
    let fillers = ["near town", "this afternoon", "reported", "by observers"];
    let mut docs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..16 {
        docs.push(tokenize(&format!("{} {}", high[i % 4], fillers[i / 4])));
        labels.push(RiskLabel::HighRisk);
        docs.push(tokenize(&format!("{} {}", low[i % 4], fillers[(i + 1) % 4])));
        labels.push(RiskLabel::LowRisk);
    }
    (docs, labels)
}
