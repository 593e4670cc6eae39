//! Post-LN transformer encoder with a CLS classification head, forward and
//! backward passes written out by hand in `f64`.
//!
//! ```text
//! E  = tok_emb[ids] + pos_emb[0..T]
//! H  = LN(E)
//! per layer:  H = LN(H + MHA(H));  H = LN(H + W2 gelu(W1 H))
//! logits = head_w^T H[CLS] + head_b
//! ```
//!
//! Padded positions are excluded from attention as keys, so they cannot
//! influence any unpadded position.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, PAD};
use crate::domain::RiskLabel;
use crate::error::{Error, Result};
use crate::optim::ParamSet;

pub const ENCODER_FORMAT_VERSION: u32 = 1;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    /// Positions available, CLS included.
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::InvalidParam(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len == 0 || self.ff_dim == 0 {
            return Err(Error::InvalidParam("max_len and ff_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderWeights {
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub emb_ln_g: Array1<f64>,
    pub emb_ln_b: Array1<f64>,
    pub layers: Vec<LayerWeights>,
    /// `[d_model, 2]`
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

impl LayerWeights {
    fn zeros(d: usize, f: usize) -> Self {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        LayerWeights {
            wq: m(d, d),
            bq: v(d),
            wk: m(d, d),
            bk: v(d),
            wv: m(d, d),
            bv: v(d),
            wo: m(d, d),
            bo: v(d),
            ln1_g: v(d),
            ln1_b: v(d),
            w1: m(d, f),
            b1: v(f),
            w2: m(f, d),
            b2: v(d),
            ln2_g: v(d),
            ln2_b: v(d),
        }
    }

    fn named(&self) -> [(&'static str, &[f64]); 16] {
        [
            ("wq", self.wq.as_slice().unwrap()),
            ("bq", self.bq.as_slice().unwrap()),
            ("wk", self.wk.as_slice().unwrap()),
            ("bk", self.bk.as_slice().unwrap()),
            ("wv", self.wv.as_slice().unwrap()),
            ("bv", self.bv.as_slice().unwrap()),
            ("wo", self.wo.as_slice().unwrap()),
            ("bo", self.bo.as_slice().unwrap()),
            ("ln1_g", self.ln1_g.as_slice().unwrap()),
            ("ln1_b", self.ln1_b.as_slice().unwrap()),
            ("w1", self.w1.as_slice().unwrap()),
            ("b1", self.b1.as_slice().unwrap()),
            ("w2", self.w2.as_slice().unwrap()),
            ("b2", self.b2.as_slice().unwrap()),
            ("ln2_g", self.ln2_g.as_slice().unwrap()),
            ("ln2_b", self.ln2_b.as_slice().unwrap()),
        ]
    }

    fn named_mut(&mut self) -> [&mut [f64]; 16] {
        [
            self.wq.as_slice_mut().unwrap(),
            self.bq.as_slice_mut().unwrap(),
            self.wk.as_slice_mut().unwrap(),
            self.bk.as_slice_mut().unwrap(),
            self.wv.as_slice_mut().unwrap(),
            self.bv.as_slice_mut().unwrap(),
            self.wo.as_slice_mut().unwrap(),
            self.bo.as_slice_mut().unwrap(),
            self.ln1_g.as_slice_mut().unwrap(),
            self.ln1_b.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
            self.ln2_g.as_slice_mut().unwrap(),
            self.ln2_b.as_slice_mut().unwrap(),
        ]
    }
}

impl EncoderWeights {
    pub fn zeros(c: &EncoderConfig) -> Self {
        let d = c.d_model;
        EncoderWeights {
            tok_emb: Array2::zeros((c.vocab_size, d)),
            pos_emb: Array2::zeros((c.max_len, d)),
            emb_ln_g: Array1::zeros(d),
            emb_ln_b: Array1::zeros(d),
            layers: (0..c.n_layers).map(|_| LayerWeights::zeros(d, c.ff_dim)).collect(),
            head_w: Array2::zeros((d, 2)),
            head_b: Array1::zeros(2),
        }
    }

    /// Embeddings `N(0, 0.02)`, projections Glorot-normal, biases zero,
    /// layer-norm gains one.
    pub fn init(c: &EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(c);
        let mut fill = |a: &mut Array2<f64>, std: f64| {
            let n = Normal::new(0.0, std).unwrap();
            a.iter_mut().for_each(|v| *v = n.sample(&mut rng));
        };
        let glorot = |a: &Array2<f64>| (2.0 / (a.nrows() + a.ncols()) as f64).sqrt();
        fill(&mut w.tok_emb, 0.02);
        fill(&mut w.pos_emb, 0.02);
        w.emb_ln_g.fill(1.0);
        for l in &mut w.layers {
            for m in [&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo, &mut l.w1, &mut l.w2] {
                let s = glorot(m);
                fill(m, s);
            }
            l.ln1_g.fill(1.0);
            l.ln2_g.fill(1.0);
        }
        let s = glorot(&w.head_w);
        fill(&mut w.head_w, s);
        w
    }
}

impl ParamSet for EncoderWeights {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut v: Vec<(String, &[f64])> = vec![
            ("tok_emb".into(), self.tok_emb.as_slice().unwrap()),
            ("pos_emb".into(), self.pos_emb.as_slice().unwrap()),
            ("emb_ln_g".into(), self.emb_ln_g.as_slice().unwrap()),
            ("emb_ln_b".into(), self.emb_ln_b.as_slice().unwrap()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            v.extend(l.named().into_iter().map(|(n, t)| (format!("layer{i}.{n}"), t)));
        }
        v.push(("head_w".into(), self.head_w.as_slice().unwrap()));
        v.push(("head_b".into(), self.head_b.as_slice().unwrap()));
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![
            self.tok_emb.as_slice_mut().unwrap(),
            self.pos_emb.as_slice_mut().unwrap(),
            self.emb_ln_g.as_slice_mut().unwrap(),
            self.emb_ln_b.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            v.extend(l.named_mut());
        }
        v.push(self.head_w.as_slice_mut().unwrap());
        v.push(self.head_b.as_slice_mut().unwrap());
        v
    }
}

/// Cached normalized activations for the layer-norm backward pass.
#[derive(Clone, Debug)]
pub struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer norm; returns `(gamma * xhat + beta, cache)`.
pub fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LN_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gamma: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
    let dbeta = dy.sum_axis(Axis(0));
    let dxhat = dy * gamma;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for t in 0..dy.nrows() {
        let g = dxhat.row(t);
        let xh = cache.xhat.row(t);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let s = cache.inv_std[t];
        dx.row_mut(t).assign(&((&g - mean_g - &(&xh * mean_gx)) * s));
    }
    (dx, dgamma, dbeta)
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct LayerCache {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    ln1: LnCache,
    h1: Array2<f64>,
    f1: Array2<f64>,
    g: Array2<f64>,
    ln2: LnCache,
}

pub struct ForwardCache {
    ids: Vec<usize>,
    emb_ln: LnCache,
    layers: Vec<LayerCache>,
    cls: Array1<f64>,
}

fn add_bias(mut x: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x += b;
    x
}

fn forward(w: &EncoderWeights, c: &EncoderConfig, ids: &[usize], mask: &[bool]) -> ([f64; 2], ForwardCache) {
    let t_len = ids.len();
    let d = c.d_model;
    let dh = d / c.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut e = Array2::zeros((t_len, d));
    for (t, &id) in ids.iter().enumerate() {
        let mut row = e.row_mut(t);
        row.assign(&w.tok_emb.row(id));
        row += &w.pos_emb.row(t);
    }
    let (mut h, emb_ln) = layer_norm(&e, &w.emb_ln_g, &w.emb_ln_b);

    let mut caches = Vec::with_capacity(w.layers.len());
    for l in &w.layers {
        let q = add_bias(h.dot(&l.wq), &l.bq);
        let k = add_bias(h.dot(&l.wk), &l.bk);
        let v = add_bias(h.dot(&l.wv), &l.bv);
        let mut ctx = Array2::zeros((t_len, d));
        let mut attn = Vec::with_capacity(c.n_heads);
        for head in 0..c.n_heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.rows_mut() {
                let max = row
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(s, _)| *s)
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (s, &m) in row.iter_mut().zip(mask) {
                    *s = if m { (*s - max).exp() } else { 0.0 };
                    sum += *s;
                }
                row.mapv_inplace(|s| s / sum);
            }
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            attn.push(scores);
        }
        let o = add_bias(ctx.dot(&l.wo), &l.bo);
        let (h1, ln1) = layer_norm(&(&h + &o), &l.ln1_g, &l.ln1_b);
        let f1 = add_bias(h1.dot(&l.w1), &l.b1);
        let g = f1.mapv(gelu);
        let f2 = add_bias(g.dot(&l.w2), &l.b2);
        let (h2, ln2) = layer_norm(&(&h1 + &f2), &l.ln2_g, &l.ln2_b);
        caches.push(LayerCache {
            input: std::mem::replace(&mut h, h2),
            q,
            k,
            v,
            attn,
            ctx,
            ln1,
            h1,
            f1,
            g,
            ln2,
        });
    }
    let cls = h.row(0).to_owned();
    let z = cls.dot(&w.head_w) + &w.head_b;
    (
        [z[0], z[1]],
        ForwardCache {
            ids: ids.to_vec(),
            emb_ln,
            layers: caches,
            cls,
        },
    )
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

/// Accumulates the gradient of `dlogits . logits` into `grads`.
fn backward(
    w: &EncoderWeights,
    c: &EncoderConfig,
    cache: &ForwardCache,
    dlogits: [f64; 2],
    grads: &mut EncoderWeights,
) {
    let d = c.d_model;
    let dh = d / c.n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let dz = Array1::from(dlogits.to_vec());
    grads.head_w += &outer(&cache.cls, &dz);
    grads.head_b += &dz;

    let t_len = cache.ids.len();
    let mut dh_out = Array2::zeros((t_len, d));
    dh_out.row_mut(0).assign(&w.head_w.dot(&dz));

    for (l, (lw, lc)) in w.layers.iter().zip(&cache.layers).enumerate().rev() {
        let lg = &mut grads.layers[l];
        let (dr2, dg, db) = layer_norm_backward(&dh_out, &lc.ln2, &lw.ln2_g);
        lg.ln2_g += &dg;
        lg.ln2_b += &db;

        lg.w2 += &lc.g.t().dot(&dr2);
        lg.b2 += &dr2.sum_axis(Axis(0));
        let dgelu = dr2.dot(&lw.w2.t());
        let mut df1 = dgelu;
        df1.zip_mut_with(&lc.f1, |g, &x| *g *= gelu_grad(x));
        lg.w1 += &lc.h1.t().dot(&df1);
        lg.b1 += &df1.sum_axis(Axis(0));
        let dh1 = &dr2 + &df1.dot(&lw.w1.t());

        let (dr1, dg, db) = layer_norm_backward(&dh1, &lc.ln1, &lw.ln1_g);
        lg.ln1_g += &dg;
        lg.ln1_b += &db;

        lg.wo += &lc.ctx.t().dot(&dr1);
        lg.bo += &dr1.sum_axis(Axis(0));
        let dctx = dr1.dot(&lw.wo.t());

        let mut dq = Array2::zeros((t_len, d));
        let mut dk = Array2::zeros((t_len, d));
        let mut dv = Array2::zeros((t_len, d));
        for head in 0..c.n_heads {
            let cols = s![.., head * dh..(head + 1) * dh];
            let a = &lc.attn[head];
            let dctx_h = dctx.slice(cols);
            let da = dctx_h.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dctx_h));
            // dS = A * (dA - rowsum(dA * A)), then the 1/sqrt(dh) scale
            let rowsum = (&da * a).sum_axis(Axis(1));
            let mut ds = a * &(&da - &rowsum.insert_axis(Axis(1)));
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        lg.wq += &lc.input.t().dot(&dq);
        lg.bq += &dq.sum_axis(Axis(0));
        lg.wk += &lc.input.t().dot(&dk);
        lg.bk += &dk.sum_axis(Axis(0));
        lg.wv += &lc.input.t().dot(&dv);
        lg.bv += &dv.sum_axis(Axis(0));
        dh_out = &dr1 + &dq.dot(&lw.wq.t()) + dk.dot(&lw.wk.t()) + dv.dot(&lw.wv.t());
    }

    let (de, dg, db) = layer_norm_backward(&dh_out, &cache.emb_ln, &w.emb_ln_g);
    grads.emb_ln_g += &dg;
    grads.emb_ln_b += &db;
    for (t, &id) in cache.ids.iter().enumerate() {
        let row = de.row(t);
        let mut tok = grads.tok_emb.row_mut(id);
        tok += &row;
        let mut pos = grads.pos_emb.row_mut(t);
        pos += &row;
    }
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = (z[0] - m).exp();
    let e1 = (z[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Cross-entropy of softmax logits and its gradient w.r.t. the logits.
pub fn logits_cross_entropy(z: [f64; 2], label: RiskLabel) -> (f64, [f64; 2]) {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    let y = label.index();
    let p = softmax2(z);
    let mut g = p;
    g[y] -= 1.0;
    (lse - z[y], g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderModel {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub vocab: Vocabulary,
    pub weights: EncoderWeights,
    pub seed: u64,
}

impl TextEncoderModel {
    pub fn new(
        vocab: Vocabulary,
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
        ff_dim: usize,
        max_len: usize,
        seed: u64,
    ) -> Result<Self> {
        let config = EncoderConfig {
            vocab_size: vocab.len(),
            d_model,
            n_heads,
            n_layers,
            ff_dim,
            max_len,
        };
        config.validate()?;
        Ok(TextEncoderModel {
            format_version: ENCODER_FORMAT_VERSION,
            weights: EncoderWeights::init(&config, seed),
            config,
            vocab,
            seed,
        })
    }

    /// `[CLS, ids...]` truncated to the position budget.
    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        self.vocab.encode(tokens, self.config.max_len)
    }

    /// Class logits for one narrative. This is the text stream output.
    pub fn encode(&self, tokens: &[String]) -> [f64; 2] {
        let ids = self.token_ids(tokens);
        self.encode_ids(&ids, &vec![true; ids.len()])
    }

    /// Forward pass over explicit ids; `mask[i] == false` marks padding.
    pub fn encode_ids(&self, ids: &[usize], mask: &[bool]) -> [f64; 2] {
        forward(&self.weights, &self.config, ids, mask).0
    }

    /// Pads every sequence to the batch maximum with PAD and masks the padding.
    pub fn encode_batch(&self, docs: &[Vec<String>]) -> Vec<[f64; 2]> {
        let ids: Vec<Vec<usize>> = docs.iter().map(|d| self.token_ids(d)).collect();
        let width = ids.iter().map(Vec::len).max().unwrap_or(1);
        ids.iter()
            .map(|seq| {
                let mut padded = seq.clone();
                padded.resize(width, PAD);
                let mask: Vec<bool> = (0..width).map(|i| i < seq.len()).collect();
                self.encode_ids(&padded, &mask)
            })
            .collect()
    }

    /// Loss for one labeled sequence, with its gradient added into `grads`
    /// scaled by `weight`.
    pub fn accumulate_grad(
        &self,
        ids: &[usize],
        label: RiskLabel,
        weight: f64,
        grads: &mut EncoderWeights,
    ) -> (f64, [f64; 2]) {
        let mask = vec![true; ids.len()];
        let (z, cache) = forward(&self.weights, &self.config, ids, &mask);
        let (loss, g) = logits_cross_entropy(z, label);
        backward(
            &self.weights,
            &self.config,
            &cache,
            [g[0] * weight, g[1] * weight],
            grads,
        );
        (loss, z)
    }

    pub fn loss_and_grad(&self, ids: &[usize], label: RiskLabel) -> (f64, EncoderWeights) {
        let mut grads = EncoderWeights::zeros(&self.config);
        let (loss, _) = self.accumulate_grad(ids, label, 1.0, &mut grads);
        (loss, grads)
    }

    pub fn loss(&self, ids: &[usize], label: RiskLabel) -> f64 {
        logits_cross_entropy(self.encode_ids(ids, &vec![true; ids.len()]), label).0
    }

    pub fn digest(&self) -> String {
        crate::digest::json_digest(&self.weights)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TextEncoderModel = serde_json::from_str(s)?;
        if m.format_version != ENCODER_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                kind: "encoder",
                found: m.format_version,
                expected: ENCODER_FORMAT_VERSION,
            });
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::{CLS, UNK};
    use rand::Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn small_model(d: usize, heads: usize, layers: usize, max_len: usize, seed: u64) -> TextEncoderModel {
        let vocab = Vocabulary::build(
            [toks("calm breeze damage gusts downed trees light rain hail roof")].iter(),
            100,
        );
        TextEncoderModel::new(vocab, d, heads, layers, 2 * d, max_len, seed).unwrap()
    }

    #[test]
    fn output_shape_and_softmax() {
        let m = small_model(16, 2, 2, 128, 1);
        for text in ["", "damage gusts", "unknown words only here"] {
            let z = m.encode(&toks(text));
            assert_eq!(z.len(), 2);
            let p = softmax2(z);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn positions_past_cap_have_no_influence() {
        let m = small_model(8, 2, 1, 128, 2);
        let mut doc: Vec<String> = (0..200)
            .map(|i| if i % 3 == 0 { "damage" } else { "calm" }.to_string())
            .collect();
        let a = m.encode(&doc);
        doc[150] = "hail".into();
        let b = m.encode(&doc);
        assert_eq!(a, b);
        assert_eq!(m.token_ids(&doc).len(), 128);
    }

    #[test]
    fn padding_is_invisible() {
        let m = small_model(16, 4, 2, 32, 3);
        let ids = m.token_ids(&toks("downed trees roof damage"));
        let base = m.encode_ids(&ids, &vec![true; ids.len()]);
        for pad in 1..6 {
            let mut padded = ids.clone();
            padded.extend(std::iter::repeat_n(PAD, pad));
            let mask: Vec<bool> = (0..padded.len()).map(|i| i < ids.len()).collect();
            let z = m.encode_ids(&padded, &mask);
            assert!((z[0] - base[0]).abs() < 1e-9 && (z[1] - base[1]).abs() < 1e-9);
        }
        let batch = m.encode_batch(&[toks("calm"), toks("downed trees roof damage")]);
        assert!((batch[1][0] - base[0]).abs() < 1e-9);
    }

    #[test]
    fn set_encoder_without_positions() {
        let mut m = small_model(16, 2, 2, 32, 4);
        m.weights.pos_emb.fill(0.0);
        let doc = toks("hail roof damage light rain");
        let ids = m.token_ids(&doc);
        let base = m.encode_ids(&ids, &vec![true; ids.len()]);
        let mut perm = ids.clone();
        perm[1..].reverse();
        perm.swap(1, 3);
        let z = m.encode_ids(&perm, &vec![true; perm.len()]);
        assert!((z[0] - base[0]).abs() < 1e-6 && (z[1] - base[1]).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((7, 16), |_| rng.random_range(-5.0..5.0));
        let (_, cache) = layer_norm(&x, &Array1::ones(16), &Array1::zeros(16));
        for row in cache.xhat.rows() {
            let m = row.mean().unwrap();
            let v = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let m = small_model(8, 1, 1, 16, 0);
        assert_eq!(m.token_ids(&toks("zzz")), vec![CLS, UNK]);
    }

    fn gradient_check(m: &TextEncoderModel, ids: &[usize], label: RiskLabel) -> Vec<(String, f64)> {
        let (_, grads) = m.loss_and_grad(ids, label);
        crate::optim::gradient_check(&m.weights, &grads, 1e-5, |w| {
            let mut probe = m.clone();
            probe.weights = w.clone();
            probe.loss(ids, label)
        })
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = small_model(8, 2, 1, 16, 5);
        let ids = m.token_ids(&toks("downed trees hail"));
        assert_eq!(ids.len(), 4);
        for (name, rel) in gradient_check(&m, &ids, RiskLabel::HighRisk) {
            assert!(rel < 1e-4, "{name}: relative error {rel}");
        }
    }

    #[test]
    fn serialization_round_trip() {
        let m = small_model(8, 2, 1, 16, 6);
        let back = TextEncoderModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.digest(), m.digest());
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let vocab = Vocabulary::build([toks("a")].iter(), 10);
        assert!(TextEncoderModel::new(vocab, 10, 3, 1, 20, 16, 0).is_err());
    }
}
