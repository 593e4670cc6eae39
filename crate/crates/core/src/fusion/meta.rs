//! Fused vector and the feedforward meta-classifier on top of it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::RiskLabel;
use crate::error::{Error, Result};
use crate::optim::ParamSet;

pub const FUSED_DIM: usize = 4;
const CLAMP: f64 = 1e-12;

/// `[z_rf (probabilities); z_text (logits)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusedVector {
    pub values: [f64; FUSED_DIM],
}

pub fn fuse(z_rf: [f64; 2], z_text: [f64; 2]) -> Result<FusedVector> {
    let in_unit = z_rf.iter().all(|p| (0.0..=1.0).contains(p));
    if !in_unit || (z_rf[0] + z_rf[1] - 1.0).abs() > 1e-6 {
        return Err(Error::NotAProbability(z_rf));
    }
    Ok(FusedVector {
        values: [z_rf[0], z_rf[1], z_text[0], z_text[1]],
    })
}

/// `hidden = relu(W1 z + b1)`, `logits = W2 hidden + b2`. Weights are row-major:
/// `w1` is `hidden x 4`, `w2` is `2 x hidden`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaClassifier {
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetaOutput {
    pub logits: [f64; 2],
    pub p_high: f64,
}

impl MetaClassifier {
    pub fn zeros(hidden: usize) -> Self {
        MetaClassifier {
            hidden,
            w1: vec![0.0; hidden * FUSED_DIM],
            b1: vec![0.0; hidden],
            w2: vec![0.0; 2 * hidden],
            b2: vec![0.0; 2],
        }
    }

    /// He-normal first layer, Glorot-normal head, zero biases.
    pub fn init(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Self::zeros(hidden);
        let n1 = Normal::new(0.0, (2.0 / FUSED_DIM as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (2.0 / (hidden + 2) as f64).sqrt()).unwrap();
        g.w1.iter_mut().for_each(|w| *w = n1.sample(&mut rng));
        g.w2.iter_mut().for_each(|w| *w = n2.sample(&mut rng));
        g
    }

    pub fn n_params(&self) -> usize {
        ParamSet::n_params(self)
    }

    pub fn digest(&self) -> String {
        crate::digest::json_digest(self)
    }
}

impl ParamSet for MetaClassifier {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w1".into(), &self.w1),
            ("b1".into(), &self.b1),
            ("w2".into(), &self.w2),
            ("b2".into(), &self.b2),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden-layer pre-activations.
pub fn hidden_pre(g: &MetaClassifier, z: &FusedVector) -> Vec<f64> {
    (0..g.hidden)
        .map(|j| {
            let row = &g.w1[j * FUSED_DIM..(j + 1) * FUSED_DIM];
            g.b1[j] + row.iter().zip(&z.values).map(|(w, x)| w * x).sum::<f64>()
        })
        .collect()
}

pub fn meta_forward(g: &MetaClassifier, z: &FusedVector) -> MetaOutput {
    let h: Vec<f64> = hidden_pre(g, z).into_iter().map(|a| a.max(0.0)).collect();
    let logit = |k: usize| {
        g.b2[k]
            + g.w2[k * g.hidden..(k + 1) * g.hidden]
                .iter()
                .zip(&h)
                .map(|(w, x)| w * x)
                .sum::<f64>()
    };
    let logits = [logit(0), logit(1)];
    MetaOutput {
        logits,
        // softmax over two logits, written as a sigmoid of their difference
        p_high: sigmoid(logits[1] - logits[0]),
    }
}

/// Binary cross-entropy on `p_high`, clamped to `[1e-12, 1 - 1e-12]`.
pub fn cross_entropy(p_high: f64, y: RiskLabel) -> f64 {
    let p = p_high.clamp(CLAMP, 1.0 - CLAMP);
    match y {
        RiskLabel::HighRisk => -p.ln(),
        RiskLabel::LowRisk => -(1.0 - p).ln(),
    }
}

/// Gradient of `out = c . logits` back to parameters and input, for a given
/// upstream `c = d out / d logits`.
fn backprop(
    g: &MetaClassifier,
    z: &FusedVector,
    dlogits: [f64; 2],
    grads: Option<&mut MetaClassifier>,
) -> [f64; FUSED_DIM] {
    let pre = hidden_pre(g, z);
    let dh: Vec<f64> = (0..g.hidden)
        .map(|j| {
            if pre[j] > 0.0 {
                dlogits[0] * g.w2[j] + dlogits[1] * g.w2[g.hidden + j]
            } else {
                0.0
            }
        })
        .collect();
    if let Some(gr) = grads {
        for k in 0..2 {
            gr.b2[k] += dlogits[k];
            for j in 0..g.hidden {
                gr.w2[k * g.hidden + j] += dlogits[k] * pre[j].max(0.0);
            }
        }
        for j in 0..g.hidden {
            gr.b1[j] += dh[j];
            for i in 0..FUSED_DIM {
                gr.w1[j * FUSED_DIM + i] += dh[j] * z.values[i];
            }
        }
    }
    std::array::from_fn(|i| (0..g.hidden).map(|j| dh[j] * g.w1[j * FUSED_DIM + i]).sum())
}

/// Loss and gradients of `cross_entropy(meta_forward(g, z).p_high, y)` w.r.t.
/// the parameters (added into `grads`, scaled by `weight`) and the input.
pub fn meta_loss_grad(
    g: &MetaClassifier,
    z: &FusedVector,
    y: RiskLabel,
    weight: f64,
    grads: &mut MetaClassifier,
) -> (f64, [f64; FUSED_DIM]) {
    let out = meta_forward(g, z);
    let loss = cross_entropy(out.p_high, y);
    let p = out.p_high;
    // d loss / d (l1 - l0), zero inside the clamp region
    let dd = if p < CLAMP || p > 1.0 - CLAMP {
        0.0
    } else {
        match y {
            RiskLabel::HighRisk => p - 1.0,
            RiskLabel::LowRisk => p,
        }
    };
    let mut scaled = MetaClassifier::zeros(g.hidden);
    let dinput = backprop(g, z, [-dd, dd], Some(&mut scaled));
    for (acc, s) in grads.tensors_mut().into_iter().zip(scaled.tensors()) {
        for (a, v) in acc.iter_mut().zip(s.1) {
            *a += weight * v;
        }
    }
    (loss, dinput)
}

/// `d p_high / d z` at `z`.
pub fn p_high_input_grad(g: &MetaClassifier, z: &FusedVector) -> [f64; FUSED_DIM] {
    let p = meta_forward(g, z).p_high;
    let s = p * (1.0 - p);
    backprop(g, z, [-s, s], None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{gradient_check, relative_error};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn concatenation_order() {
        assert_eq!(fuse([0.7, 0.3], [1.2, -0.5]).unwrap().values, [0.7, 0.3, 1.2, -0.5]);
        assert_eq!(fuse([1.0, 0.0], [0.0, 0.0]).unwrap().values, [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(fuse([0.6, 0.6], [0.0, 0.0]), Err(Error::NotAProbability(_))));
    }

    #[test]
    fn zero_network_is_indifferent() {
        let g = MetaClassifier::zeros(16);
        let out = meta_forward(&g, &fuse([0.2, 0.8], [3.0, -1.0]).unwrap());
        assert_eq!(out.logits, [0.0, 0.0]);
        assert_eq!(out.p_high, 0.5);
        assert_eq!(p_high_input_grad(&g, &fuse([0.2, 0.8], [3.0, -1.0]).unwrap()), [0.0; 4]);
    }

    #[test]
    fn lightweight_head() {
        assert_eq!(MetaClassifier::init(16, 0).n_params(), 4 * 16 + 16 + 16 * 2 + 2);
    }

    fn picker() -> MetaClassifier {
        // one live hidden unit reading z_rf[High]; head maps it to the High logit
        let mut g = MetaClassifier::zeros(1);
        g.w1 = vec![0.0, 1.0, 0.0, 0.0];
        g.w2 = vec![-2.0, 2.0];
        g
    }

    #[test]
    fn monotone_in_forest_high_probability() {
        let g = picker();
        let ps: Vec<f64> = (0..=10)
            .map(|i| {
                let p = i as f64 / 10.0;
                meta_forward(&g, &fuse([1.0 - p, p], [0.0, 0.0]).unwrap()).p_high
            })
            .collect();
        assert!(ps.windows(2).all(|w| w[1] > w[0]), "{ps:?}");
        let grad = p_high_input_grad(&g, &fuse([0.4, 0.6], [0.0, 0.0]).unwrap());
        assert!(grad[1] > 0.0);
    }

    #[test]
    fn cross_entropy_values() {
        assert_abs_diff_eq!(
            cross_entropy(0.5, RiskLabel::HighRisk),
            std::f64::consts::LN_2,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            cross_entropy(0.9, RiskLabel::LowRisk),
            2.302585092994046,
            epsilon = 1e-12
        );
        assert!(cross_entropy(1.0, RiskLabel::HighRisk) < 1e-11);
        assert!(cross_entropy(0.0, RiskLabel::HighRisk).is_finite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradients_match_finite_differences(seed in 0u64..10_000, p in 0.0f64..1.0, t0 in -3.0f64..3.0, t1 in -3.0f64..3.0, high in any::<bool>()) {
            let g = MetaClassifier::init(16, seed);
            let z = fuse([1.0 - p, p], [t0, t1]).unwrap();
            let y = if high { RiskLabel::HighRisk } else { RiskLabel::LowRisk };
            let mut grads = MetaClassifier::zeros(16);
            let (_, dz) = meta_loss_grad(&g, &z, y, 1.0, &mut grads);
            let h = 1e-4;
            let loss = |g: &MetaClassifier, z: &FusedVector| cross_entropy(meta_forward(g, z).p_high, y);
            // ReLU kinks make FD meaningless within h of a hinge
            let pre = hidden_pre(&g, &z);
            prop_assume!(pre.iter().all(|a| a.abs() > 1e-2));
            for (name, rel) in gradient_check(&g, &grads, h, |g| loss(g, &z)) {
                prop_assert!(rel < 1e-6, "{name}: {rel}");
            }
            let numeric_z: Vec<f64> = (0..4).map(|i| {
                let mut zp = z; zp.values[i] += h;
                let mut zm = z; zm.values[i] -= h;
                (loss(&g, &zp) - loss(&g, &zm)) / (2.0 * h)
            }).collect();
            prop_assert!(relative_error(&dz, &numeric_z) < 1e-6);
        }

        #[test]
        fn softmax_sums_to_one(seed in 0u64..1000, t0 in -50.0f64..50.0, t1 in -50.0f64..50.0) {
            let out = meta_forward(&MetaClassifier::init(16, seed), &fuse([0.5, 0.5], [t0, t1]).unwrap());
            let e0 = (out.logits[0] - out.logits[0].max(out.logits[1])).exp();
            let e1 = (out.logits[1] - out.logits[0].max(out.logits[1])).exp();
            prop_assert!((e1 / (e0 + e1) - out.p_high).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&out.p_high));
        }
    }
}
