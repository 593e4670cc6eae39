//! AdamW with decoupled weight decay over any flat parameter collection.

use serde::{Deserialize, Serialize};

/// A model whose parameters can be viewed as named flat tensors, in a fixed
/// order. Gradients use the same type.
pub trait ParamSet {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// L2 relative error `|a - n| / max(|a|, |n|)`; absolute when both norms
/// are below 1e-8, where central differences are pure roundoff.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let d: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let s = norm(a).max(norm(n));
    if s < 1e-8 {
        d
    } else {
        d / s
    }
}

/// Per-tensor relative error between `analytic` and central differences of
/// `loss` around `params` with step `h`.
pub fn gradient_check<P, F>(params: &P, analytic: &P, h: f64, loss: F) -> Vec<(String, f64)>
where
    P: ParamSet + Clone,
    F: Fn(&P) -> f64,
{
    let mut probe = params.clone();
    analytic
        .tensors()
        .into_iter()
        .enumerate()
        .map(|(ti, (name, a))| {
            let numeric: Vec<f64> = (0..a.len())
                .map(|i| {
                    let orig = probe.tensors_mut()[ti][i];
                    probe.tensors_mut()[ti][i] = orig + h;
                    let lp = loss(&probe);
                    probe.tensors_mut()[ti][i] = orig - h;
                    let lm = loss(&probe);
                    probe.tensors_mut()[ti][i] = orig;
                    (lp - lm) / (2.0 * h)
                })
                .collect();
            (name, relative_error(a, &numeric))
        })
        .collect()
}

/// One row of a training curve. Validation columns are absent when no
/// held-out rows were supplied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new<P: ParamSet>(config: AdamWConfig, params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        AdamW {
            config,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update: `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let grads = grads.tensors();
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Vec2(Vec<f64>);

    impl ParamSet for Vec2 {
        fn tensors(&self) -> Vec<(String, &[f64])> {
            vec![("x".into(), &self.0)]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = Vec2(vec![1.0, -2.0]);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.0), &p);
        opt.step(&mut p, &Vec2(vec![3.0, -0.5]));
        assert!((p.0[0] - 0.9).abs() < 1e-6);
        assert!((p.0[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn decay_is_decoupled_from_gradient() {
        let mut p = Vec2(vec![2.0]);
        let mut opt = AdamW::new(AdamWConfig::new(0.1, 0.5), &p);
        opt.step(&mut p, &Vec2(vec![0.0]));
        // zero gradient: only the decay term acts
        assert!((p.0[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut p = Vec2(vec![5.0, -3.0]);
        let mut opt = AdamW::new(AdamWConfig::new(0.05, 0.0), &p);
        for _ in 0..2000 {
            let g = Vec2(p.0.iter().map(|x| 2.0 * x).collect());
            opt.step(&mut p, &g);
        }
        assert!(p.0.iter().all(|x| x.abs() < 1e-2), "{:?}", p.0);
        assert_eq!(opt.steps(), 2000);
    }
}
