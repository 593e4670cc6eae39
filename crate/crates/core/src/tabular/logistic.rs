//! L2-regularized logistic regression fitted by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::config::LogisticParams;
use crate::domain::RiskLabel;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the gradient tolerance.
    pub converged: bool,
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn zeros(n_features: usize) -> Self {
        LogisticModel {
            weights: vec![0.0; n_features],
            bias: 0.0,
            iterations: 0,
            converged: false,
        }
    }

    /// `[P(Low), P(High)]` with `P(High) = sigmoid(w.x + b)`.
    pub fn predict_proba(&self, x: &[f64]) -> [f64; 2] {
        let t = self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        let p = sigmoid(t);
        [1.0 - p, p]
    }
}

/// Mean cross-entropy plus `l2/2 * |w|^2` (bias unpenalized), with gradient
/// `(dw, db)`.
pub fn logistic_loss_grad(model: &LogisticModel, x: &[Vec<f64>], y: &[RiskLabel], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; model.weights.len()];
    let mut gb = 0.0;
    for (xi, yi) in x.iter().zip(y) {
        let t = model.bias + model.weights.iter().zip(xi).map(|(w, v)| w * v).sum::<f64>();
        let target = yi.index() as f64;
        // log(1 + e^t) - target * t, computed stably
        let softplus = if t > 0.0 {
            t + (-t).exp().ln_1p()
        } else {
            t.exp().ln_1p()
        };
        loss += softplus - target * t;
        let r = sigmoid(t) - target;
        for (g, v) in gw.iter_mut().zip(xi) {
            *g += r * v;
        }
        gb += r;
    }
    loss /= n;
    gb /= n;
    for (g, w) in gw.iter_mut().zip(&model.weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * model.weights.iter().map(|w| w * w).sum::<f64>();
    (loss, gw, gb)
}

pub fn fit_logistic(x: &[Vec<f64>], y: &[RiskLabel], params: &LogisticParams) -> Result<LogisticModel> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::LengthMismatch(y.len(), x.len()));
    }
    if !(y.contains(&RiskLabel::LowRisk) && y.contains(&RiskLabel::HighRisk)) {
        return Err(Error::SingleClass);
    }
    let mut m = LogisticModel::zeros(x[0].len());
    for it in 0..params.max_iter {
        let (_, gw, gb) = logistic_loss_grad(&m, x, y, params.l2);
        let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
        m.iterations = it;
        if norm < params.tol {
            m.converged = true;
            return Ok(m);
        }
        for (w, g) in m.weights.iter_mut().zip(&gw) {
            *w -= params.lr * g;
        }
        m.bias -= params.lr * gb;
    }
    m.iterations = params.max_iter;
    Ok(m)
}
