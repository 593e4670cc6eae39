use serde::{Deserialize, Serialize};

use crate::domain::RiskLabel;
use crate::error::{Error, Result};

/// Counts with HighRisk as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(labels: &[RiskLabel], predictions: &[RiskLabel]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch(labels.len(), predictions.len()));
    }
    if labels.is_empty() {
        return Err(Error::EmptyRows);
    }
    let mut cm = ConfusionMatrix::default();
    for (y, p) in labels.iter().zip(predictions) {
        match (y, p) {
            (RiskLabel::HighRisk, RiskLabel::HighRisk) => cm.tp += 1,
            (RiskLabel::LowRisk, RiskLabel::HighRisk) => cm.fp += 1,
            (RiskLabel::LowRisk, RiskLabel::LowRisk) => cm.tn += 1,
            (RiskLabel::HighRisk, RiskLabel::LowRisk) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Metric report. `None` is the undefined marker for a zero denominator
/// and serializes as `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision_low: Option<f64>,
    pub recall_low: Option<f64>,
    pub f1_low: Option<f64>,
    pub precision_high: Option<f64>,
    pub recall_high: Option<f64>,
    pub f1_high: Option<f64>,
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub roc_auc: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub support_low: u64,
    pub support_high: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn f1(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}

impl EvalReport {
    pub fn confusion(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp,
            fp: self.fp,
            tn: self.tn,
            fn_: self.fn_,
        }
    }

    /// Metric values by field name, in report order.
    pub fn named_metrics(&self) -> [(&'static str, Option<f64>); 9] {
        [
            ("precision_low", self.precision_low),
            ("recall_low", self.recall_low),
            ("f1_low", self.f1_low),
            ("precision_high", self.precision_high),
            ("recall_high", self.recall_high),
            ("f1_high", self.f1_high),
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
            ("roc_auc", self.roc_auc),
        ]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Precision, recall and F1 for each class as positive, accuracy and
/// macro-F1. ROC-AUC needs scores and is left undefined here.
pub fn metrics(cm: &ConfusionMatrix) -> EvalReport {
    let ConfusionMatrix { tp, fp, tn, fn_ } = *cm;
    let precision_high = ratio(tp, tp + fp);
    let recall_high = ratio(tp, tp + fn_);
    // LowRisk as positive: tn are its true positives
    let precision_low = ratio(tn, tn + fn_);
    let recall_low = ratio(tn, tn + fp);
    let f1_high = f1(precision_high, recall_high);
    let f1_low = f1(precision_low, recall_low);
    EvalReport {
        precision_low,
        recall_low,
        f1_low,
        precision_high,
        recall_high,
        f1_high,
        accuracy: ratio(tp + tn, cm.total()),
        macro_f1: f1_low.zip(f1_high).map(|(a, b)| (a + b) / 2.0),
        roc_auc: None,
        tp,
        fp,
        tn,
        fn_,
        support_low: tn + fp,
        support_high: tp + fn_,
    }
}

fn class_counts(labels: &[RiskLabel]) -> (usize, usize) {
    let high = labels.iter().filter(|l| **l == RiskLabel::HighRisk).count();
    (high, labels.len() - high)
}

/// Mann–Whitney: share of (high, low) pairs where the high sample scores
/// higher, ties counted half. Computed from mid-ranks.
pub fn roc_auc(labels: &[RiskLabel], scores: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    let (n_high, n_low) = class_counts(labels);
    if n_high == 0 || n_low == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_high = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let highs = order[i..=j]
            .iter()
            .filter(|&&k| labels[k] == RiskLabel::HighRisk)
            .count();
        rank_sum_high += mid * highs as f64;
        i = j + 1;
    }
    let u = rank_sum_high - (n_high * (n_high + 1)) as f64 / 2.0;
    Ok(u / (n_high as f64 * n_low as f64))
}

/// Trapezoidal area under the empirical ROC curve, thresholds stepped
/// through tied score groups from the top.
pub fn roc_auc_trapezoid(labels: &[RiskLabel], scores: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(labels.len(), scores.len()));
    }
    let (n_high, n_low) = class_counts(labels);
    if n_high == 0 || n_low == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            match labels[order[i]] {
                RiskLabel::HighRisk => tp += 1,
                RiskLabel::LowRisk => fp += 1,
            }
            i += 1;
        }
        area += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
    }
    Ok(area / (n_high as f64 * n_low as f64))
}

/// Report from labels and High-risk scores thresholded at 0.5. ROC-AUC is
/// undefined when only one class is present.
pub fn evaluate_scores(labels: &[RiskLabel], scores: &[f64]) -> Result<EvalReport> {
    let preds: Vec<RiskLabel> = scores.iter().map(|&p| RiskLabel::from_p_high(p)).collect();
    let mut report = metrics(&confusion(labels, &preds)?);
    report.roc_auc = match roc_auc(labels, scores) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use RiskLabel::{HighRisk as H, LowRisk as L};

    fn reference_counts() -> ConfusionMatrix {
        ConfusionMatrix {
            tp: 493,
            fn_: 40,
            tn: 1467,
            fp: 0,
        }
    }

    #[test]
    fn reference_confusion_counts() {
        let mut labels = vec![H; 533];
        labels.extend(vec![L; 1467]);
        let mut preds = vec![H; 493];
        preds.extend(vec![L; 40 + 1467]);
        assert_eq!(confusion(&labels, &preds).unwrap(), reference_counts());
    }

    #[test]
    fn reference_metric_values() {
        let r = metrics(&reference_counts());
        assert_eq!(r.precision_high, Some(1.0));
        assert_abs_diff_eq!(r.recall_high.unwrap(), 0.9250, epsilon = 0.0005);
        assert_abs_diff_eq!(r.f1_high.unwrap(), 0.9610, epsilon = 0.0005);
        assert_abs_diff_eq!(r.accuracy.unwrap(), 0.98, epsilon = 1e-15);
        assert_abs_diff_eq!(r.macro_f1.unwrap(), 0.975, epsilon = 0.0015);
        assert_abs_diff_eq!(
            r.macro_f1.unwrap(),
            (2934.0 / 2974.0 + 986.0 / 1026.0) / 2.0,
            epsilon = 1e-12
        );
        assert_eq!(r.support_high + r.support_low, 2000);
    }

    #[test]
    fn small_confusions() {
        assert_eq!(
            confusion(&[L, H], &[L, H]).unwrap(),
            ConfusionMatrix {
                tp: 1,
                tn: 1,
                fp: 0,
                fn_: 0
            }
        );
        let all_high = confusion(&[L, L, H], &[H, H, H]).unwrap();
        assert_eq!((all_high.tp, all_high.fp), (1, 2));
        assert!(confusion(&[L], &[L, H]).is_err());
    }

    #[test]
    fn zero_denominators_are_undefined() {
        let r = metrics(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            tn: 5,
            fn_: 0,
        });
        assert_eq!(r.precision_high, None);
        assert_eq!(r.recall_high, None);
        assert_eq!(r.f1_high, None);
        assert_eq!(r.macro_f1, None);
        assert_eq!(r.accuracy, Some(1.0));
        let json = r.to_json().unwrap();
        assert!(json.contains("\"precision_high\": null"));
        assert!(json.contains("\"fn\": 0"));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[L, L, H, H], &[0.1, 0.2, 0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[L, H, L, H], &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[H, H, L, L], &[0.9, 0.4, 0.8, 0.1]).unwrap(), 0.75);
        assert!(matches!(roc_auc(&[H, H], &[0.1, 0.2]), Err(Error::SingleClass)));
    }

    fn pairwise_auc(scores: &[f64], labels: &[RiskLabel]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for (i, &a) in scores.iter().enumerate() {
            for (j, &b) in scores.iter().enumerate() {
                if labels[i] == H && labels[j] == L {
                    pairs += 1.0;
                    num += if a > b {
                        1.0
                    } else if a == b {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / pairs
    }

    fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<RiskLabel>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec((0u8..20).prop_map(|v| v as f64 / 20.0), n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(|(s, l)| {
                    let mut l: Vec<RiskLabel> = l.into_iter().map(|b| if b { H } else { L }).collect();
                    l[0] = H;
                    l[1] = L;
                    (s, l)
                })
        })
    }

    /// `a/b == c/d` by cross multiplication on integers.
    fn frac_eq(x: f64, num: u64, den: u64) -> bool {
        (x * den as f64 - num as f64).abs() <= 1e-9 * num.max(1) as f64
    }

    proptest! {
        #[test]
        fn auc_methods_agree((scores, labels) in scored()) {
            let mw = roc_auc(&labels, &scores).unwrap();
            prop_assert!((mw - roc_auc_trapezoid(&labels, &scores).unwrap()).abs() < 1e-12);
            prop_assert!((mw - pairwise_auc(&scores, &labels)).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_monotone_transform((scores, labels) in scored()) {
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&labels, &scores).unwrap(), roc_auc(&labels, &warped).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn metric_identities(tp in 0u64..500, fp in 0u64..500, tn in 0u64..500, fn_ in 0u64..500) {
            prop_assume!(tp + fp + tn + fn_ > 0);
            let r = metrics(&ConfusionMatrix { tp, fp, tn, fn_ });
            prop_assert!(frac_eq(r.accuracy.unwrap(), tp + tn, tp + fp + tn + fn_));
            for (name, v) in r.named_metrics() {
                if let Some(v) = v {
                    prop_assert!((0.0..=1.0).contains(&v), "{} = {}", name, v);
                }
            }
            // F1 from P and R in rationals: 2 tp / (2 tp + fp + fn)
            if let (Some(_), Some(_)) = (r.precision_high, r.recall_high) {
                prop_assert!(frac_eq(r.f1_high.unwrap(), 2 * tp, 2 * tp + fp + fn_));
            }
            if let (Some(_), Some(_)) = (r.precision_low, r.recall_low) {
                prop_assert!(frac_eq(r.f1_low.unwrap(), 2 * tn, 2 * tn + fp + fn_));
            }
            if let (Some(a), Some(b)) = (r.f1_low, r.f1_high) {
                prop_assert!((r.macro_f1.unwrap() - (a + b) / 2.0).abs() < 1e-15);
            }
            prop_assert_eq!(r.support_low + r.support_high, tp + fp + tn + fn_);
        }
    }
}
