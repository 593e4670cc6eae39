//! Domain types shared by every stage of the pipeline.
//!
//! All numeric vector layouts follow [`Feature::ALL`]: `tmpf, dwpf, relh,
//! drct, sknt, gust`.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_FEATURES: usize = 6;

/// Binary hazard risk level. `HighRisk` is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskLabel {
    LowRisk,
    HighRisk,
}

impl RiskLabel {
    pub const ALL: [RiskLabel; 2] = [RiskLabel::LowRisk, RiskLabel::HighRisk];

    /// Class index used in every 2-vector: Low = 0, High = 1.
    pub fn index(self) -> usize {
        match self {
            RiskLabel::LowRisk => 0,
            RiskLabel::HighRisk => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            RiskLabel::LowRisk
        } else {
            RiskLabel::HighRisk
        }
    }

    /// Decision rule on a positive-class probability; ties go to `HighRisk`.
    pub fn from_p_high(p_high: f64) -> Self {
        if p_high >= 0.5 {
            RiskLabel::HighRisk
        } else {
            RiskLabel::LowRisk
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskLabel::LowRisk => "low",
            RiskLabel::HighRisk => "high",
        }
    }
}

impl fmt::Display for RiskLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One of the six station attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Feature {
    Tmpf,
    Dwpf,
    Relh,
    Drct,
    Sknt,
    Gust,
}

impl Feature {
    pub const ALL: [Feature; N_FEATURES] = [
        Feature::Tmpf,
        Feature::Dwpf,
        Feature::Relh,
        Feature::Drct,
        Feature::Sknt,
        Feature::Gust,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Feature::Tmpf => "tmpf",
            Feature::Dwpf => "dwpf",
            Feature::Relh => "relh",
            Feature::Drct => "drct",
            Feature::Sknt => "sknt",
            Feature::Gust => "gust",
        }
    }

    /// Closed validity range, when the attribute has one.
    pub fn range(self) -> Option<(f64, f64)> {
        match self {
            Feature::Tmpf | Feature::Dwpf => None,
            Feature::Relh => Some((0.0, 100.0)),
            Feature::Drct => Some((0.0, 360.0)),
            Feature::Sknt | Feature::Gust => Some((0.0, f64::INFINITY)),
        }
    }
}

/// One station record. `None` in `values` is the missing marker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub station: String,
    pub timestamp: DateTime<Utc>,
    pub values: [Option<f64>; N_FEATURES],
    pub narrative: String,
    pub label: Option<RiskLabel>,
}

impl Observation {
    pub fn get(&self, f: Feature) -> Option<f64> {
        self.values[f.index()]
    }
}

/// Range and missingness check. Returns one message per offending field.
pub fn validate_observation(obs: &Observation) -> Vec<String> {
    let mut violations = Vec::new();
    for f in Feature::ALL {
        let Some(v) = obs.get(f) else { continue };
        if !v.is_finite() {
            violations.push(format!("{} is not finite", f.name()));
            continue;
        }
        match f.range() {
            Some((lo, hi)) if v < lo || v > hi => {
                if hi.is_infinite() {
                    violations.push(format!("{} out of range [{lo},∞)", f.name()));
                } else {
                    violations.push(format!("{} out of range [{lo},{hi}]", f.name()));
                }
            }
            _ => {}
        }
    }
    violations
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Self {
        Dataset { observations }
    }

    pub fn feature_names() -> [&'static str; N_FEATURES] {
        Feature::ALL.map(Feature::name)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Labels of every observation, failing on the first unlabeled one.
    pub fn labels(&self) -> Result<Vec<RiskLabel>> {
        self.observations
            .iter()
            .enumerate()
            .map(|(index, o)| o.label.ok_or(Error::Unlabeled { index }))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset::new(rows.iter().map(|&i| self.observations[i].clone()).collect())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub low: usize,
    pub high: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.low + self.high
    }

    pub fn get(&self, label: RiskLabel) -> usize {
        match label {
            RiskLabel::LowRisk => self.low,
            RiskLabel::HighRisk => self.high,
        }
    }
}

pub fn label_counts(ds: &Dataset) -> Result<LabelCounts> {
    let mut counts = LabelCounts::default();
    for label in ds.labels()? {
        match label {
            RiskLabel::LowRisk => counts.low += 1,
            RiskLabel::HighRisk => counts.high += 1,
        }
    }
    Ok(counts)
}

/// Per-sample stream outputs: forest class probabilities and encoder logits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamOutput {
    pub rf_probs: [f64; 2],
    pub text_logits: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn obs(values: [Option<f64>; 6], label: Option<RiskLabel>) -> Observation {
        Observation {
            station: "KSUX".into(),
            timestamp: Utc.with_ymd_and_hms(2023, 5, 1, 12, 0, 0).unwrap(),
            values,
            narrative: String::new(),
            label,
        }
    }

    #[test]
    fn valid_observation_has_no_violations() {
        let o = obs(
            [Some(70.0), Some(50.0), Some(50.0), Some(180.0), Some(10.0), None],
            None,
        );
        assert!(validate_observation(&o).is_empty());
    }

    #[test]
    fn relh_and_drct_ranges() {
        let mut o = obs([None; 6], None);
        o.values[Feature::Relh.index()] = Some(150.0);
        assert_eq!(validate_observation(&o), vec!["relh out of range [0,100]"]);
        o.values[Feature::Relh.index()] = None;
        o.values[Feature::Drct.index()] = Some(-5.0);
        assert_eq!(validate_observation(&o), vec!["drct out of range [0,360]"]);
    }

    #[test]
    fn negative_wind_speed_flagged() {
        let mut o = obs([None; 6], None);
        o.values[Feature::Gust.index()] = Some(-1.0);
        let v = validate_observation(&o);
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("gust"));
    }

    #[test]
    fn counts_match_split_sizes() {
        let mk = |low: usize, high: usize| {
            let mut v = vec![obs([None; 6], Some(RiskLabel::LowRisk)); low];
            v.extend(vec![obs([None; 6], Some(RiskLabel::HighRisk)); high]);
            Dataset::new(v)
        };
        assert_eq!(
            label_counts(&mk(5850, 2150)).unwrap(),
            LabelCounts { low: 5850, high: 2150 }
        );
        assert_eq!(
            label_counts(&mk(1467, 533)).unwrap(),
            LabelCounts { low: 1467, high: 533 }
        );
        assert_eq!(label_counts(&Dataset::default()).unwrap(), LabelCounts::default());
    }

    #[test]
    fn unlabeled_row_is_named() {
        let ds = Dataset::new(vec![obs([None; 6], Some(RiskLabel::LowRisk)), obs([None; 6], None)]);
        assert!(matches!(label_counts(&ds), Err(Error::Unlabeled { index: 1 })));
    }

    #[test]
    fn feature_order_is_fixed() {
        assert_eq!(
            Dataset::feature_names(),
            ["tmpf", "dwpf", "relh", "drct", "sknt", "gust"]
        );
    }

    proptest! {
        #[test]
        fn observation_serde_keeps_missing_markers(
            vals in proptest::array::uniform6(proptest::option::of(-1e6f64..1e6)),
            high in any::<bool>(),
        ) {
            let label = Some(if high { RiskLabel::HighRisk } else { RiskLabel::LowRisk });
            let o = obs(vals, label);
            let back: Observation = serde_json::from_str(&serde_json::to_string(&o).unwrap()).unwrap();
            prop_assert_eq!(back, o);
        }
    }
}
