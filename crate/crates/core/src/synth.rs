//! Synthetic observations with a known Bayes-optimal accuracy.
//!
//! Numerics are class-conditional normals in standardized units, mapped to
//! raw units per feature. Narratives are a neutral template plus either a
//! hazard or a calm phrase, with `P(hazard | High) = 0.5 + δ_text / 2` and
//! `P(hazard | Low) = 0.5 - δ_text / 2`.

use chrono::{Duration, TimeZone, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{Dataset, Feature, Observation, RiskLabel, N_FEATURES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    /// Separation between class means on each informative feature, in σ.
    pub delta_num: f64,
    /// Keyword emission probability gap.
    pub delta_text: f64,
    pub pi_high: f64,
    pub seed: u64,
    /// Route each sample's signal to exactly one stream: numerics with a
    /// neutral narrative, or a keyword narrative with noise numerics.
    pub complementary: bool,
    pub informative: Vec<Feature>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 10_000,
            delta_num: 3.0,
            delta_text: 0.8,
            pi_high: 0.5,
            seed: 0,
            complementary: false,
            informative: vec![Feature::Sknt],
        }
    }
}

const NEUTRAL: [&str; 6] = [
    "observer filed a routine report from the station",
    "conditions noted during the afternoon observation",
    "report received from a spotter near the county line",
    "automated station entry reviewed by the forecaster",
    "evening summary logged for the area",
    "morning update submitted by local officials",
];

const HAZARD: [&str; 4] = [
    "damaging gusts downed trees",
    "roof damage and power lines down",
    "severe winds toppled poles",
    "hail and destructive gusts",
];

const CALM: [&str; 4] = [
    "light breeze and clear skies",
    "calm winds with no damage",
    "quiet weather without impacts",
    "gentle winds under fair skies",
];

/// Standardized-unit to raw-unit map `(center, scale)` per feature.
fn raw_scale(f: Feature) -> (f64, f64) {
    match f {
        Feature::Tmpf => (70.0, 10.0),
        Feature::Dwpf => (50.0, 10.0),
        Feature::Relh => (50.0, 10.0),
        Feature::Drct => (180.0, 30.0),
        Feature::Sknt => (15.0, 2.5),
        Feature::Gust => (25.0, 4.0),
    }
}

fn to_raw(f: Feature, z: f64) -> f64 {
    let (c, s) = raw_scale(f);
    let v = c + s * z;
    match f.range() {
        Some((lo, hi)) => v.clamp(lo, hi),
        None => v,
    }
}

impl SynthSpec {
    fn check(&self) -> Result<()> {
        if !(self.pi_high > 0.0 && self.pi_high < 1.0) {
            return Err(Error::UnsupportedSpec(format!("pi_high {} not in (0,1)", self.pi_high)));
        }
        if !(0.0..=1.0).contains(&self.delta_text) {
            return Err(Error::UnsupportedSpec(format!(
                "delta_text {} not in [0,1]",
                self.delta_text
            )));
        }
        if !(self.delta_num >= 0.0 && self.delta_num.is_finite()) {
            return Err(Error::UnsupportedSpec(format!(
                "delta_num {} must be finite and ≥ 0",
                self.delta_num
            )));
        }
        Ok(())
    }

    fn is_informative(&self, f: Feature) -> bool {
        self.informative.contains(&f)
    }
}

pub fn generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.check()?;
    if spec.n < 2 {
        return Err(Error::InvalidParam("synthetic datasets need n ≥ 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let start = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    let p_hazard = |y: RiskLabel| match y {
        RiskLabel::HighRisk => 0.5 + spec.delta_text / 2.0,
        RiskLabel::LowRisk => 0.5 - spec.delta_text / 2.0,
    };
    let observations = (0..spec.n)
        .map(|i| {
            let label = if rng.random_bool(spec.pi_high) {
                RiskLabel::HighRisk
            } else {
                RiskLabel::LowRisk
            };
            let numeric_signal = !spec.complementary || rng.random_bool(0.5);
            let text_signal = !spec.complementary || !numeric_signal;
            let sign = if label == RiskLabel::HighRisk { 1.0 } else { -1.0 };
            let mut values = [None; N_FEATURES];
            for f in Feature::ALL {
                let mut z: f64 = rng.sample(StandardNormal);
                if numeric_signal && spec.is_informative(f) {
                    z += sign * spec.delta_num / 2.0;
                }
                values[f.index()] = Some(to_raw(f, z));
            }
            let mut narrative = NEUTRAL[rng.random_range(0..NEUTRAL.len())].to_string();
            if text_signal {
                let phrases = if rng.random_bool(p_hazard(label)) {
                    &HAZARD
                } else {
                    &CALM
                };
                narrative.push_str(", ");
                narrative.push_str(phrases[rng.random_range(0..phrases.len())]);
            }
            narrative.push('.');
            Observation {
                station: "KSUX".into(),
                timestamp: start + Duration::hours(i as i64),
                values,
                narrative,
                label: Some(label),
            }
        })
        .collect();
    Ok(Dataset::new(observations))
}

fn phi(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Bayes accuracy when the numeric statistic (Mahalanobis separation
/// `delta`) and a keyword outcome with likelihoods `(p_k_high, p_k_low)`
/// are combined. Outcomes are enumerated by the caller.
fn gaussian_with_evidence(pi: f64, delta: f64, outcomes: &[(f64, f64)]) -> f64 {
    outcomes
        .iter()
        .map(|&(ph, pl)| {
            let mass_h = pi * ph;
            let mass_l = (1.0 - pi) * pl;
            if delta == 0.0 || mass_h == 0.0 || mass_l == 0.0 {
                return mass_h.max(mass_l);
            }
            // decide High when the LDA statistic exceeds c
            let c = (mass_l / mass_h).ln() / delta;
            mass_h * phi(delta / 2.0 - c) + mass_l * phi(delta / 2.0 + c)
        })
        .sum()
}

/// Closed-form optimal accuracy for the generator.
pub fn bayes_accuracy(spec: &SynthSpec) -> Result<f64> {
    spec.check()?;
    let pi = spec.pi_high;
    let delta = spec.delta_num * (spec.informative.len() as f64).sqrt();
    let ph = 0.5 + spec.delta_text / 2.0;
    let pl = 0.5 - spec.delta_text / 2.0;
    let keyword = [(ph, pl), (1.0 - ph, 1.0 - pl)];
    if spec.complementary {
        // the narrative reveals the routing: keyword present or not
        let numeric_half = gaussian_with_evidence(pi, delta, &[(1.0, 1.0)]);
        let text_half = gaussian_with_evidence(pi, 0.0, &keyword);
        Ok(0.5 * numeric_half + 0.5 * text_half)
    } else {
        Ok(gaussian_with_evidence(pi, delta, &keyword))
    }
}
