//! Station CSV ingestion, missing-value handling, standardization and
//! train/test and stratified k-fold splitting.
//!
//! The CSV schema is an ASOS-style export extended with a narrative and a
//! label column:
//!
//! ```text
//! station,valid,tmpf,dwpf,relh,drct,sknt,gust,narrative,label
//! KSUX,2023-05-01T12:00Z,85.0,60.0,43.0,270,25,41,"Extreme gusts caused significant property damage.",high
//! ```
//!
//! `M` or an empty field is the missing marker for numerics. The label may
//! be empty for unlabeled rows.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Feature, Observation, RiskLabel, N_FEATURES};
use crate::error::{Error, Result};

pub const REQUIRED_COLUMNS: [&str; 10] = [
    "station",
    "valid",
    "tmpf",
    "dwpf",
    "relh",
    "drct",
    "sknt",
    "gust",
    "narrative",
    "label",
];

const TIMESTAMP_OUT: &str = "%Y-%m-%dT%H:%MZ";

pub fn parse_csv_path(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file)
}

pub fn parse_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);

    let missing: Vec<String> = REQUIRED_COLUMNS
        .iter()
        .filter(|c| position(c).is_none())
        .map(|c| c.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingColumns(missing));
    }
    let col = |name: &str| position(name).unwrap();
    let station_col = col("station");
    let valid_col = col("valid");
    let feature_cols = Feature::ALL.map(|f| col(f.name()));
    let narrative_col = col("narrative");
    let label_col = col("label");

    let mut observations = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");

        let mut values = [None; N_FEATURES];
        for (f, &c) in Feature::ALL.iter().zip(&feature_cols) {
            values[f.index()] = parse_numeric(field(c), row, f.name())?;
        }
        let raw_ts = field(valid_col);
        let timestamp = parse_timestamp(raw_ts).ok_or_else(|| Error::BadTimestamp {
            row,
            value: raw_ts.to_string(),
        })?;
        observations.push(Observation {
            station: field(station_col).trim().to_string(),
            timestamp,
            values,
            narrative: field(narrative_col).to_string(),
            label: parse_label(field(label_col), row)?,
        });
    }
    Ok(Dataset::new(observations))
}

fn parse_numeric(raw: &str, row: usize, field: &'static str) -> Result<Option<f64>> {
    let s = raw.trim();
    if s.is_empty() || s == "M" {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::BadNumeric {
            row,
            field,
            value: raw.to_string(),
        }),
    }
}

fn parse_label(raw: &str, row: usize) -> Result<Option<RiskLabel>> {
    let s = raw.trim();
    if s.is_empty() {
        return Ok(None);
    }
    match s.to_ascii_lowercase().as_str() {
        "low" => Ok(Some(RiskLabel::LowRisk)),
        "high" => Ok(Some(RiskLabel::HighRisk)),
        _ => Err(Error::BadLabel {
            row,
            token: raw.to_string(),
        }),
    }
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let s = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    [
        "%Y-%m-%dT%H:%MZ",
        "%Y-%m-%dT%H:%M:%SZ",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d %H:%M:%S",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
    .map(|t| t.and_utc())
}

/// Writes `ds` in the schema [`parse_csv`] reads. Missing numerics become `M`.
pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REQUIRED_COLUMNS)?;
    for o in &ds.observations {
        let mut rec = vec![o.station.clone(), o.timestamp.format(TIMESTAMP_OUT).to_string()];
        rec.extend(o.values.iter().map(|v| match v {
            Some(x) => format!("{x}"),
            None => "M".to_string(),
        }));
        rec.push(o.narrative.clone());
        rec.push(o.label.map(|l| l.as_str().to_string()).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Per-feature means used to fill missing numerics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeStats {
    pub means: [f64; N_FEATURES],
    pub fitted_on: usize,
}

impl ImputeStats {
    pub fn fit(ds: &Dataset, source_rows: &[usize]) -> Result<Self> {
        if source_rows.is_empty() {
            return Err(Error::EmptyRows);
        }
        let mut means = [0.0; N_FEATURES];
        for f in Feature::ALL {
            let present: Vec<f64> = source_rows.iter().filter_map(|&r| ds.observations[r].get(f)).collect();
            if present.is_empty() {
                return Err(Error::FeatureAllMissing(f.name()));
            }
            means[f.index()] = present.iter().sum::<f64>() / present.len() as f64;
        }
        Ok(ImputeStats {
            means,
            fitted_on: source_rows.len(),
        })
    }

    pub fn fill(&self, obs: &Observation) -> Observation {
        let mut o = obs.clone();
        for (v, m) in o.values.iter_mut().zip(self.means) {
            v.get_or_insert(m);
        }
        o
    }

    /// Copy of every observation with missing numerics filled.
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        Dataset::new(ds.observations.iter().map(|o| self.fill(o)).collect())
    }
}

/// Mean imputation of `rows` with statistics taken from `stats_source_rows`.
pub fn impute(ds: &Dataset, rows: &[usize], stats_source_rows: &[usize]) -> Result<Dataset> {
    let stats = ImputeStats::fit(ds, stats_source_rows)?;
    Ok(Dataset::new(
        rows.iter().map(|&r| stats.fill(&ds.observations[r])).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: [f64; N_FEATURES],
    /// Population standard deviation; 1 for zero-variance features.
    pub std: [f64; N_FEATURES],
    pub zero_variance: [bool; N_FEATURES],
    pub fitted_on: usize,
}

impl StandardizationStats {
    pub fn transform(&self, values: &[Option<f64>; N_FEATURES]) -> [f64; N_FEATURES] {
        std::array::from_fn(|f| match values[f] {
            Some(v) => (v - self.mean[f]) / self.std[f],
            None => 0.0,
        })
    }

    pub fn digest(&self) -> String {
        crate::digest::json_digest(self)
    }
}

pub fn fit_standardizer(ds: &Dataset, rows: &[usize]) -> Result<StandardizationStats> {
    if rows.is_empty() {
        return Err(Error::EmptyRows);
    }
    let n = rows.len() as f64;
    let mut mean = [0.0; N_FEATURES];
    let mut std = [1.0; N_FEATURES];
    let mut zero_variance = [false; N_FEATURES];
    for f in Feature::ALL {
        let column: Vec<f64> = rows
            .iter()
            .map(|&r| {
                ds.observations[r]
                    .get(f)
                    .ok_or_else(|| Error::InvalidParam(format!("row {r}: {} missing; impute first", f.name())))
            })
            .collect::<Result<_>>()?;
        let m = column.iter().sum::<f64>() / n;
        let var = column.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        let i = f.index();
        mean[i] = m;
        if var.sqrt() <= 1e-12 * m.abs().max(1.0) {
            zero_variance[i] = true;
        } else {
            std[i] = var.sqrt();
        }
    }
    Ok(StandardizationStats {
        mean,
        std,
        zero_variance,
        fitted_on: rows.len(),
    })
}

pub fn apply_standardizer(stats: &StandardizationStats, ds: &Dataset, rows: &[usize]) -> Vec<[f64; N_FEATURES]> {
    rows.iter()
        .map(|&r| stats.transform(&ds.observations[r].values))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Fold id per dataset row, when folds were requested.
    pub fold_assignments: Option<Vec<usize>>,
}

impl SplitSpec {
    pub fn n_folds(&self) -> usize {
        self.fold_assignments
            .as_ref()
            .map(|f| f.iter().max().map_or(0, |m| m + 1))
            .unwrap_or(0)
    }

    /// `(train, test)` rows for one fold.
    pub fn fold(&self, k: usize) -> (Vec<usize>, Vec<usize>) {
        let folds = self.fold_assignments.as_deref().unwrap_or(&[]);
        let (test, train): (Vec<usize>, Vec<usize>) = (0..folds.len()).partition(|&i| folds[i] == k);
        (train, test)
    }
}

pub fn train_test_split(n: usize, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n as f64 * train_fraction).round() as usize;
    let mut train_indices = perm[..n_train].to_vec();
    let mut test_indices = perm[n_train..].to_vec();
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitSpec {
        train_indices,
        test_indices,
        fold_assignments: None,
    })
}

/// Stratified fold assignment over a fully labeled dataset.
///
/// Each class is shuffled and dealt round-robin; the next class continues
/// where the previous one stopped so overall fold sizes also differ by at
/// most one.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<SplitSpec> {
    if k < 2 {
        return Err(Error::TooFewFolds);
    }
    let labels = ds.labels()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0usize; labels.len()];
    let mut next = 0usize;
    for class in RiskLabel::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::ClassTooSmall(class.as_str(), k));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(SplitSpec {
        train_indices: (0..labels.len()).collect(),
        test_indices: Vec::new(),
        fold_assignments: Some(folds),
    })
}
