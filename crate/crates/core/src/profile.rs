//! Golden-run ingestion and baseline extraction.
//!
//! Samples arrive as already-aggregated per-second throughput in a CSV file
//! with the exact header
//! `run_id,group,transaction,phase,t_seconds,throughput_tps`.
//! Baselines are keyed by `(group, transaction, phase)` and persisted as a
//! versioned JSON document.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::BaselineStats;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 6] = [
    "run_id",
    "group",
    "transaction",
    "phase",
    "t_seconds",
    "throughput_tps",
];

pub const PROFILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StreamKey {
    pub group: String,
    pub transaction: String,
    pub phase: String,
}

impl StreamKey {
    pub fn new(
        group: impl Into<String>,
        transaction: impl Into<String>,
        phase: impl Into<String>,
    ) -> Self {
        Self {
            group: group.into(),
            transaction: transaction.into(),
            phase: phase.into(),
        }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.group, self.transaction, self.phase)
    }
}

impl std::str::FromStr for StreamKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts.as_slice() {
            [g, t, p] => Ok(StreamKey::new(*g, *t, *p)),
            _ => Err(Error::InvalidConfig(format!(
                "stream key {s:?} must look like group/transaction/phase"
            ))),
        }
    }
}

/// One throughput observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub group: String,
    pub transaction: String,
    pub phase: String,
    /// Seconds since run start.
    pub t: f64,
    /// Transactions per second.
    pub value: f64,
}

impl Sample {
    pub fn key(&self) -> StreamKey {
        StreamKey::new(&self.group, &self.transaction, &self.phase)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunRole {
    #[default]
    Golden,
    Faulted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Run {
    pub run_id: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSet {
    pub runs: Vec<Run>,
    pub role: RunRole,
}

impl RunSet {
    pub fn new(runs: Vec<Run>, role: RunRole) -> Result<Self> {
        let mut seen = HashSet::new();
        for run in &runs {
            if !seen.insert(run.run_id.as_str()) {
                return Err(Error::DuplicateRun(run.run_id.clone()));
            }
        }
        Ok(Self { runs, role })
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn sample_count(&self) -> usize {
        self.runs.iter().map(|r| r.samples.len()).sum()
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.runs.iter().flat_map(|r| r.samples.iter())
    }

    /// Samples of one stream across all runs, in run order.
    pub fn values_for(&self, key: &StreamKey) -> Vec<f64> {
        self.samples()
            .filter(|s| s.group == key.group && s.transaction == key.transaction && s.phase == key.phase)
            .map(|s| s.value)
            .collect()
    }

    /// Keeps only samples whose transaction is in `include` (when given) and
    /// not in `exclude`.
    pub fn filter_transactions(&mut self, include: Option<&[String]>, exclude: &[String]) {
        for run in &mut self.runs {
            run.samples.retain(|s| {
                include.is_none_or(|inc| inc.contains(&s.transaction))
                    && !exclude.contains(&s.transaction)
            });
        }
    }
}

/// Reads samples from a CSV file.
pub fn load_samples(path: impl AsRef<Path>) -> Result<RunSet> {
    read_samples(BufReader::new(File::open(path)?))
}

/// Reads samples from any CSV source. Runs are ordered by `run_id` and
/// samples within a run by time (stable for equal times).
pub fn read_samples<R: Read>(reader: R) -> Result<RunSet> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let header = rdr.headers()?.clone();
    if header.is_empty() {
        return Ok(RunSet::default());
    }
    for (i, col) in header.iter().enumerate() {
        if i >= CSV_HEADER.len() || CSV_HEADER[i] != col {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected column {col:?} at position {}", i + 1),
            });
        }
    }
    if header.len() != CSV_HEADER.len() {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }

    let mut by_run: BTreeMap<String, Vec<Sample>> = BTreeMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let parse = |i: usize| -> Result<f64> {
            field(i).parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("{} is not a number: {:?}", CSV_HEADER[i], field(i)),
            })
        };
        let t = parse(4)?;
        let value = parse(5)?;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("t_seconds must be finite and >= 0, got {t}"),
            });
        }
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Parse {
                line,
                message: format!("throughput_tps must be finite and >= 0, got {value}"),
            });
        }
        for (i, name) in CSV_HEADER.iter().enumerate().take(4) {
            if field(i).is_empty() {
                return Err(Error::Parse {
                    line,
                    message: format!("{name} is empty"),
                });
            }
        }
        by_run.entry(field(0).to_string()).or_default().push(Sample {
            group: field(1).to_string(),
            transaction: field(2).to_string(),
            phase: field(3).to_string(),
            t,
            value,
        });
    }

    let runs = by_run
        .into_iter()
        .map(|(run_id, mut samples)| {
            samples.sort_by(|a, b| a.t.total_cmp(&b.t));
            Run { run_id, samples }
        })
        .collect();
    Ok(RunSet {
        runs,
        role: RunRole::Golden,
    })
}

pub fn write_samples<W: Write>(writer: W, runs: &RunSet) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(CSV_HEADER)?;
    for run in &runs.runs {
        for s in &run.samples {
            wtr.write_record([
                run.run_id.as_str(),
                &s.group,
                &s.transaction,
                &s.phase,
                &s.t.to_string(),
                &s.value.to_string(),
            ])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    #[default]
    Profile,
    Validation,
}

/// Per-stream baselines extracted from golden runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineProfile {
    pub entries: BTreeMap<StreamKey, BaselineStats<f64>>,
    pub split_tag: SplitTag,
}

impl BaselineProfile {
    pub fn get(&self, key: &StreamKey) -> Option<&BaselineStats<f64>> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Mean and (n - 1) standard deviation per stream.
pub fn compute_baseline(runs: &RunSet) -> Result<BaselineProfile> {
    let mut grouped: BTreeMap<StreamKey, Vec<f64>> = BTreeMap::new();
    for s in runs.samples() {
        grouped.entry(s.key()).or_default().push(s.value);
    }
    let mut entries = BTreeMap::new();
    for (key, values) in grouped {
        let stats = summarize(&values).map_err(|e| match e {
            Error::ConstantSeries { .. } => Error::ConstantSeries {
                key: key.to_string(),
            },
            Error::InsufficientSamples { have, need, .. } => Error::InsufficientSamples {
                key: key.to_string(),
                have,
                need,
            },
            other => other,
        })?;
        entries.insert(key, stats);
    }
    Ok(BaselineProfile {
        entries,
        split_tag: SplitTag::Profile,
    })
}

/// Two-pass mean and sample standard deviation with compensated sums.
pub fn summarize(values: &[f64]) -> Result<BaselineStats<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            key: String::new(),
            have: n,
            need: 2,
        });
    }
    let mean = neumaier_sum(values.iter().copied()) / n as f64;
    let ss = neumaier_sum(values.iter().map(|&x| (x - mean) * (x - mean)));
    let sigma = (ss / (n as f64 - 1.0)).sqrt();
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::ConstantSeries { key: String::new() });
    }
    Ok(BaselineStats {
        mu: mean,
        sigma,
        n: n as u64,
    })
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Seeded run-level split into (profile, validation). The profile side gets
/// `round(ratio * n)` runs, clamped so both sides are non-empty.
pub fn split_runs(runs: &RunSet, ratio: f64, seed: u64) -> Result<(RunSet, RunSet)> {
    let n = runs.len();
    if n < 2 {
        return Err(Error::TooFewRuns(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n_profile = ((ratio * n as f64).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = vec![false; n];
    for &i in &order[..n_profile] {
        chosen[i] = true;
    }

    let (mut profile, mut validation) = (Vec::new(), Vec::new());
    for (run, pick) in runs.runs.iter().zip(chosen) {
        if pick {
            profile.push(run.clone());
        } else {
            validation.push(run.clone());
        }
    }
    Ok((
        RunSet {
            runs: profile,
            role: runs.role,
        },
        RunSet {
            runs: validation,
            role: runs.role,
        },
    ))
}

#[derive(Serialize, Deserialize)]
struct ProfileDocument {
    version: u32,
    split_tag: SplitTag,
    entries: Vec<ProfileEntry>,
}

#[derive(Serialize, Deserialize)]
struct ProfileEntry {
    group: String,
    transaction: String,
    phase: String,
    mu: f64,
    sigma: f64,
    n: u64,
}

pub fn profile_to_json(profile: &BaselineProfile) -> Result<String> {
    let doc = ProfileDocument {
        version: PROFILE_VERSION,
        split_tag: profile.split_tag,
        entries: profile
            .entries
            .iter()
            .map(|(k, s)| ProfileEntry {
                group: k.group.clone(),
                transaction: k.transaction.clone(),
                phase: k.phase.clone(),
                mu: s.mu,
                sigma: s.sigma,
                n: s.n,
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn profile_from_json(text: &str) -> Result<BaselineProfile> {
    // Peek at the version first so a newer document with a different layout
    // reports a version error rather than a schema error.
    let raw: serde_json::Value = serde_json::from_str(text)?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != PROFILE_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: PROFILE_VERSION,
        });
    }
    let doc: ProfileDocument = serde_json::from_value(raw)?;
    let mut entries = BTreeMap::new();
    for e in doc.entries {
        let key = StreamKey::new(e.group, e.transaction, e.phase);
        let stats = BaselineStats {
            mu: e.mu,
            sigma: e.sigma,
            n: e.n,
        };
        stats.validate().map_err(|err| match err {
            Error::InvalidBaseline { reason, .. } => Error::InvalidBaseline {
                key: Some(key.to_string()),
                reason,
            },
            other => other,
        })?;
        entries.insert(key, stats);
    }
    Ok(BaselineProfile {
        entries,
        split_tag: doc.split_tag,
    })
}

pub fn save_profile(profile: &BaselineProfile, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(profile_to_json(profile)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<BaselineProfile> {
    profile_from_json(&std::fs::read_to_string(path)?)
}
