//! The Bucket Algorithm as a streaming state machine.
//!
//! A detector keeps `B` buckets of depth `D` and a pointer `(b, d)` to the
//! current bucket and its fill level. Each sample is compared against the
//! threshold of the current bucket, `mu - (b - 1) * sigma` for throughput
//! (lower is anomalous). A violating sample adds a ball, any other sample
//! removes one. Overflowing a bucket moves the pointer to the next bucket
//! (one sigma further from the mean), underflowing moves it back. Overflowing
//! the last bucket raises an alarm.
//!
//! Overflow is strict (`d > D`), so from the empty state an all-anomalous
//! stream raises the alarm after exactly `B * (D + 1)` samples.

use std::collections::HashMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{BaselineProfile, Sample, StreamKey};

/// Which side of the baseline counts as a violation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Throughput-style metrics: a drop below the threshold is anomalous.
    #[default]
    LowerIsAnomalous,
    /// Response-time-style metrics: a rise above the threshold is anomalous.
    HigherIsAnomalous,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lower" | "lower_is_anomalous" => Ok(Self::LowerIsAnomalous),
            "higher" | "higher_is_anomalous" => Ok(Self::HigherIsAnomalous),
            other => Err(Error::InvalidConfig(format!("unknown direction {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Number of buckets, `B >= 1`.
    pub buckets: u32,
    /// Maximum bucket depth, `D >= 1`.
    pub depth: u32,
    #[serde(default)]
    pub direction: Direction,
}

impl DetectorConfig {
    pub fn new(buckets: u32, depth: u32, direction: Direction) -> Result<Self> {
        let cfg = Self {
            buckets,
            depth,
            direction,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 {
            return Err(Error::InvalidConfig("bucket count must be >= 1".into()));
        }
        if self.depth == 0 {
            return Err(Error::InvalidConfig("bucket depth must be >= 1".into()));
        }
        Ok(())
    }

    /// Samples needed to raise an alarm from the empty state when every
    /// sample is anomalous: `B * (D + 1)`.
    pub fn minimal_fill(&self) -> u64 {
        u64::from(self.buckets) * (u64::from(self.depth) + 1)
    }

    /// The detection-delay lower bound `L = B * D` used by the cost model.
    pub fn delay_lower_bound(&self) -> u64 {
        u64::from(self.buckets) * u64::from(self.depth)
    }
}

/// Reference statistics for one stream, taken from golden runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats<T> {
    pub mu: T,
    pub sigma: T,
    pub n: u64,
}

impl<T: Float> BaselineStats<T> {
    pub fn new(mu: T, sigma: T, n: u64) -> Result<Self> {
        let stats = Self { mu, sigma, n };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        let reason = if !self.mu.is_finite() {
            "mean is not finite"
        } else if !(self.sigma.is_finite() && self.sigma > T::zero()) {
            "sigma must be finite and > 0"
        } else if self.n < 2 {
            "at least 2 samples are required"
        } else {
            return Ok(());
        };
        Err(Error::InvalidBaseline {
            key: None,
            reason: reason.into(),
        })
    }

    /// Threshold of bucket `bucket` (1-based): `mu -/+ (bucket - 1) * sigma`.
    #[inline]
    pub fn threshold(&self, bucket: u32, direction: Direction) -> T {
        let shift = T::from(bucket.saturating_sub(1)).expect("u32 fits in float") * self.sigma;
        match direction {
            Direction::LowerIsAnomalous => self.mu - shift,
            Direction::HigherIsAnomalous => self.mu + shift,
        }
    }

    /// Whether `value` adds a ball while the pointer is at `bucket`.
    /// Equality with the threshold is not anomalous.
    #[inline]
    pub fn is_anomalous(&self, value: T, bucket: u32, direction: Direction) -> bool {
        let threshold = self.threshold(bucket, direction);
        match direction {
            Direction::LowerIsAnomalous => value < threshold,
            Direction::HigherIsAnomalous => value > threshold,
        }
    }
}

/// Position of the detector: bucket `b` (1-based) and its depth `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectorState {
    pub bucket: u32,
    pub depth: u32,
    /// Set when the last step overflowed bucket `B`. The pointer is left
    /// saturated at `(B, D)` until [`detector_reset`].
    pub alarmed: bool,
}

impl DetectorState {
    pub const INITIAL: DetectorState = DetectorState {
        bucket: 1,
        depth: 0,
        alarmed: false,
    };

    /// Linear position in the chain, `(b - 1) * (D + 1) + d`.
    pub fn position(&self, cfg: &DetectorConfig) -> u64 {
        u64::from(self.bucket - 1) * (u64::from(cfg.depth) + 1) + u64::from(self.depth)
    }
}

impl Default for DetectorState {
    fn default() -> Self {
        Self::INITIAL
    }
}

/// Result of one [`detector_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Step {
    pub state: DetectorState,
    /// True when this sample overflowed the last bucket.
    pub alarm: bool,
}

pub fn detector_reset(_cfg: &DetectorConfig) -> DetectorState {
    DetectorState::INITIAL
}

/// Advances the detector by one sample.
#[inline]
pub fn detector_step<T: Float>(
    state: DetectorState,
    value: T,
    baseline: &BaselineStats<T>,
    cfg: &DetectorConfig,
) -> Result<Step> {
    if state.alarmed {
        return Err(Error::AlreadyAlarmed);
    }
    if !value.is_finite() {
        return Err(Error::NonFiniteSample);
    }
    if !(baseline.sigma.is_finite() && baseline.sigma > T::zero()) {
        return Err(Error::InvalidBaseline {
            key: None,
            reason: "sigma must be finite and > 0".into(),
        });
    }
    debug_assert!(state.bucket >= 1 && state.bucket <= cfg.buckets);
    debug_assert!(state.depth <= cfg.depth);

    let max_depth = i64::from(cfg.depth);
    let mut b = i64::from(state.bucket);
    let mut d = i64::from(state.depth);

    if baseline.is_anomalous(value, state.bucket, cfg.direction) {
        d += 1;
    } else {
        d -= 1;
    }
    if d > max_depth {
        d = 0;
        b += 1;
    }
    if d < 0 && b > 1 {
        d = max_depth;
        b -= 1;
    }
    if d < 0 && b == 1 {
        d = 0;
    }

    if b > i64::from(cfg.buckets) {
        return Ok(Step {
            state: DetectorState {
                bucket: cfg.buckets,
                depth: cfg.depth,
                alarmed: true,
            },
            alarm: true,
        });
    }
    Ok(Step {
        state: DetectorState {
            bucket: b as u32,
            depth: d as u32,
            alarmed: false,
        },
        alarm: false,
    })
}

/// Alarm raised by a keyed detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlertEvent {
    #[serde(flatten)]
    pub key: StreamKey,
    /// 1-based ordinal of the triggering sample within its stream.
    pub sample_index: u64,
    /// Seconds since run start.
    pub time: f64,
}

/// A detector bound to one stream, resetting itself after every alarm.
#[derive(Debug, Clone)]
pub struct Detector<T> {
    cfg: DetectorConfig,
    baseline: BaselineStats<T>,
    state: DetectorState,
    seen: u64,
}

impl<T: Float> Detector<T> {
    pub fn new(cfg: DetectorConfig, baseline: BaselineStats<T>) -> Result<Self> {
        cfg.validate()?;
        baseline.validate()?;
        Ok(Self {
            cfg,
            baseline,
            state: detector_reset(&cfg),
            seen: 0,
        })
    }

    pub fn state(&self) -> DetectorState {
        self.state
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn samples_seen(&self) -> u64 {
        self.seen
    }

    /// Feeds one sample. Returns the 1-based ordinal of the sample when it
    /// raised an alarm.
    pub fn observe(&mut self, value: T) -> Result<Option<u64>> {
        let step = detector_step(self.state, value, &self.baseline, &self.cfg)?;
        self.seen += 1;
        if step.alarm {
            self.state = detector_reset(&self.cfg);
            Ok(Some(self.seen))
        } else {
            self.state = step.state;
            Ok(None)
        }
    }

    pub fn reset(&mut self) {
        self.state = detector_reset(&self.cfg);
        self.seen = 0;
    }
}

/// Runs one detector per stream key over `samples` (in the given order)
/// with a single configuration for every key.
pub fn run_detector(
    samples: &[Sample],
    profile: &BaselineProfile,
    cfg: &DetectorConfig,
) -> Result<Vec<AlertEvent>> {
    run_detector_with(samples, profile, |_| *cfg)
}

/// Like [`run_detector`], with the configuration chosen per stream
/// (e.g. a per-transaction depth).
pub fn run_detector_with<F>(
    samples: &[Sample],
    profile: &BaselineProfile,
    config_for: F,
) -> Result<Vec<AlertEvent>>
where
    F: Fn(&StreamKey) -> DetectorConfig,
{
    let mut detectors: HashMap<StreamKey, Detector<f64>> = HashMap::new();
    let mut alerts = Vec::new();
    for sample in samples {
        let key = sample.key();
        let detector = match detectors.get_mut(&key) {
            Some(d) => d,
            None => {
                let baseline = profile
                    .get(&key)
                    .ok_or_else(|| Error::MissingBaseline(key.to_string()))?;
                let detector = Detector::new(config_for(&key), *baseline)?;
                detectors.entry(key.clone()).or_insert(detector)
            }
        };
        if let Some(sample_index) = detector.observe(sample.value)? {
            alerts.push(AlertEvent {
                key,
                sample_index,
                time: sample.t,
            });
        }
    }
    Ok(alerts)
}
