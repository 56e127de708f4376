//! Mean time to a false alarm, viewing the detector as a birth-death chain.
//!
//! Under the no-anomaly hypothesis each sample adds a ball to bucket `i`
//! with probability `1 - p_i` and removes one with probability `p_i`.
//! Flattening `(b, d)` to the position `(b - 1) * (D + 1) + d` gives a
//! birth-death chain on `0..B(D+1)`, reflecting at 0, whose first passage
//! to `B(D+1)` is the alarm. Three routes compute its mean:
//!
//! * [`exact_absorption`]: the first-passage recurrence, valid for every
//!   `p` and any [`Scalar`], including exact rationals;
//! * [`closed_form_a1`], [`closed_form_a2`], [`closed_form`]: geometric-sum
//!   closed forms in `rho_i = 1/p_i - 1`, singular at `p_i = 1/2`;
//! * [`simulate_absorption`]: Monte Carlo over the real [`detector_step`].

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{detector_reset, detector_step, BaselineStats, DetectorConfig, Direction};
use crate::error::{Error, Result};
use crate::profile::{BaselineProfile, RunSet, StreamKey};
use crate::scalar::{Real, Scalar};

/// Clamp band for estimated probabilities, keeping `rho` finite.
pub const P_CLAMP: f64 = 1e-6;

/// Default minimum number of samples for [`estimate_walk_params`].
pub const MIN_ESTIMATION_SAMPLES: usize = 100;

/// Per-bucket probabilities that a sample does *not* add a ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WalkParams<T> {
    p: Vec<T>,
}

impl<T: Scalar> WalkParams<T> {
    pub fn new(p: Vec<T>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidConfig("walk needs at least one bucket".into()));
        }
        for (index, pi) in p.iter().enumerate() {
            if !(pi > &T::zero() && pi < &T::one()) {
                return Err(Error::InvalidProbability {
                    index,
                    value: pi.approx_f64(),
                });
            }
        }
        Ok(Self { p })
    }

    pub fn buckets(&self) -> usize {
        self.p.len()
    }

    pub fn p(&self) -> &[T] {
        &self.p
    }

    /// Probability that a sample adds a ball while in bucket `index` (0-based).
    pub fn add_prob(&self, index: usize) -> T {
        T::one() - self.p[index].clone()
    }

    /// Converts to another scalar type (e.g. rationals for an exact solve).
    pub fn convert<U: Scalar>(&self) -> Result<WalkParams<U>> {
        let p = self
            .p
            .iter()
            .enumerate()
            .map(|(index, x)| {
                let v = x.approx_f64();
                U::try_from_f64(v).ok_or(Error::InvalidProbability { index, value: v })
            })
            .collect::<Result<Vec<_>>>()?;
        WalkParams::new(p)
    }
}

impl WalkParams<f64> {
    pub fn from_slice(p: &[f64]) -> Result<Self> {
        Self::new(p.to_vec())
    }
}

/// `rho = 1/p - 1`, `Delta = (1 + rho)/(1 - rho)` and
/// `delta = (1 - rho^-n)/(rho - 1)` for one bucket with `n` positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormIntermediates<T> {
    pub rho: T,
    pub big_delta: T,
    pub small_delta: T,
    /// `ln(1/rho)`, kept so powers are evaluated as exponentials.
    log_inv_rho: T,
}

impl<T: Real> ClosedFormIntermediates<T> {
    pub fn new(p: T, positions: u32, index: usize) -> Result<Self> {
        if !(p > T::zero() && p < T::one()) {
            return Err(Error::InvalidProbability {
                index,
                value: p.approx_f64(),
            });
        }
        let two_p_minus_one = p + p - T::one();
        if two_p_minus_one == T::zero() {
            return Err(Error::Singularity { index });
        }
        // 1/rho = p / (1 - p); ln(1 - p) via ln_1p keeps precision for small p.
        let log_inv_rho = p.ln() - (-p).ln_1p();
        let big_delta = two_p_minus_one.recip();
        // rho^-n - 1 = expm1(n ln(1/rho)); delta = p * Delta * (rho^-n - 1).
        let n = T::from_u32(positions).expect("u32 fits in float");
        let small_delta = p * big_delta * (n * log_inv_rho).exp_m1();
        Ok(Self {
            rho: (T::one() - p) / p,
            big_delta,
            small_delta,
            log_inv_rho,
        })
    }

    /// `rho^-k - 1`.
    fn inv_rho_pow_m1(&self, k: u32) -> T {
        (T::from_u32(k).expect("u32 fits in float") * self.log_inv_rho).exp_m1()
    }

    /// `rho^-k`, taken directly: `1 + (rho^-k - 1)` cancels when `rho > 1`.
    fn inv_rho_pow(&self, k: u32) -> T {
        (T::from_u32(k).expect("u32 fits in float") * self.log_inv_rho).exp()
    }
}

fn check_depth(depth: u32) -> Result<()> {
    if depth == 0 {
        return Err(Error::InvalidConfig("bucket depth must be >= 1".into()));
    }
    Ok(())
}

/// Closed form for a single bucket: mean samples from empty to alarm,
/// i.e. the first passage over `D + 1` positions,
/// `V = Delta (delta - (D + 1))` with `delta` taken over `D + 1` positions.
pub fn closed_form_a1<T: Real>(p1: T, depth: u32) -> Result<T> {
    check_depth(depth)?;
    let n = depth + 1;
    let b1 = ClosedFormIntermediates::new(p1, n, 0)?;
    Ok(b1.big_delta * (b1.small_delta - T::from_u32(n).expect("u32 fits in float")))
}

/// Closed form for two buckets:
/// `A = Delta_1 (delta_1 - n) + Delta_2 (delta_2 - n) + U delta_2`
/// with `n = D + 1` positions per bucket and
/// `U = Delta_1 (1 - rho_1^n) / rho_1^n`, the mean time of the step that
/// overflows bucket 1.
///
/// Results too large for `T` saturate to infinity.
pub fn closed_form_a2<T: Real>(p1: T, p2: T, depth: u32) -> Result<T> {
    closed_form(&WalkParams::new(vec![p1, p2])?, depth)
}

/// Closed form for any number of buckets. Bucket `i` contributes
/// `Delta_i (delta_i - n) + u_{i-1} delta_i`, where `u_{i-1}` is the mean
/// time of the step that overflows bucket `i - 1` (zero for the first
/// bucket), `u_i = Delta_i (rho_i^-n - 1) + rho_i^-n u_{i-1}`.
pub fn closed_form<T: Real>(p: &WalkParams<T>, depth: u32) -> Result<T> {
    check_depth(depth)?;
    let n = depth + 1;
    let n_t = T::from_u32(n).expect("u32 fits in float");
    let mut total = T::zero();
    let mut carry = T::zero();
    for (index, &pi) in p.p().iter().enumerate() {
        let b = ClosedFormIntermediates::new(pi, n, index)?;
        let growth = b.inv_rho_pow_m1(n);
        total = total + b.big_delta * (b.small_delta - n_t);
        // 0 * inf must not poison the sum when the first bucket overflows.
        if !carry.is_zero() {
            total = total + carry * b.small_delta;
            carry = carry * b.inv_rho_pow(n);
        }
        carry = carry + b.big_delta * growth;
    }
    Ok(total)
}

/// Exact mean first-passage time from `(1, 0)` to the alarm.
///
/// Uses the recurrence for the mean time `u_k` to move from position `k`
/// to `k + 1`: `u_0 = 1/q_1`, `u_k = (1 + p_b u_{k-1}) / q_b`, where `b` is
/// the bucket of position `k` and `q_b = 1 - p_b`. The mean hitting time is
/// `sum_k u_k`. All terms are positive, so the float version is stable;
/// with [`num_rational::BigRational`] it is exact. `p_i = 1/2` is fine.
pub fn exact_absorption<T: Scalar>(p: &WalkParams<T>, depth: u32) -> Result<T> {
    check_depth(depth)?;
    let positions = u64::from(depth) + 1;
    let mut total = T::zero();
    let mut u = T::zero();
    for (index, pi) in p.p().iter().enumerate() {
        let q = p.add_prob(index);
        for _ in 0..positions {
            u = (T::one() + pi.clone() * u) / q.clone();
            total = total + u.clone();
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    ExactSolve,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionEstimate {
    /// Mean samples until the alarm.
    pub mean: f64,
    pub method: Method,
    /// Standard error of `mean`; zero for deterministic methods.
    pub stderr: f64,
}

/// Mean time to a false alarm, preferring the closed form for `B <= 2`
/// away from `p = 1/2` and the exact recurrence otherwise.
pub fn mean_time_to_false_alarm<T: Real>(p: &WalkParams<T>, depth: u32) -> Result<T> {
    if p.buckets() <= 2 {
        match closed_form(p, depth) {
            Ok(a) => return Ok(a),
            Err(Error::Singularity { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    exact_absorption(p, depth)
}

/// Monte Carlo estimate of the mean absorption time.
///
/// Each trial drives [`detector_step`] with synthetic samples against a
/// unit baseline: while the detector points at bucket `b`, a sample falls
/// half a sigma below that bucket's threshold with probability `1 - p_b`
/// and half a sigma above it otherwise. Trial `i` draws from ChaCha8 stream
/// `i` under `seed`, so estimates do not depend on thread scheduling.
/// Bernoulli draws use 32-bit uniforms.
///
/// There is no step cap; callers pick parameters with a tractable mean.
pub fn simulate_absorption(
    p: &WalkParams<f64>,
    depth: u32,
    trials: u64,
    seed: u64,
) -> Result<AbsorptionEstimate> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let times = absorption_times(p, depth, trials, seed)?;
    let n = times.len() as f64;
    let mean = times.iter().map(|&t| t as f64).sum::<f64>() / n;
    let var = if times.len() > 1 {
        times
            .iter()
            .map(|&t| {
                let e = t as f64 - mean;
                e * e
            })
            .sum::<f64>()
            / (n - 1.0)
    } else {
        0.0
    };
    Ok(AbsorptionEstimate {
        mean,
        method: Method::MonteCarlo,
        stderr: (var / n).sqrt(),
    })
}

/// Per-trial absorption times behind [`simulate_absorption`].
pub fn absorption_times(
    p: &WalkParams<f64>,
    depth: u32,
    trials: u64,
    seed: u64,
) -> Result<Vec<u64>> {
    let buckets = u32::try_from(p.buckets())
        .map_err(|_| Error::InvalidConfig("too many buckets".into()))?;
    let cfg = DetectorConfig::new(buckets, depth, Direction::LowerIsAnomalous)?;
    let baseline = BaselineStats::new(0.0, 1.0, 2)?;
    // Add iff a 32-bit uniform falls below q * 2^32.
    let add_below: Vec<u64> = (0..p.buckets())
        .map(|i| (p.add_prob(i) * 4_294_967_296.0).round() as u64)
        .collect();
    let below: Vec<f64> = (1..=buckets)
        .map(|b| baseline.threshold(b, cfg.direction) - 0.5)
        .collect();
    let above: Vec<f64> = below.iter().map(|x| x + 1.0).collect();

    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let mut state = detector_reset(&cfg);
            let mut steps = 0u64;
            loop {
                let b = (state.bucket - 1) as usize;
                let value = if u64::from(rng.next_u32()) < add_below[b] {
                    below[b]
                } else {
                    above[b]
                };
                let step = detector_step(state, value, &baseline, &cfg)?;
                steps += 1;
                if step.alarm {
                    return Ok(steps);
                }
                state = step.state;
            }
        })
        .collect()
}

/// Empirical `p_i`: the fraction of golden samples on the non-anomalous
/// side of bucket `i`'s threshold, clamped into `[1e-6, 1 - 1e-6]`.
pub fn estimate_walk_params(
    values: &[f64],
    baseline: &BaselineStats<f64>,
    buckets: u32,
    direction: Direction,
    min_samples: usize,
) -> Result<WalkParams<f64>> {
    if buckets == 0 {
        return Err(Error::InvalidConfig("bucket count must be >= 1".into()));
    }
    baseline.validate()?;
    if values.len() < min_samples.max(2) {
        return Err(Error::InsufficientSamples {
            key: String::new(),
            have: values.len(),
            need: min_samples.max(2),
        });
    }
    if values.iter().all(|&v| v == values[0]) {
        return Err(Error::ConstantSeries { key: String::new() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteSample);
    }
    let n = values.len() as f64;
    let p = (1..=buckets)
        .map(|b| {
            let ok = values
                .iter()
                .filter(|&&v| !baseline.is_anomalous(v, b, direction))
                .count();
            (ok as f64 / n).clamp(P_CLAMP, 1.0 - P_CLAMP)
        })
        .collect();
    WalkParams::new(p)
}

pub const WALK_ESTIMATES_VERSION: u32 = 1;

/// Serialized per-stream walk parameters (the p-estimates file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkEstimates {
    pub version: u32,
    pub buckets: u32,
    #[serde(default)]
    pub direction: Direction,
    pub entries: Vec<WalkEntry>,
    /// Streams skipped for having too few samples.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub insufficient: Vec<StreamKey>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkEntry {
    #[serde(flatten)]
    pub key: StreamKey,
    pub n: u64,
    pub p: Vec<f64>,
}

impl WalkEstimates {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != WALK_ESTIMATES_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: WALK_ESTIMATES_VERSION,
            });
        }
        let doc: WalkEstimates = serde_json::from_value(raw)?;
        for e in &doc.entries {
            if e.p.len() != doc.buckets as usize {
                return Err(Error::BucketCount {
                    expected: doc.buckets as usize,
                    got: e.p.len(),
                });
            }
            WalkParams::from_slice(&e.p)?;
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn get(&self, key: &StreamKey) -> Option<WalkParams<f64>> {
        self.entries
            .iter()
            .find(|e| &e.key == key)
            .and_then(|e| WalkParams::from_slice(&e.p).ok())
    }
}

/// Walk parameters for every profiled stream, estimated from `runs`.
/// Streams with fewer than `min_samples` values are listed as insufficient
/// instead of failing the whole table.
pub fn estimate_walk_table(
    runs: &RunSet,
    profile: &BaselineProfile,
    buckets: u32,
    direction: Direction,
    min_samples: usize,
) -> Result<WalkEstimates> {
    let mut grouped: BTreeMap<&StreamKey, Vec<f64>> =
        profile.entries.keys().map(|k| (k, Vec::new())).collect();
    for s in runs.samples() {
        if let Some(v) = grouped.get_mut(&s.key()) {
            v.push(s.value);
        }
    }
    let mut entries = Vec::new();
    let mut insufficient = Vec::new();
    for (key, values) in grouped {
        let baseline = &profile.entries[key];
        match estimate_walk_params(&values, baseline, buckets, direction, min_samples) {
            Ok(p) => entries.push(WalkEntry {
                key: key.clone(),
                n: values.len() as u64,
                p: p.p().to_vec(),
            }),
            Err(Error::InsufficientSamples { .. }) => insufficient.push(key.clone()),
            Err(Error::ConstantSeries { .. }) => {
                return Err(Error::ConstantSeries { key: key.to_string() })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(WalkEstimates {
        version: WALK_ESTIMATES_VERSION,
        buckets,
        direction,
        entries,
        insufficient,
    })
}

/// Helper for callers that want a rational exact solve from float inputs.
pub fn exact_absorption_rational(p: &WalkParams<f64>, depth: u32) -> Result<num_rational::BigRational> {
    exact_absorption(&p.convert()?, depth)
}
