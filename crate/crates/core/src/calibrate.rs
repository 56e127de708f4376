//! Choosing the bucket depth from the false-alarm model.
//!
//! Anomalies arrive at rate `alpha` per sample. With `A = A_B(D)` the mean
//! samples to a false alarm, the probability that a false alarm precedes
//! the next anomaly is modeled as `exp(-A alpha)` (deterministic
//! time-to-alarm) or `1 / (1 + A alpha)` (exponential time-to-alarm).
//! Depth is then picked either as the smallest `D` meeting a target `F`
//! (hard constraint) or as the minimizer of `B D + w f_B(D)` (soft
//! constraint).

use std::io::Write;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markov::{mean_time_to_false_alarm, WalkParams};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FalseAlarmModel {
    Deterministic,
    Exponential,
}

impl std::fmt::Display for FalseAlarmModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Deterministic => "deterministic",
            Self::Exponential => "exponential",
        })
    }
}

impl std::str::FromStr for FalseAlarmModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "deterministic" | "det" => Ok(Self::Deterministic),
            "exponential" | "exp" => Ok(Self::Exponential),
            other => Err(Error::InvalidConfig(format!("unknown false-alarm model {other:?}"))),
        }
    }
}

pub fn false_alarm_prob<T: Real>(mean_to_alarm: T, alpha: T, model: FalseAlarmModel) -> T {
    let x = mean_to_alarm * alpha;
    match model {
        FalseAlarmModel::Deterministic => (-x).exp(),
        FalseAlarmModel::Exponential => (T::one() + x).recip(),
    }
}

/// Inclusive range of candidate depths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepthRange {
    pub min: u32,
    pub max: u32,
}

impl DepthRange {
    pub fn new(min: u32, max: u32) -> Result<Self> {
        if min == 0 || min > max {
            return Err(Error::InvalidConfig(format!(
                "depth range {min}..={max} must be non-empty and start at >= 1"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn iter(&self) -> RangeInclusive<u32> {
        self.min..=self.max
    }
}

impl Default for DepthRange {
    fn default() -> Self {
        Self { min: 1, max: 64 }
    }
}

impl std::str::FromStr for DepthRange {
    type Err = Error;

    /// Accepts `lo..hi`, `lo..=hi` or `lo-hi`, all inclusive.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse depth range {s:?}"));
        let (lo, hi) = s
            .split_once("..=")
            .or_else(|| s.split_once(".."))
            .or_else(|| s.split_once('-'))
            .ok_or_else(bad)?;
        let lo = lo.trim().parse().map_err(|_| bad())?;
        let hi = hi.trim().parse().map_err(|_| bad())?;
        DepthRange::new(lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationQuery {
    /// Anomalies per sample.
    pub alpha: f64,
    /// Target false-alarm probability `F`.
    pub target: f64,
    /// Lagrange weight `w` on the false-alarm probability.
    pub weight: f64,
    pub model: FalseAlarmModel,
    pub depths: DepthRange,
}

impl CalibrationQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig("alpha must be finite and >= 0".into()));
        }
        if !(self.target > 0.0 && self.target <= 1.0) {
            return Err(Error::InvalidConfig("target F must lie in (0, 1]".into()));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::InvalidConfig("weight w must be finite and >= 0".into()));
        }
        DepthRange::new(self.depths.min, self.depths.max)?;
        Ok(())
    }
}

/// `f_B(D)` for every depth in the range, in order.
fn false_alarm_column<T: Real>(
    p: &WalkParams<T>,
    alpha: T,
    model: FalseAlarmModel,
    depths: DepthRange,
) -> Result<Vec<T>> {
    depths
        .iter()
        .map(|d| Ok(false_alarm_prob(mean_time_to_false_alarm(p, d)?, alpha, model)))
        .collect()
}

fn lower_bound<T: Real>(buckets: usize, depth: u32) -> T {
    T::from_count(buckets as u64 * u64::from(depth))
}

/// `B D + w f_B(D)`.
pub fn cost<T: Real>(
    p: &WalkParams<T>,
    weight: T,
    depth: u32,
    alpha: T,
    model: FalseAlarmModel,
) -> Result<T> {
    let f = false_alarm_prob(mean_time_to_false_alarm(p, depth)?, alpha, model);
    Ok(lower_bound::<T>(p.buckets(), depth) + weight * f)
}

/// Smallest depth in range with `f_B(D) <= F`; `None` when none qualifies.
pub fn min_depth_hard<T: Real>(
    p: &WalkParams<T>,
    alpha: T,
    target: T,
    model: FalseAlarmModel,
    depths: DepthRange,
) -> Result<Option<u32>> {
    for d in depths.iter() {
        let f = false_alarm_prob(mean_time_to_false_alarm(p, d)?, alpha, model);
        if f <= target {
            return Ok(Some(d));
        }
    }
    Ok(None)
}

/// Index of the smallest `lower[i] + w f[i]`; ties go to the lower index.
pub fn argmin_cost<T: Real>(lower: &[T], f: &[T], weight: T) -> usize {
    let mut best = 0;
    let mut best_cost = T::infinity();
    for (i, (&l, &fi)) in lower.iter().zip(f).enumerate() {
        let c = l + weight * fi;
        if c < best_cost {
            best = i;
            best_cost = c;
        }
    }
    best
}

/// Depth minimizing `B D + w f_B(D)` over the range, ties to smaller `D`.
pub fn optimal_depth_soft<T: Real>(
    p: &WalkParams<T>,
    weight: T,
    alpha: T,
    model: FalseAlarmModel,
    depths: DepthRange,
) -> Result<u32> {
    let f = false_alarm_column(p, alpha, model, depths)?;
    let lower: Vec<T> = depths.iter().map(|d| lower_bound(p.buckets(), d)).collect();
    Ok(depths.min + argmin_cost(&lower, &f, weight) as u32)
}

/// A weight `w` under which the soft problem selects the hard-constraint
/// depth `D*`.
///
/// The primary estimate is the stationarity condition `w = -B / f'(D*)`
/// with `f'` the central difference over integer depths (one-sided at the
/// range ends). When that estimate does not reproduce `D*`, the midpoint of
/// the exact interval of weights for which `D*` is optimal is returned
/// instead. Fails when the hard problem is infeasible or when no weight
/// selects `D*`.
pub fn infer_weight<T: Real>(
    p: &WalkParams<T>,
    alpha: T,
    target: T,
    model: FalseAlarmModel,
    depths: DepthRange,
) -> Result<T> {
    let star = min_depth_hard(p, alpha, target, model, depths)?.ok_or(Error::Infeasible {
        lo: depths.min,
        hi: depths.max,
    })?;
    let f = false_alarm_column(p, alpha, model, depths)?;
    let lower: Vec<T> = depths.iter().map(|d| lower_bound(p.buckets(), d)).collect();
    let i = (star - depths.min) as usize;
    let b = T::from_usize(p.buckets()).expect("fits in float");
    let two = T::one() + T::one();

    let slope = match (i.checked_sub(1), (i + 1 < f.len()).then_some(i + 1)) {
        (Some(lo), Some(hi)) => (f[hi] - f[lo]) / two,
        (None, Some(hi)) => f[hi] - f[i],
        (Some(lo), None) => f[i] - f[lo],
        (None, None) => T::zero(),
    };
    if slope < T::zero() {
        let w = -b / slope;
        if w.is_finite() && argmin_cost(&lower, &f, w) == i {
            return Ok(w);
        }
    }

    // Exact optimality interval: w > B (D* - D) / (f(D) - f*) for D < D*,
    // and w <= B (D - D*) / (f* - f(D)) for D > D*.
    let mut lo = T::zero();
    for j in 0..i {
        let gap = f[j] - f[i];
        if gap <= T::zero() {
            return Err(Error::UnsupportedDepth { depth: star });
        }
        lo = lo.max((lower[i] - lower[j]) / gap);
    }
    let mut hi = T::infinity();
    for j in i + 1..f.len() {
        let gap = f[i] - f[j];
        if gap > T::zero() {
            hi = hi.min((lower[j] - lower[i]) / gap);
        }
    }
    let w = if hi.is_infinite() {
        lo * two + b
    } else {
        (lo + hi) / two
    };
    if lo < hi && argmin_cost(&lower, &f, w) == i {
        Ok(w)
    } else {
        Err(Error::UnsupportedDepth { depth: star })
    }
}

/// One row of the depth sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    #[serde(rename = "D")]
    pub depth: u32,
    #[serde(rename = "A")]
    pub mean_to_alarm: f64,
    pub f_det: f64,
    pub f_exp: f64,
    pub cost_det: f64,
    pub cost_exp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub buckets: u32,
    pub p: Vec<f64>,
    pub query: CalibrationQuery,
    pub rows: Vec<CalibrationRow>,
    /// Smallest depth meeting `F` under `query.model`, if any.
    pub chosen_hard: Option<u32>,
    /// Minimizer of the cost under `query.model` and `query.weight`.
    pub chosen_soft: u32,
    /// `B * chosen_hard`.
    pub lower_bound_l: Option<u64>,
    /// Weight for which the soft problem reproduces `chosen_hard`.
    pub inferred_weight: Option<f64>,
}

impl CalibrationReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["D", "A", "f_det", "f_exp", "cost_det", "cost_exp"])?;
        for r in &self.rows {
            wtr.write_record([
                r.depth.to_string(),
                r.mean_to_alarm.to_string(),
                r.f_det.to_string(),
                r.f_exp.to_string(),
                r.cost_det.to_string(),
                r.cost_exp.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Sweeps the depth range and solves both problems.
pub fn calibration_report(p: &WalkParams<f64>, query: &CalibrationQuery) -> Result<CalibrationReport> {
    query.validate()?;
    let buckets = p.buckets();
    let rows = query
        .depths
        .iter()
        .map(|d| {
            let a = mean_time_to_false_alarm(p, d)?;
            let f_det = false_alarm_prob(a, query.alpha, FalseAlarmModel::Deterministic);
            let f_exp = false_alarm_prob(a, query.alpha, FalseAlarmModel::Exponential);
            let l = lower_bound::<f64>(buckets, d);
            Ok(CalibrationRow {
                depth: d,
                mean_to_alarm: a,
                f_det,
                f_exp,
                cost_det: l + query.weight * f_det,
                cost_exp: l + query.weight * f_exp,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let chosen_hard = min_depth_hard(p, query.alpha, query.target, query.model, query.depths)?;
    let chosen_soft = optimal_depth_soft(p, query.weight, query.alpha, query.model, query.depths)?;
    let inferred_weight = match chosen_hard {
        Some(_) => infer_weight(p, query.alpha, query.target, query.model, query.depths).ok(),
        None => None,
    };
    Ok(CalibrationReport {
        buckets: buckets as u32,
        p: p.p().to_vec(),
        query: *query,
        rows,
        chosen_hard,
        chosen_soft,
        lower_bound_l: chosen_hard.map(|d| buckets as u64 * u64::from(d)),
        inferred_weight,
    })
}
