//! Synthetic golden runs and fault injection.
//!
//! Throughput per stream is drawn independently from a Gaussian per load
//! phase, which is an idealization of real per-second throughput. Faults
//! follow three temporal patterns: `H` (one continuous 300 s window), `L`
//! (ten 15 s windows separated by 15 s gaps) and `Ls` (three such windows).
//! While a window is active every stream's mean is scaled by the
//! degradation factor; the noise around the mean is kept.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{Run, RunRole, RunSet, Sample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySpec {
    pub group: String,
    pub transaction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub id: String,
    pub duration_s: f64,
    pub mean_tps: f64,
    pub sigma_tps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub keys: Vec<KeySpec>,
    pub phases: Vec<PhaseSpec>,
    #[serde(default = "default_interval")]
    pub sample_interval_s: f64,
}

fn default_interval() -> f64 {
    1.0
}

pub const TRANSACTIONS: [&str; 9] = [
    "BROKER_VOLUME",
    "CUSTOMER_POSITION",
    "MARKET_WATCH",
    "SECURITY_DETAIL",
    "TRADE_LOOKUP",
    "TRADE_ORDER",
    "TRADE_RESULT",
    "TRADE_STATUS",
    "TRADE_UPDATE",
];

impl WorkloadSpec {
    /// Every `(group, transaction)` pair with the given phases.
    pub fn grid(groups: &[&str], transactions: &[&str], phases: Vec<PhaseSpec>) -> Self {
        let keys = groups
            .iter()
            .flat_map(|g| {
                transactions.iter().map(move |t| KeySpec {
                    group: g.to_string(),
                    transaction: t.to_string(),
                })
            })
            .collect();
        Self {
            keys,
            phases,
            sample_interval_s: 1.0,
        }
    }

    /// Four groups, nine transactions, ten 12-minute phases at 100 +- 10 tps.
    pub fn reference() -> Self {
        let phases = (1..=10)
            .map(|i| PhaseSpec {
                id: i.to_string(),
                duration_s: 720.0,
                mean_tps: 100.0,
                sigma_tps: 10.0,
            })
            .collect();
        Self::grid(&["G1", "G2", "G3", "G4"], &TRANSACTIONS, phases)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_interval_s.is_finite() && self.sample_interval_s > 0.0) {
            return Err(Error::InvalidConfig("sample interval must be > 0".into()));
        }
        for ph in &self.phases {
            if !(ph.duration_s.is_finite() && ph.duration_s > 0.0) {
                return Err(Error::InvalidConfig(format!("phase {} duration must be > 0", ph.id)));
            }
            if !(ph.sigma_tps.is_finite() && ph.sigma_tps > 0.0) {
                return Err(Error::InvalidConfig(format!("phase {} sigma must be > 0", ph.id)));
            }
            if !(ph.mean_tps.is_finite() && ph.mean_tps >= 0.0) {
                return Err(Error::InvalidConfig(format!("phase {} mean must be >= 0", ph.id)));
            }
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration_s).sum()
    }

    /// Start time and spec of a phase.
    pub fn phase(&self, id: &str) -> Result<(f64, &PhaseSpec)> {
        let mut start = 0.0;
        for ph in &self.phases {
            if ph.id == id {
                return Ok((start, ph));
            }
            start += ph.duration_s;
        }
        Err(Error::UnknownPhase(id.to_string()))
    }

    /// Samples per stream over a whole run.
    pub fn samples_per_key(&self) -> usize {
        self.phases
            .iter()
            .map(|p| (p.duration_s / self.sample_interval_s).ceil() as usize)
            .sum()
    }
}

/// One run drawn from `rng`.
fn draw_run(spec: &WorkloadSpec, run_id: String, rng: &mut ChaCha8Rng) -> Result<Run> {
    let mut samples = Vec::with_capacity(spec.samples_per_key() * spec.keys.len());
    let mut start = 0.0;
    for ph in &spec.phases {
        let noise = Normal::new(ph.mean_tps, ph.sigma_tps)
            .map_err(|e| Error::InvalidConfig(format!("phase {}: {e}", ph.id)))?;
        let steps = (ph.duration_s / spec.sample_interval_s).ceil() as usize;
        for j in 0..steps {
            let t = start + j as f64 * spec.sample_interval_s;
            for key in &spec.keys {
                samples.push(Sample {
                    group: key.group.clone(),
                    transaction: key.transaction.clone(),
                    phase: ph.id.clone(),
                    t,
                    value: noise.sample(rng).max(0.0),
                });
            }
        }
        start += ph.duration_s;
    }
    Ok(Run { run_id, samples })
}

/// Draws a run from ChaCha8 stream `stream` under `seed`.
pub fn generate_run(spec: &WorkloadSpec, run_id: impl Into<String>, seed: u64, stream: u64) -> Result<Run> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    draw_run(spec, run_id.into(), &mut rng)
}

/// `n_runs` golden runs named `golden-000`, `golden-001`, ...; run `i`
/// uses stream `i`.
pub fn generate_golden(spec: &WorkloadSpec, n_runs: usize, seed: u64) -> Result<RunSet> {
    spec.validate()?;
    let runs = (0..n_runs)
        .map(|i| generate_run(spec, format!("golden-{i:03}"), seed, i as u64))
        .collect::<Result<Vec<_>>>()?;
    RunSet::new(runs, RunRole::Golden)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultPattern {
    H,
    L,
    Ls,
}

impl FaultPattern {
    pub const ON_S: f64 = 15.0;
    pub const OFF_S: f64 = 15.0;
    pub const H_S: f64 = 300.0;

    /// Active windows relative to the attack start.
    pub fn windows(self) -> Vec<(f64, f64)> {
        let pulses = |n: usize| {
            (0..n)
                .map(|k| {
                    let s = k as f64 * (Self::ON_S + Self::OFF_S);
                    (s, s + Self::ON_S)
                })
                .collect()
        };
        match self {
            FaultPattern::H => vec![(0.0, Self::H_S)],
            FaultPattern::L => pulses(10),
            FaultPattern::Ls => pulses(3),
        }
    }

    /// Length of the attack interval (including the final gap for pulsed patterns).
    pub fn span(self) -> f64 {
        match self {
            FaultPattern::H => Self::H_S,
            FaultPattern::L => 10.0 * (Self::ON_S + Self::OFF_S),
            FaultPattern::Ls => 3.0 * (Self::ON_S + Self::OFF_S),
        }
    }
}

impl fmt::Display for FaultPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultPattern::H => "H",
            FaultPattern::L => "L",
            FaultPattern::Ls => "Ls",
        })
    }
}

impl std::str::FromStr for FaultPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" | "h" => Ok(FaultPattern::H),
            "L" | "l" => Ok(FaultPattern::L),
            "Ls" | "LS" | "ls" => Ok(FaultPattern::Ls),
            other => Err(Error::InvalidConfig(format!("unknown fault pattern {other:?}"))),
        }
    }
}

pub const DEFAULT_DEGRADATION: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub pattern: FaultPattern,
    pub phase_id: String,
    /// Multiplicative factor on the phase mean while a window is active.
    #[serde(default = "default_degradation")]
    pub degradation: f64,
    /// Attack start relative to the phase start.
    #[serde(default)]
    pub start_offset_s: f64,
}

fn default_degradation() -> f64 {
    DEFAULT_DEGRADATION
}

impl FaultSpec {
    pub fn new(pattern: FaultPattern, phase_id: impl Into<String>) -> Self {
        Self {
            pattern,
            phase_id: phase_id.into(),
            degradation: DEFAULT_DEGRADATION,
            start_offset_s: 0.0,
        }
    }

    /// Campaign label such as `4H` or `6Ls`.
    pub fn label(&self) -> String {
        format!("{}{}", self.phase_id, self.pattern)
    }
}

/// Half-open interval `[start, end)` in seconds since run start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Pre-attack, attack and post-attack intervals of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub pre: Interval,
    pub attack: Interval,
    pub post: Interval,
}

impl Schedule {
    pub fn new(t0: f64, t1: f64, t2: f64, t3: f64) -> Result<Self> {
        if !(0.0 <= t0 && t0 <= t1 && t1 <= t2 && t2 <= t3) {
            return Err(Error::FaultWindow(format!(
                "schedule boundaries {t0}, {t1}, {t2}, {t3} are not ordered"
            )));
        }
        Ok(Self {
            pre: Interval { start: t0, end: t1 },
            attack: Interval { start: t1, end: t2 },
            post: Interval { start: t2, end: t3 },
        })
    }

    /// A whole run without an attack.
    pub fn clean(duration: f64) -> Self {
        Self {
            pre: Interval {
                start: 0.0,
                end: duration,
            },
            attack: Interval {
                start: duration,
                end: duration,
            },
            post: Interval {
                start: duration,
                end: duration,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRun {
    pub run_id: String,
    pub samples: Vec<Sample>,
    pub schedule: Schedule,
    /// `None` for golden runs.
    pub fault: Option<FaultSpec>,
    /// Absolute active windows.
    pub windows: Vec<Interval>,
}

impl LabeledRun {
    pub fn golden(run: Run, duration: f64) -> Self {
        Self {
            run_id: run.run_id,
            samples: run.samples,
            schedule: Schedule::clean(duration),
            fault: None,
            windows: Vec::new(),
        }
    }

    pub fn fault_model(&self) -> String {
        self.fault.as_ref().map_or_else(|| "golden".to_string(), FaultSpec::label)
    }

    pub fn schedule_record(&self) -> ScheduleRecord {
        ScheduleRecord {
            run_id: self.run_id.clone(),
            fault_model: self.fault_model(),
            pattern: self.fault.as_ref().map(|f| f.pattern),
            phase: self.fault.as_ref().map(|f| f.phase_id.clone()),
            degradation: self.fault.as_ref().map(|f| f.degradation),
            pre: self.schedule.pre,
            attack: self.schedule.attack,
            post: self.schedule.post,
            windows: self.windows.clone(),
        }
    }
}

/// Applies a fault to a golden run. Samples outside the active windows are
/// left untouched; inside, `value - (1 - degradation) * mean` clamped at 0.
pub fn inject_fault(spec: &WorkloadSpec, run: &Run, fault: &FaultSpec) -> Result<LabeledRun> {
    if !(fault.degradation > 0.0 && fault.degradation <= 1.0) {
        return Err(Error::FaultWindow(format!(
            "degradation must lie in (0, 1], got {}",
            fault.degradation
        )));
    }
    let (phase_start, phase) = spec.phase(&fault.phase_id)?;
    let span = fault.pattern.span();
    if fault.start_offset_s < 0.0 || fault.start_offset_s + span > phase.duration_s {
        return Err(Error::FaultWindow(format!(
            "{} window [{}, {}) exceeds phase {} of {} s",
            fault.pattern,
            fault.start_offset_s,
            fault.start_offset_s + span,
            phase.id,
            phase.duration_s
        )));
    }
    let t1 = phase_start + fault.start_offset_s;
    let t2 = t1 + span;
    let windows: Vec<Interval> = fault
        .pattern
        .windows()
        .into_iter()
        .map(|(a, b)| Interval {
            start: t1 + a,
            end: t1 + b,
        })
        .collect();
    let shift = (1.0 - fault.degradation) * phase.mean_tps;

    let samples = run
        .samples
        .iter()
        .map(|s| {
            if shift != 0.0 && windows.iter().any(|w| w.contains(s.t)) {
                Sample {
                    value: (s.value - shift).max(0.0),
                    ..s.clone()
                }
            } else {
                s.clone()
            }
        })
        .collect();

    Ok(LabeledRun {
        run_id: run.run_id.clone(),
        samples,
        schedule: Schedule::new(0.0, t1, t2, spec.total_duration())?,
        fault: Some(fault.clone()),
        windows,
    })
}

/// `runs_per_fault` fresh runs per fault, each with the fault injected.
/// Run `r` of fault `i` is named `<label>-<r>` and drawn from stream
/// `((i + 1) << 32) + r`, disjoint from the golden streams.
pub fn generate_campaign(
    spec: &WorkloadSpec,
    faults: &[FaultSpec],
    runs_per_fault: usize,
    seed: u64,
) -> Result<Vec<LabeledRun>> {
    let mut out = Vec::with_capacity(faults.len() * runs_per_fault);
    for (i, fault) in faults.iter().enumerate() {
        for r in 0..runs_per_fault {
            let stream = ((i as u64 + 1) << 32) + r as u64;
            let run = generate_run(spec, format!("{}-{r:03}", fault.label()), seed, stream)?;
            out.push(inject_fault(spec, &run, fault)?);
        }
    }
    Ok(out)
}

/// The six fault models of the reference campaign: H, L and Ls on phases 4 and 6.
pub fn reference_faults(degradation: f64) -> Vec<FaultSpec> {
    let mut v = Vec::new();
    for phase in ["4", "6"] {
        for pattern in [FaultPattern::H, FaultPattern::L, FaultPattern::Ls] {
            v.push(FaultSpec {
                degradation,
                ..FaultSpec::new(pattern, phase)
            });
        }
    }
    v
}

pub const SCHEDULE_VERSION: u32 = 1;

/// Sidecar schedule entry for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub run_id: String,
    pub fault_model: String,
    pub pattern: Option<FaultPattern>,
    pub phase: Option<String>,
    pub degradation: Option<f64>,
    pub pre: Interval,
    pub attack: Interval,
    pub post: Interval,
    #[serde(default)]
    pub windows: Vec<Interval>,
}

impl ScheduleRecord {
    pub fn schedule(&self) -> Schedule {
        Schedule {
            pre: self.pre,
            attack: self.attack,
            post: self.post,
        }
    }

    pub fn is_faulted(&self) -> bool {
        self.pattern.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub version: u32,
    pub runs: Vec<ScheduleRecord>,
}

impl ScheduleFile {
    pub fn new(runs: Vec<ScheduleRecord>) -> Self {
        Self {
            version: SCHEDULE_VERSION,
            runs,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != SCHEDULE_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: SCHEDULE_VERSION,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn by_run(&self) -> BTreeMap<&str, &ScheduleRecord> {
        self.runs.iter().map(|r| (r.run_id.as_str(), r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> WorkloadSpec {
        let phases = ["3", "4"]
            .iter()
            .map(|id| PhaseSpec {
                id: id.to_string(),
                duration_s: 400.0,
                mean_tps: 100.0,
                sigma_tps: 10.0,
            })
            .collect();
        WorkloadSpec::grid(&["G1"], &["TL", "TO"], phases)
    }

    #[test]
    fn golden_runs_are_seeded() {
        let spec = small_spec();
        let a = generate_golden(&spec, 3, 9).unwrap();
        let b = generate_golden(&spec, 3, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert_eq!(a.runs[0].samples.len(), 800 * 2);
        assert_ne!(a.runs[0].samples, a.runs[1].samples);
        assert!(generate_golden(&spec, 0, 9).unwrap().is_empty());
    }

    #[test]
    fn pattern_windows() {
        assert_eq!(FaultPattern::H.windows(), vec![(0.0, 300.0)]);
        let l = FaultPattern::L.windows();
        assert_eq!(l.len(), 10);
        assert!(l.iter().all(|(a, b)| b - a == 15.0));
        assert!(l.windows(2).all(|w| w[1].0 - w[0].1 == 15.0));
        assert_eq!(FaultPattern::L.span(), 300.0);
        assert_eq!(FaultPattern::Ls.windows().len(), 3);
    }

    #[test]
    fn h_fault_degrades_one_window() {
        let spec = small_spec();
        let run = generate_run(&spec, "r", 1, 0).unwrap();
        let fault = FaultSpec {
            start_offset_s: 50.0,
            ..FaultSpec::new(FaultPattern::H, "4")
        };
        let lr = inject_fault(&spec, &run, &fault).unwrap();
        assert_eq!(lr.samples.len(), run.samples.len());
        assert_eq!(lr.windows.len(), 1);
        assert_eq!(lr.schedule.attack, Interval { start: 450.0, end: 750.0 });
        assert_eq!(lr.schedule.post.end, 800.0);
        for (a, b) in run.samples.iter().zip(&lr.samples) {
            if lr.schedule.attack.contains(a.t) {
                assert_eq!(b.value, (a.value - 40.0).max(0.0));
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn l_fault_alternates() {
        let spec = small_spec();
        let run = generate_run(&spec, "r", 1, 0).unwrap();
        let lr = inject_fault(&spec, &run, &FaultSpec::new(FaultPattern::L, "4")).unwrap();
        let changed: Vec<f64> = run
            .samples
            .iter()
            .zip(&lr.samples)
            .filter(|(a, b)| a.value != b.value)
            .map(|(a, _)| a.t)
            .collect();
        // 10 windows x 15 s x 2 keys, minus draws already clamped at zero.
        assert!(changed.len() <= 300 && changed.len() > 290);
        assert!(changed.iter().all(|&t| ((t - 400.0) % 30.0) < 15.0));
    }

    #[test]
    fn unit_degradation_is_identity() {
        let spec = small_spec();
        let run = generate_run(&spec, "r", 1, 0).unwrap();
        let fault = FaultSpec {
            degradation: 1.0,
            ..FaultSpec::new(FaultPattern::H, "4")
        };
        let lr = inject_fault(&spec, &run, &fault).unwrap();
        assert_eq!(lr.samples, run.samples);
    }

    #[test]
    fn window_must_fit_phase() {
        let spec = small_spec();
        let run = generate_run(&spec, "r", 1, 0).unwrap();
        let late = FaultSpec {
            start_offset_s: 200.0,
            ..FaultSpec::new(FaultPattern::H, "4")
        };
        assert!(matches!(inject_fault(&spec, &run, &late), Err(Error::FaultWindow(_))));
        let missing = FaultSpec::new(FaultPattern::H, "9");
        assert!(matches!(inject_fault(&spec, &run, &missing), Err(Error::UnknownPhase(_))));
    }

    #[test]
    fn campaign_labels_and_determinism() {
        let spec = small_spec();
        let faults = vec![FaultSpec::new(FaultPattern::Ls, "3"), FaultSpec::new(FaultPattern::H, "4")];
        let a = generate_campaign(&spec, &faults, 2, 5).unwrap();
        let b = generate_campaign(&spec, &faults, 2, 5).unwrap();
        assert_eq!(a, b);
        let ids: Vec<_> = a.iter().map(|r| r.run_id.as_str()).collect();
        assert_eq!(ids, ["3Ls-000", "3Ls-001", "4H-000", "4H-001"]);
        let names: Vec<_> = reference_faults(0.6).iter().map(FaultSpec::label).collect();
        assert_eq!(names, ["4H", "4L", "4Ls", "6H", "6L", "6Ls"]);
    }

    #[test]
    fn schedule_file_round_trip() {
        let spec = small_spec();
        let camp = generate_campaign(&spec, &[FaultSpec::new(FaultPattern::H, "4")], 1, 5).unwrap();
        let file = ScheduleFile::new(camp.iter().map(LabeledRun::schedule_record).collect());
        let back = ScheduleFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        assert!(ScheduleFile::from_json(r#"{"version":3,"runs":[]}"#).is_err());
    }
}
