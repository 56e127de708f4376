//! JSON configuration. Every section and field is optional; command-line
//! flags override whatever the file says.

use std::collections::BTreeMap;
use std::path::Path;

use bucketwatch::workload::reference_faults;
use bucketwatch::{
    DepthRange, DetectorConfig, Direction, Error, FalseAlarmModel, FaultSpec, Result, StreamKey,
    WorkloadSpec,
};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "BUCKETWATCH_CONFIG";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub detector: DetectorSection,
    pub calibration: CalibrationSection,
    pub profiling: ProfilingSection,
    pub simulation: SimulationSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(rename = "B")]
    pub buckets: u32,
    /// Default depth for every stream.
    #[serde(rename = "D")]
    pub depth: u32,
    /// Per-transaction depth overrides.
    #[serde(rename = "D_by_transaction")]
    pub depth_by_transaction: BTreeMap<String, u32>,
    pub direction: Direction,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            buckets: 2,
            depth: 15,
            depth_by_transaction: BTreeMap::new(),
            direction: Direction::LowerIsAnomalous,
        }
    }
}

impl DetectorSection {
    pub fn config_for(&self, key: &StreamKey) -> DetectorConfig {
        DetectorConfig {
            buckets: self.buckets,
            depth: self
                .depth_by_transaction
                .get(&key.transaction)
                .copied()
                .unwrap_or(self.depth),
            direction: self.direction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        DetectorConfig::new(self.buckets, self.depth, self.direction)?;
        for (tx, &d) in &self.depth_by_transaction {
            DetectorConfig::new(self.buckets, d, self.direction)
                .map_err(|e| Error::InvalidConfig(format!("depth for {tx}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub alpha: f64,
    #[serde(rename = "F")]
    pub target: f64,
    #[serde(rename = "w")]
    pub weight: f64,
    pub model: FalseAlarmModel,
    pub d_range: DepthRange,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        Self {
            alpha: 2e-6,
            target: 0.03,
            weight: 909.0,
            model: FalseAlarmModel::Exponential,
            d_range: DepthRange::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilingSection {
    pub split: f64,
    pub seed: u64,
    /// Transactions to keep; `None` keeps all.
    pub include: Option<Vec<String>>,
    pub exclude: Vec<String>,
    /// Streams with fewer samples get no walk estimate.
    pub min_samples: usize,
}

impl Default for ProfilingSection {
    fn default() -> Self {
        Self {
            split: 37.0 / 59.0,
            seed: 0,
            include: None,
            exclude: Vec::new(),
            min_samples: bucketwatch::markov::MIN_ESTIMATION_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub workload: WorkloadSpec,
    pub faults: Vec<FaultSpec>,
    pub golden_runs: usize,
    pub runs_per_fault: usize,
    pub seed: u64,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            workload: WorkloadSpec::reference(),
            faults: reference_faults(bucketwatch::workload::DEFAULT_DEGRADATION),
            golden_runs: 21,
            runs_per_fault: 21,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub c: f64,
    /// Fixed residual `delta` in seconds; estimated from the alerts when absent.
    pub delta: Option<f64>,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            c: bucketwatch::ResidualPolicy::DEFAULT_C,
            delta: None,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)
            .map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// The file at `path`, else the one named by the environment variable,
    /// else the defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty());
        match path.map(Path::to_path_buf).or(from_env.map(Into::into)) {
            Some(p) => Self::from_json(&std::fs::read_to_string(&p).map_err(|e| {
                Error::InvalidConfig(format!("cannot read config {}: {e}", p.display()))
            })?),
            None => Ok(Self::default()),
        }
    }

    /// Cross-section checks; section-local ones run where each is used.
    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        if let Some(include) = &self.profiling.include {
            for tx in self.detector.depth_by_transaction.keys() {
                if !include.contains(tx) {
                    return Err(Error::InvalidConfig(format!(
                        "detector depth given for {tx}, which profiling.include drops"
                    )));
                }
            }
        }
        for tx in self.detector.depth_by_transaction.keys() {
            if self.profiling.exclude.contains(tx) {
                return Err(Error::InvalidConfig(format!(
                    "detector depth given for {tx}, which profiling.exclude drops"
                )));
            }
        }
        for f in &self.simulation.faults {
            self.simulation.workload.phase(&f.phase_id)?;
        }
        Ok(())
    }
}
