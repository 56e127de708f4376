use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid baseline{}: {reason}", key.as_ref().map(|k| format!(" for {k}")).unwrap_or_default())]
    InvalidBaseline { key: Option<String>, reason: String },

    #[error("non-finite sample value")]
    NonFiniteSample,

    #[error("detector is in the alarmed state; reset it before stepping")]
    AlreadyAlarmed,

    #[error("no baseline entry for stream {0}")]
    MissingBaseline(String),

    #[error("probability p[{index}] = {value} is outside the open interval (0, 1)")]
    InvalidProbability { index: usize, value: f64 },

    #[error("closed form is singular at p[{index}] = 1/2; use exact_absorption instead")]
    Singularity { index: usize },

    #[error("closed form requires {expected} bucket(s), got {got}")]
    BucketCount { expected: usize, got: usize },

    #[error("stream {key} has {have} samples, at least {need} required")]
    InsufficientSamples { key: String, have: usize, need: usize },

    #[error("stream {key} has constant values (sigma = 0)")]
    ConstantSeries { key: String },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("at least 2 runs are required to split, got {0}")]
    TooFewRuns(usize),

    #[error("duplicate run id {0}")]
    DuplicateRun(String),

    #[error("fault window: {0}")]
    FaultWindow(String),

    #[error("unknown phase {0}")]
    UnknownPhase(String),

    #[error("alert at t = {time} in run {run_id} lies outside every schedule interval")]
    AlertOutsideSchedule { run_id: String, time: f64 },

    #[error("no run contains an alarm during its attack phase")]
    NoAttackAlarms,

    #[error("hard constraint is infeasible over the depth range {lo}..={hi}")]
    Infeasible { lo: u32, hi: u32 },

    #[error("depth {depth} is not the soft optimum for any weight")]
    UnsupportedDepth { depth: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "config",
            Error::InvalidBaseline { .. } | Error::MissingBaseline(_) => "baseline",
            Error::NonFiniteSample | Error::AlreadyAlarmed => "detector",
            Error::InvalidProbability { .. }
            | Error::Singularity { .. }
            | Error::BucketCount { .. } => "model",
            Error::InsufficientSamples { .. } | Error::ConstantSeries { .. } => "profile",
            Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => "parse",
            Error::VersionMismatch { .. } => "version",
            Error::TooFewRuns(_) | Error::DuplicateRun(_) => "runs",
            Error::FaultWindow(_) | Error::UnknownPhase(_) => "fault",
            Error::AlertOutsideSchedule { .. } | Error::NoAttackAlarms => "evaluate",
            Error::Infeasible { .. } | Error::UnsupportedDepth { .. } => "calibrate",
            Error::Io(_) => "io",
        }
    }
}
