//! Bucket Algorithm performance-anomaly detection with model-based
//! calibration of the bucket depth.
//!
//! * [`detector`]: the streaming state machine.
//! * [`markov`]: mean samples to a false alarm (closed form, exact
//!   recurrence, Monte Carlo over the real detector).
//! * [`calibrate`]: false-alarm models and hard/soft depth selection.
//! * [`profile`]: CSV ingestion, baselines, run splits, profile files.
//! * [`workload`]: synthetic golden runs and H/L/Ls fault injection.
//! * [`evaluate`]: TP/FP/FN classification, residual filtering, Pr/Re/F1.
//!
//! The numeric core is generic over [`Scalar`]/[`Real`]; the aliases below
//! name the common instantiations.

pub mod calibrate;
pub mod detector;
pub mod error;
pub mod evaluate;
pub mod markov;
pub mod profile;
pub mod scalar;
pub mod workload;

pub use calibrate::{
    calibration_report, cost, false_alarm_prob, infer_weight, min_depth_hard, optimal_depth_soft,
    CalibrationQuery, CalibrationReport, CalibrationRow, DepthRange, FalseAlarmModel,
};
pub use detector::{
    detector_reset, detector_step, run_detector, run_detector_with, AlertEvent, BaselineStats,
    Detector, DetectorConfig, DetectorState, Direction, Step,
};
pub use error::{Error, Result};
pub use evaluate::{
    classify, evaluate_run, evaluation_report, mean_time_to_first_alarm, metrics, residual_filter,
    ClassifiedCounts, EvaluationReport, Metrics, ResidualPolicy, RunAlerts, RunLabel,
};
pub use markov::{
    closed_form, closed_form_a1, closed_form_a2, estimate_walk_params, exact_absorption,
    estimate_walk_table, mean_time_to_false_alarm, simulate_absorption, AbsorptionEstimate, Method, WalkEstimates,
    WalkParams,
};
pub use profile::{
    compute_baseline, load_profile, load_samples, read_samples, save_profile, split_runs,
    write_samples, BaselineProfile, Run, RunRole, RunSet, Sample, SplitTag, StreamKey,
};
pub use scalar::{Real, Scalar};
pub use workload::{
    generate_campaign, generate_golden, generate_run, inject_fault, FaultPattern, FaultSpec, LabeledRun,
    Schedule, ScheduleFile, WorkloadSpec,
};

pub use num_rational::BigRational;

pub type Baseline64 = BaselineStats<f64>;
pub type Baseline32 = BaselineStats<f32>;
pub type Detector64 = Detector<f64>;
pub type Detector32 = Detector<f32>;
pub type Walk64 = WalkParams<f64>;
pub type Walk32 = WalkParams<f32>;
/// Walk parameters in exact rational arithmetic, for [`exact_absorption`].
pub type WalkExact = WalkParams<BigRational>;
