//! `bucketwatch`: profile golden runs, calibrate bucket depths, run the
//! detector, simulate fault campaigns and score alerts.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use bucketwatch::{DepthRange, Direction, FalseAlarmModel};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "bucketwatch", version, about = "Bucket Algorithm anomaly detection toolkit")]
pub struct Cli {
    /// JSON config file; defaults to $BUCKETWATCH_CONFIG when set.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split golden runs, compute baselines and walk estimates.
    Profile(ProfileArgs),
    /// Sweep depths for one stream and pick D.
    Calibrate(CalibrateArgs),
    /// Run the detector over samples and write alerts.
    Detect(DetectArgs),
    /// Generate golden and fault-injected runs with their schedules.
    Simulate(SimulateArgs),
    /// Classify alerts against schedules and report Pr/Re/F1.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    /// Golden-run CSV, `-` for standard input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Walk-estimates file; defaults to `<out>.walk.json`.
    #[arg(long)]
    pub walk: Option<PathBuf>,
    /// Also write the validation runs as CSV.
    #[arg(long)]
    pub validation_out: Option<PathBuf>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "buckets", short = 'B')]
    pub buckets: Option<u32>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Profile file; its walk estimates are read from `<profile>.walk.json`.
    #[arg(long, conflicts_with = "walk", required_unless_present = "walk")]
    pub profile: Option<PathBuf>,
    /// Walk-estimates file.
    #[arg(long)]
    pub walk: Option<PathBuf>,
    /// Stream key `group/transaction/phase`; optional when the file holds one stream.
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long = "F")]
    pub target: Option<f64>,
    #[arg(long = "w")]
    pub weight: Option<f64>,
    #[arg(long)]
    pub model: Option<FalseAlarmModel>,
    /// Inclusive range such as `1..64`.
    #[arg(long)]
    pub d_range: Option<DepthRange>,
    /// Directory for `calibration.csv` and `calibration.json`.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub profile: PathBuf,
    /// Sample CSV; standard input when omitted or `-`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub alerts: PathBuf,
    #[arg(long = "buckets", short = 'B')]
    pub buckets: Option<u32>,
    #[arg(long = "depth", short = 'D')]
    pub depth: Option<u32>,
    #[arg(long)]
    pub direction: Option<Direction>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub golden_runs: Option<usize>,
    #[arg(long)]
    pub runs_per_fault: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Alerts file; repeat to merge several.
    #[arg(long, required = true)]
    pub alerts: Vec<PathBuf>,
    #[arg(long)]
    pub schedules: PathBuf,
    /// Report path; `.json` and `.csv` siblings are written.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[usage]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
