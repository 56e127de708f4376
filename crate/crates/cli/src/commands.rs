use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use bucketwatch::profile::{profile_to_json, write_samples};
use bucketwatch::workload::ScheduleRecord;
use bucketwatch::{
    calibration_report, compute_baseline, estimate_walk_table, evaluation_report, generate_campaign,
    generate_golden, load_profile, mean_time_to_first_alarm, read_samples, run_detector_with,
    split_runs, CalibrationQuery, Error, LabeledRun, Result, Run, RunAlerts, RunLabel, RunRole,
    RunSet, ResidualPolicy, ScheduleFile, StreamKey, WalkEstimates,
};

use crate::config::Config;
use crate::output::{write_atomic, AlertsFile, ALERTS_VERSION};
use crate::{CalibrateArgs, Cli, Command, DetectArgs, EvaluateArgs, ProfileArgs, SimulateArgs};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Profile(a) => profile(cfg, a),
        Command::Calibrate(a) => calibrate(cfg, a),
        Command::Detect(a) => detect(cfg, a),
        Command::Simulate(a) => simulate(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
    }
}

fn read_input(path: Option<&Path>) -> Result<RunSet> {
    match path {
        Some(p) if p != Path::new("-") => bucketwatch::load_samples(p),
        _ => {
            let mut buf = Vec::new();
            std::io::stdin().lock().read_to_end(&mut buf)?;
            read_samples(&buf[..])
        }
    }
}

fn csv_bytes(runs: &RunSet) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_samples(&mut buf, runs)?;
    Ok(buf)
}

fn default_walk_path(profile: &Path) -> PathBuf {
    profile.with_extension("walk.json")
}

fn profile(mut cfg: Config, a: ProfileArgs) -> Result<()> {
    if let Some(r) = a.split {
        cfg.profiling.split = r;
    }
    if let Some(s) = a.seed {
        cfg.profiling.seed = s;
    }
    if let Some(b) = a.buckets {
        cfg.detector.buckets = b;
    }
    cfg.validate()?;
    let p = &cfg.profiling;

    let mut runs = read_input(Some(&a.input))?;
    runs.filter_transactions(p.include.as_deref(), &p.exclude);
    let (prof_runs, val_runs) = split_runs(&runs, p.split, p.seed)?;
    let baseline = compute_baseline(&prof_runs)?;
    let walk = estimate_walk_table(
        &prof_runs,
        &baseline,
        cfg.detector.buckets,
        cfg.detector.direction,
        p.min_samples,
    )?;

    write_atomic(&a.out, profile_to_json(&baseline)?.as_bytes())?;
    let walk_path = a.walk.unwrap_or_else(|| default_walk_path(&a.out));
    write_atomic(&walk_path, walk.to_json()?.as_bytes())?;
    if let Some(path) = &a.validation_out {
        write_atomic(path, &csv_bytes(&val_runs)?)?;
    }
    println!(
        "profile: {} keys from {} runs; validation: {} runs",
        baseline.len(),
        prof_runs.len(),
        val_runs.len()
    );
    if !walk.insufficient.is_empty() {
        println!("walk: {} keys with too few samples", walk.insufficient.len());
    }
    Ok(())
}

fn calibrate(mut cfg: Config, a: CalibrateArgs) -> Result<()> {
    let c = &mut cfg.calibration;
    if let Some(v) = a.alpha {
        c.alpha = v;
    }
    if let Some(v) = a.target {
        c.target = v;
    }
    if let Some(v) = a.weight {
        c.weight = v;
    }
    if let Some(v) = a.model {
        c.model = v;
    }
    if let Some(v) = a.d_range {
        c.d_range = v;
    }
    let query = CalibrationQuery {
        alpha: c.alpha,
        target: c.target,
        weight: c.weight,
        model: c.model,
        depths: c.d_range,
    };

    let walk_path = match (&a.walk, &a.profile) {
        (Some(w), _) => w.clone(),
        (None, Some(p)) => default_walk_path(p),
        (None, None) => unreachable!("clap requires --profile or --walk"),
    };
    let walk = WalkEstimates::from_json(&std::fs::read_to_string(&walk_path)?)?;
    let key: StreamKey = match &a.key {
        Some(k) => k.parse()?,
        None if walk.entries.len() == 1 => walk.entries[0].key.clone(),
        None => {
            return Err(Error::InvalidConfig(format!(
                "--key is required: {} holds {} streams",
                walk_path.display(),
                walk.entries.len()
            )))
        }
    };
    let p = walk
        .get(&key)
        .ok_or_else(|| Error::MissingBaseline(format!("no walk estimate for {key}")))?;
    let report = calibration_report(&p, &query)?;

    if let Some(dir) = &a.out_dir {
        let mut csv = Vec::new();
        report.write_csv(&mut csv)?;
        write_atomic(&dir.join("calibration.csv"), &csv)?;
        write_atomic(&dir.join("calibration.json"), report.to_json()?.as_bytes())?;
    }

    let ps: Vec<String> = report.p.iter().map(f64::to_string).collect();
    println!("key: {key} B={} p=[{}]", report.buckets, ps.join(", "));
    println!(
        "model: {} alpha={} F={} w={}",
        query.model, query.alpha, query.target, query.weight
    );
    match report.chosen_hard {
        Some(d) => {
            let w = report
                .inferred_weight
                .map_or_else(|| "none".to_string(), |w| format!("{w:.6}"));
            println!(
                "chosen_hard: D={d} L={} inferred_w={w}",
                report.lower_bound_l.unwrap_or_default()
            );
        }
        None => println!(
            "chosen_hard: infeasible in D={}..={}",
            query.depths.min, query.depths.max
        ),
    }
    println!("chosen_soft: D={}", report.chosen_soft);
    Ok(())
}

fn detect(mut cfg: Config, a: DetectArgs) -> Result<()> {
    if let Some(b) = a.buckets {
        cfg.detector.buckets = b;
    }
    if let Some(d) = a.depth {
        cfg.detector.depth = d;
    }
    if let Some(dir) = a.direction {
        cfg.detector.direction = dir;
    }
    cfg.validate()?;
    let baseline = load_profile(&a.profile)?;
    let mut runs = read_input(a.input.as_deref())?;
    runs.filter_transactions(cfg.profiling.include.as_deref(), &cfg.profiling.exclude);

    let det = &cfg.detector;
    let out = runs
        .runs
        .iter()
        .map(|run| {
            Ok(RunAlerts {
                run_id: run.run_id.clone(),
                alerts: run_detector_with(&run.samples, &baseline, |k| det.config_for(k))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let file = AlertsFile {
        version: ALERTS_VERSION,
        buckets: det.buckets,
        depth: det.depth,
        depth_by_transaction: det.depth_by_transaction.clone(),
        direction: det.direction,
        runs: out,
    };
    write_atomic(&a.alerts, file.to_json()?.as_bytes())?;
    println!("detect: {} alerts over {} runs", file.alert_count(), file.runs.len());
    Ok(())
}

fn simulate(mut cfg: Config, a: SimulateArgs) -> Result<()> {
    let s = &mut cfg.simulation;
    if let Some(v) = a.seed {
        s.seed = v;
    }
    if let Some(v) = a.golden_runs {
        s.golden_runs = v;
    }
    if let Some(v) = a.runs_per_fault {
        s.runs_per_fault = v;
    }
    cfg.validate()?;
    let s = &cfg.simulation;

    let golden = generate_golden(&s.workload, s.golden_runs, s.seed)?;
    let campaign = generate_campaign(&s.workload, &s.faults, s.runs_per_fault, s.seed)?;
    let duration = s.workload.total_duration();

    let mut records: Vec<ScheduleRecord> = golden
        .runs
        .iter()
        .map(|r| LabeledRun::golden(r.clone(), duration).schedule_record())
        .collect();
    records.extend(campaign.iter().map(LabeledRun::schedule_record));
    let faulted = RunSet::new(
        campaign
            .into_iter()
            .map(|l| Run {
                run_id: l.run_id,
                samples: l.samples,
            })
            .collect(),
        RunRole::Faulted,
    )?;

    write_atomic(&a.out_dir.join("golden.csv"), &csv_bytes(&golden)?)?;
    write_atomic(&a.out_dir.join("campaign.csv"), &csv_bytes(&faulted)?)?;
    write_atomic(
        &a.out_dir.join("schedules.json"),
        ScheduleFile::new(records).to_json()?.as_bytes(),
    )?;
    let models: BTreeSet<String> = s.faults.iter().map(|f| f.label()).collect();
    println!(
        "simulate: {} golden runs, {} faulted runs over {} fault models",
        golden.len(),
        faulted.len(),
        models.len()
    );
    Ok(())
}

fn evaluate(cfg: Config, a: EvaluateArgs) -> Result<()> {
    let schedules = ScheduleFile::from_json(&std::fs::read_to_string(&a.schedules)?)?;
    let labels: Vec<RunLabel> = schedules.runs.iter().map(RunLabel::from).collect();
    let known = schedules.by_run();

    let mut merged: Option<AlertsFile> = None;
    for path in &a.alerts {
        let file = AlertsFile::from_json(&std::fs::read_to_string(path)?)?;
        if let Some(r) = file.runs.iter().find(|r| !known.contains_key(r.run_id.as_str())) {
            return Err(Error::InvalidConfig(format!(
                "{}: run {} is not in the schedules",
                path.display(),
                r.run_id
            )));
        }
        match &mut merged {
            None => merged = Some(file),
            Some(m) => {
                if (m.buckets, m.depth, &m.depth_by_transaction)
                    != (file.buckets, file.depth, &file.depth_by_transaction)
                {
                    return Err(Error::InvalidConfig(format!(
                        "{} uses a different detector configuration",
                        path.display()
                    )));
                }
                m.runs.extend(file.runs);
            }
        }
    }
    let alerts = merged.expect("clap requires at least one --alerts");
    let mut seen = BTreeSet::new();
    if let Some(r) = alerts.runs.iter().find(|r| !seen.insert(r.run_id.as_str())) {
        return Err(Error::DuplicateRun(r.run_id.clone()));
    }

    let c = a.c.unwrap_or(cfg.evaluation.c);
    let delta = match a.delta.or(cfg.evaluation.delta) {
        Some(d) => d,
        None => match mean_time_to_first_alarm(&labels, &alerts.runs) {
            Ok(d) => d,
            Err(Error::NoAttackAlarms) => 0.0,
            Err(e) => return Err(e),
        },
    };
    let policy = ResidualPolicy::new(delta, c)?;
    let report = evaluation_report(&labels, &alerts.runs, &policy, alerts.buckets, alerts.depth)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_atomic(&a.out.with_extension("json"), report.to_json()?.as_bytes())?;
    write_atomic(&a.out.with_extension("csv"), &csv)?;
    println!("residual window: c={c} delta={delta}");
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}
