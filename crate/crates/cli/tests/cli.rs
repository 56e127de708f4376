use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use bucketwatch::profile::write_samples;
use bucketwatch::workload::{PhaseSpec, TRANSACTIONS};
use bucketwatch::{generate_golden, min_depth_hard, DepthRange, FalseAlarmModel, WalkParams, WorkloadSpec};

const BIN: &str = env!("CARGO_BIN_EXE_bucketwatch");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    run_with(args, None, &[])
}

fn run_with(args: &[&str], stdin: Option<&[u8]>, env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args)
        .env_remove("BUCKETWATCH_CONFIG")
        .envs(env.iter().copied())
        .stdin(if stdin.is_some() { Stdio::piped() } else { Stdio::null() })
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    let mut child = cmd.spawn().expect("spawn bucketwatch");
    if let Some(bytes) = stdin {
        use std::io::Write;
        child.stdin.take().unwrap().write_all(bytes).unwrap();
    }
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

/// Fails with exactly one `error[category]: ...` line on stderr.
fn assert_single_line_error(o: &Output, category: &str) {
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with(&format!("error[{category}]: ")), "{err}");
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// 4 groups x 9 transactions, one 5-minute phase, written as CSV.
fn write_golden_grid(dir: &Path, runs: usize) -> PathBuf {
    let spec = WorkloadSpec::grid(
        &["G1", "G2", "G3", "G4"],
        &TRANSACTIONS,
        vec![PhaseSpec {
            id: "4".into(),
            duration_s: 300.0,
            mean_tps: 100.0,
            sigma_tps: 10.0,
        }],
    );
    let golden = generate_golden(&spec, runs, 3).unwrap();
    let path = dir.join("golden.csv");
    let mut buf = Vec::new();
    write_samples(&mut buf, &golden).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

#[test]
fn profile_emits_36_keys_and_walk_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_golden_grid(dir.path(), 5);
    let out = dir.path().join("profile.json");
    let o = run(&["profile", "--input", p(&csv), "--out", p(&out), "--split", "0.6", "--seed", "1"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("36 keys from 3 runs"));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["entries"].as_array().unwrap().len(), 36);
    let walk: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("profile.walk.json")).unwrap()).unwrap();
    assert_eq!(walk["entries"].as_array().unwrap().len(), 36);
}

#[test]
fn profile_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_golden_grid(dir.path(), 4);
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("p{i}.json"));
        let val = dir.path().join(format!("v{i}.csv"));
        assert_ok(&run(&[
            "profile", "--input", p(&csv), "--out", p(&out), "--validation-out", p(&val), "--seed", "9",
        ]));
        outputs.push((
            std::fs::read(&out).unwrap(),
            std::fs::read(out.with_extension("walk.json")).unwrap(),
            std::fs::read(&val).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn profile_of_empty_input_fails() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("empty.csv");
    std::fs::write(&csv, "run_id,group,transaction,phase,t_seconds,throughput_tps\n").unwrap();
    let out = dir.path().join("profile.json");
    let o = run(&["profile", "--input", p(&csv), "--out", p(&out)]);
    assert_single_line_error(&o, "runs");
    assert!(!out.exists());

    std::fs::write(&csv, "").unwrap();
    assert_single_line_error(&run(&["profile", "--input", p(&csv), "--out", p(&out)]), "runs");
}

#[test]
fn calibrate_fixture_exponential_picks_15() {
    let walk = fixture("trade_lookup_walk.json");
    let o = run(&["calibrate", "--walk", p(&walk), "--alpha", "2e-6", "--F", "0.03", "--model", "exponential"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("chosen_hard: D=15 "), "{}", stdout(&o));
}

#[test]
fn calibrate_fixture_deterministic_matches_library() {
    let walk = fixture("trade_lookup_walk.json");
    let o = run(&["calibrate", "--walk", p(&walk), "--model", "deterministic", "--key", "G1/TRADE_LOOKUP/4"]);
    assert_ok(&o);
    let params = WalkParams::from_slice(&[0.46, 0.71]).unwrap();
    let d = min_depth_hard(&params, 2e-6, 0.03, FalseAlarmModel::Deterministic, DepthRange::default())
        .unwrap()
        .unwrap();
    assert!(stdout(&o).contains(&format!("chosen_hard: D={d} ")), "{}", stdout(&o));
}

#[test]
fn calibrate_with_zero_alpha_is_infeasible() {
    let walk = fixture("trade_lookup_walk.json");
    let o = run(&["calibrate", "--walk", p(&walk), "--alpha", "0"]);
    assert_ok(&o);
    assert!(stdout(&o).contains("chosen_hard: infeasible"));
}

#[test]
fn calibrate_writes_sweep_files() {
    let dir = tempfile::tempdir().unwrap();
    let walk = fixture("trade_lookup_walk.json");
    assert_ok(&run(&["calibrate", "--walk", p(&walk), "--d-range", "1..30", "--out-dir", p(dir.path())]));
    let csv = std::fs::read_to_string(dir.path().join("calibration.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("calibration.json")).unwrap()).unwrap();
    assert_eq!(json["chosen_hard"], 15);
}

#[test]
fn flags_override_config_and_env_supplies_default_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"calibration": {"alpha": 0}}"#).unwrap();
    let walk = fixture("trade_lookup_walk.json");

    let o = run_with(&["calibrate", "--walk", p(&walk)], None, &[("BUCKETWATCH_CONFIG", p(&cfg))]);
    assert!(stdout(&o).contains("infeasible"));
    let o = run_with(&["calibrate", "--walk", p(&walk), "--alpha", "2e-6"], None, &[("BUCKETWATCH_CONFIG", p(&cfg))]);
    assert!(stdout(&o).contains("chosen_hard: D=15 "));
    let o = run(&["--config", p(&cfg), "calibrate", "--walk", p(&walk)]);
    assert!(stdout(&o).contains("infeasible"));
}

#[test]
fn bad_config_and_usage_errors_are_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"detector": {"bogus": 1}}"#).unwrap();
    let walk = fixture("trade_lookup_walk.json");
    assert_single_line_error(&run(&["--config", p(&cfg), "calibrate", "--walk", p(&walk)]), "config");
    assert_single_line_error(&run(&["calibrate"]), "usage");
    assert_single_line_error(&run(&["calibrate", "--walk", p(&walk), "--model", "weird"]), "usage");
}

struct Pipeline {
    dir: tempfile::TempDir,
    cfg: PathBuf,
}

impl Pipeline {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--config", p(&self.cfg)];
        full.extend_from_slice(args);
        run(&full)
    }
}

fn simulated() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let pl = Pipeline {
        cfg: fixture("small_config.json"),
        dir,
    };
    let sim = pl.path("sim");
    assert_ok(&pl.run(&["simulate", "--out-dir", p(&sim)]));
    assert_ok(&pl.run(&[
        "profile",
        "--input",
        p(&sim.join("golden.csv")),
        "--out",
        p(&pl.path("profile.json")),
        "--validation-out",
        p(&pl.path("val.csv")),
    ]));
    pl
}

#[test]
fn simulate_is_deterministic() {
    let pl = simulated();
    let again = pl.path("sim2");
    assert_ok(&pl.run(&["simulate", "--out-dir", p(&again)]));
    for f in ["golden.csv", "campaign.csv", "schedules.json"] {
        assert_eq!(
            std::fs::read(pl.path("sim").join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f}"
        );
    }
    let other = pl.path("sim3");
    assert_ok(&pl.run(&["simulate", "--out-dir", p(&other), "--seed", "12"]));
    assert_ne!(
        std::fs::read(pl.path("sim").join("golden.csv")).unwrap(),
        std::fs::read(other.join("golden.csv")).unwrap()
    );
}

#[test]
fn detect_flags_h_attacks_and_reads_stdin() {
    let pl = simulated();
    let campaign = pl.path("sim").join("campaign.csv");
    let from_file = pl.path("a1.json");
    let o = pl.run(&[
        "detect", "--profile", p(&pl.path("profile.json")), "--input", p(&campaign), "--alerts", p(&from_file), "-D", "13",
    ]);
    assert_ok(&o);

    let from_stdin = pl.path("a2.json");
    let bytes = std::fs::read(&campaign).unwrap();
    let o = run_with(
        &[
            "--config", p(&pl.cfg), "detect", "--profile", p(&pl.path("profile.json")), "--alerts", p(&from_stdin), "-D", "13",
        ],
        Some(&bytes),
        &[],
    );
    assert_ok(&o);
    assert_eq!(std::fs::read(&from_file).unwrap(), std::fs::read(&from_stdin).unwrap());

    let alerts: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&from_file).unwrap()).unwrap();
    let schedules: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(pl.path("sim").join("schedules.json")).unwrap()).unwrap();
    for run in alerts["runs"].as_array().unwrap() {
        let id = run["run_id"].as_str().unwrap();
        if !id.starts_with("4H-") {
            continue;
        }
        let sched = schedules["runs"].as_array().unwrap().iter().find(|r| r["run_id"] == id).unwrap();
        let (a, b) = (sched["attack"]["start"].as_f64().unwrap(), sched["attack"]["end"].as_f64().unwrap());
        let hits = run["alerts"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|x| (a..b).contains(&x["time"].as_f64().unwrap()))
            .count();
        assert!(hits >= 1, "{id}");
    }
}

#[test]
fn detect_rejects_malformed_csv() {
    let pl = simulated();
    let bad = pl.path("bad.csv");
    std::fs::write(&bad, "run_id,group,transaction,phase,t_seconds,throughput_tps\nr,G1,TRADE_LOOKUP,4,-1,5\n").unwrap();
    let o = pl.run(&["detect", "--profile", p(&pl.path("profile.json")), "--input", p(&bad), "--alerts", p(&pl.path("a.json"))]);
    assert_single_line_error(&o, "parse");
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn golden_validation_is_quiet() {
    let pl = simulated();
    let alerts = pl.path("val.json");
    let o = pl.run(&[
        "detect", "--profile", p(&pl.path("profile.json")), "--input", p(&pl.path("val.csv")), "--alerts", p(&alerts), "-D", "15",
    ]);
    assert_ok(&o);
    assert!(stdout(&o).starts_with("detect: 0 alerts"), "{}", stdout(&o));
}

#[test]
fn evaluate_without_alerts_reports_all_false_negatives() {
    let pl = simulated();
    let empty = pl.path("empty.json");
    std::fs::write(&empty, r#"{"version": 1, "B": 2, "D": 13, "direction": "lower_is_anomalous", "runs": []}"#).unwrap();
    let report = pl.path("report");
    assert_ok(&pl.run(&["evaluate", "--alerts", p(&empty), "--schedules", p(&pl.path("sim").join("schedules.json")), "--out", p(&report)]));
    let csv = std::fs::read_to_string(report.with_extension("csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    // 4H, 4L, 6Ls, golden, all
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.last().unwrap(), &"all,2,13,0,0,9,0,,0,");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["post_attack_beyond_window"], "fp");
}

#[test]
fn full_pipeline_scores_campaign() {
    let pl = simulated();
    let sim = pl.path("sim");
    let prof = pl.path("profile.json");
    let (a1, a2) = (pl.path("camp.json"), pl.path("gold.json"));
    assert_ok(&pl.run(&["detect", "--profile", p(&prof), "--input", p(&sim.join("campaign.csv")), "--alerts", p(&a1)]));
    assert_ok(&pl.run(&["detect", "--profile", p(&prof), "--input", p(&pl.path("val.csv")), "--alerts", p(&a2)]));
    let report = pl.path("out/report.json");
    let schedules = sim.join("schedules.json");
    let args = [
        "evaluate", "--alerts", p(&a1), "--alerts", p(&a2), "--schedules", p(&schedules), "--out", p(&report),
    ];
    assert_ok(&pl.run(&args));
    let first = std::fs::read(&report).unwrap();
    assert_ok(&pl.run(&args));
    assert_eq!(first, std::fs::read(&report).unwrap());

    let json: serde_json::Value = serde_json::from_str(&String::from_utf8(first).unwrap()).unwrap();
    let row = |name: &str| json["rows"].as_array().unwrap().iter().find(|r| r["fault_model"] == name).unwrap().clone();
    assert_eq!(row("4H")["recall"], 1.0);
    assert_eq!(row("all")["fp"], 0);

    // Alerts for a run the schedules do not know about.
    let stray = pl.path("stray.json");
    std::fs::write(&stray, r#"{"version": 1, "B": 2, "D": 13, "direction": "lower_is_anomalous", "runs": [{"run_id": "nope", "alerts": []}]}"#).unwrap();
    let o = pl.run(&["evaluate", "--alerts", p(&stray), "--schedules", p(&schedules), "--out", p(&report)]);
    assert_single_line_error(&o, "config");
}
