//! Alert classification and precision/recall/F1.
//!
//! Detection is scored per run: a faulted run is a true positive when at
//! least one alert lands in its attack interval, otherwise a false
//! negative. Every alert in the pre-attack interval is a false positive,
//! one per alert, so overflows on two transactions count twice.
//!
//! Alerts shortly after an attack are usually recovery transients (queues
//! draining). Post-attack alerts in `[t_end, t_end + c * delta)`, with
//! `delta` the mean time to first alarm during attacks, are counted as
//! residual and dropped. Post-attack alerts beyond that window count as
//! false positives.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::detector::AlertEvent;
use crate::error::{Error, Result};
use crate::workload::{Schedule, ScheduleRecord};

/// Alerts raised during one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAlerts {
    pub run_id: String,
    pub alerts: Vec<AlertEvent>,
}

/// What the evaluator needs to know about a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub run_id: String,
    pub fault_model: String,
    pub schedule: Schedule,
    pub faulted: bool,
}

impl From<&ScheduleRecord> for RunLabel {
    fn from(r: &ScheduleRecord) -> Self {
        Self {
            run_id: r.run_id.clone(),
            fault_model: r.fault_model.clone(),
            schedule: r.schedule(),
            faulted: r.is_faulted(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassifiedCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub residual: u64,
}

impl Add for ClassifiedCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            residual: self.residual + o.residual,
        }
    }
}

impl AddAssign for ClassifiedCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

/// `None` marks an undefined ratio (zero denominator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn metrics(counts: &ClassifiedCounts) -> Metrics {
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Metrics {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualPolicy {
    /// Mean time to first alarm during attacks, seconds.
    pub delta: f64,
    pub c: f64,
}

impl ResidualPolicy {
    pub const DEFAULT_C: f64 = 3.0;

    pub fn new(delta: f64, c: f64) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0 && c.is_finite() && c >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "residual policy needs delta >= 0 and c >= 0, got delta={delta}, c={c}"
            )));
        }
        Ok(Self { delta, c })
    }

    pub fn window(&self) -> f64 {
        self.c * self.delta
    }
}

/// Mean over faulted runs of (first attack-phase alert time - attack start).
/// Runs without an attack-phase alert are skipped.
pub fn mean_time_to_first_alarm(labels: &[RunLabel], alerts: &[RunAlerts]) -> Result<f64> {
    let by_run: BTreeMap<&str, &RunAlerts> = alerts.iter().map(|a| (a.run_id.as_str(), a)).collect();
    let offsets: Vec<f64> = labels
        .iter()
        .filter(|l| l.faulted)
        .filter_map(|l| {
            let attack = l.schedule.attack;
            by_run.get(l.run_id.as_str()).and_then(|ra| {
                ra.alerts
                    .iter()
                    .map(|a| a.time)
                    .filter(|&t| attack.contains(t))
                    .min_by(f64::total_cmp)
                    .map(|t| t - attack.start)
            })
        })
        .collect();
    if offsets.is_empty() {
        return Err(Error::NoAttackAlarms);
    }
    Ok(offsets.iter().sum::<f64>() / offsets.len() as f64)
}

/// Splits alerts into kept ones and the count of residual post-attack
/// alerts in `[attack_end, attack_end + c * delta)`.
pub fn residual_filter(
    alerts: &[AlertEvent],
    attack_end: f64,
    policy: &ResidualPolicy,
) -> (Vec<AlertEvent>, u64) {
    let limit = attack_end + policy.window();
    let mut kept = Vec::with_capacity(alerts.len());
    let mut residual = 0;
    for a in alerts {
        if a.time >= attack_end && a.time < limit {
            residual += 1;
        } else {
            kept.push(a.clone());
        }
    }
    (kept, residual)
}

/// Classifies the (already filtered) alerts of one run.
pub fn classify(label: &RunLabel, kept: &[AlertEvent], residual: u64) -> Result<ClassifiedCounts> {
    let s = &label.schedule;
    let mut counts = ClassifiedCounts {
        residual,
        ..Default::default()
    };
    let mut detected = false;
    for a in kept {
        if s.attack.contains(a.time) {
            detected = true;
        } else if s.pre.contains(a.time) || s.post.contains(a.time) {
            counts.fp += 1;
        } else {
            return Err(Error::AlertOutsideSchedule {
                run_id: label.run_id.clone(),
                time: a.time,
            });
        }
    }
    if label.faulted {
        if detected {
            counts.tp = 1;
        } else {
            counts.fn_ = 1;
        }
    }
    Ok(counts)
}

/// Residual filtering followed by classification, for one run.
pub fn evaluate_run(label: &RunLabel, alerts: &[AlertEvent], policy: &ResidualPolicy) -> Result<ClassifiedCounts> {
    let (kept, residual) = if label.faulted {
        residual_filter(alerts, label.schedule.attack.end, policy)
    } else {
        (alerts.to_vec(), 0)
    };
    classify(label, &kept, residual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub fault_model: String,
    #[serde(rename = "B")]
    pub buckets: u32,
    #[serde(rename = "D")]
    pub depth: u32,
    #[serde(flatten)]
    pub counts: ClassifiedCounts,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub policy: ResidualPolicy,
    /// Post-attack alerts outside the residual window are counted as FP.
    pub post_attack_beyond_window: String,
    pub rows: Vec<EvaluationRow>,
}

/// One row per fault model (sorted by name) followed by an `all` row.
/// Runs without an alerts entry are treated as alert-free.
pub fn evaluation_report(
    labels: &[RunLabel],
    alerts: &[RunAlerts],
    policy: &ResidualPolicy,
    buckets: u32,
    depth: u32,
) -> Result<EvaluationReport> {
    let by_run: BTreeMap<&str, &RunAlerts> = alerts.iter().map(|a| (a.run_id.as_str(), a)).collect();
    let mut per_model: BTreeMap<&str, ClassifiedCounts> = BTreeMap::new();
    for label in labels {
        let run_alerts = by_run.get(label.run_id.as_str()).map_or(&[][..], |a| &a.alerts[..]);
        let counts = evaluate_run(label, run_alerts, policy)?;
        *per_model.entry(label.fault_model.as_str()).or_default() += counts;
    }
    let total = per_model.values().fold(ClassifiedCounts::default(), |acc, &c| acc + c);
    let row = |name: &str, counts: ClassifiedCounts| EvaluationRow {
        fault_model: name.to_string(),
        buckets,
        depth,
        counts,
        metrics: metrics(&counts),
    };
    let mut rows: Vec<EvaluationRow> = per_model.iter().map(|(name, &c)| row(name, c)).collect();
    rows.push(row("all", total));
    Ok(EvaluationReport {
        policy: *policy,
        post_attack_beyond_window: "fp".into(),
        rows,
    })
}

impl EvaluationReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "fault_model", "B", "D", "tp", "fp", "fn", "residual", "precision", "recall", "f1",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            wtr.write_record([
                r.fault_model.clone(),
                r.buckets.to_string(),
                r.depth.to_string(),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.fn_.to_string(),
                r.counts.residual.to_string(),
                opt(r.metrics.precision),
                opt(r.metrics.recall),
                opt(r.metrics.f1),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::StreamKey;

    fn alert(tx: &str, time: f64) -> AlertEvent {
        AlertEvent {
            key: StreamKey::new("G1", tx, "4"),
            sample_index: time as u64 + 1,
            time,
        }
    }

    fn label(faulted: bool) -> RunLabel {
        RunLabel {
            run_id: "r".into(),
            fault_model: "4H".into(),
            schedule: Schedule::new(0.0, 100.0, 400.0, 1000.0).unwrap(),
            faulted,
        }
    }

    #[test]
    fn reference_metrics() {
        let m = metrics(&ClassifiedCounts { tp: 9, fp: 1, fn_: 1, residual: 0 });
        assert!((m.precision.unwrap() - 0.9).abs() < 1e-15);
        assert!((m.recall.unwrap() - 0.9).abs() < 1e-15);
        assert!((m.f1.unwrap() - 0.9).abs() < 1e-15);

        let m = metrics(&ClassifiedCounts { tp: 3, fp: 1, fn_: 3, residual: 0 });
        assert_eq!(m.precision, Some(0.75));
        assert_eq!(m.recall, Some(0.5));
        assert!((m.f1.unwrap() - 0.6).abs() < 1e-15);

        let m = metrics(&ClassifiedCounts { tp: 0, fp: 0, fn_: 2, residual: 0 });
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, Some(0.0));
        assert_eq!(m.f1, None);
    }

    #[test]
    fn first_alarm_mean() {
        let mk = |id: &str| RunLabel {
            run_id: id.into(),
            ..label(true)
        };
        let labels = [mk("a"), mk("b"), mk("c")];
        let alerts = [
            RunAlerts { run_id: "a".into(), alerts: vec![alert("TL", 160.0), alert("TL", 200.0)] },
            RunAlerts { run_id: "b".into(), alerts: vec![alert("TL", 50.0), alert("TO", 180.0)] },
            // Alert before the attack only: excluded.
            RunAlerts { run_id: "c".into(), alerts: vec![alert("TL", 20.0)] },
        ];
        assert_eq!(mean_time_to_first_alarm(&labels, &alerts).unwrap(), 70.0);
        let single = [RunAlerts { run_id: "a".into(), alerts: vec![alert("TL", 169.18)] }];
        assert!((mean_time_to_first_alarm(&labels[..1], &single).unwrap() - 69.18).abs() < 1e-9);
        assert!(matches!(
            mean_time_to_first_alarm(&labels[2..], &alerts[2..]),
            Err(Error::NoAttackAlarms)
        ));
    }

    #[test]
    fn residual_window() {
        let policy = ResidualPolicy::new(69.18, 3.0).unwrap();
        let alerts = [alert("TL", 500.0), alert("TL", 650.0)];
        let (kept, residual) = residual_filter(&alerts, 400.0, &policy);
        assert_eq!(residual, 1);
        assert_eq!(kept, vec![alert("TL", 650.0)]);

        let none = ResidualPolicy::new(69.18, 0.0).unwrap();
        let (kept, residual) = residual_filter(&alerts, 400.0, &none);
        assert_eq!((kept.len(), residual), (2, 0));

        let pre = [alert("TL", 10.0)];
        assert_eq!(residual_filter(&pre, 400.0, &policy), (pre.to_vec(), 0));

        let edges = [alert("TL", 400.0), alert("TL", 410.0)];
        let tight = ResidualPolicy::new(5.0, 2.0).unwrap();
        assert_eq!(residual_filter(&edges, 400.0, &tight), (vec![alert("TL", 410.0)], 1));
        assert_eq!(residual_filter(&edges, 400.0, &none).1, 0);
        assert!(ResidualPolicy::new(-1.0, 3.0).is_err());
    }

    #[test]
    fn run_level_true_positive() {
        let c = classify(&label(true), &[alert("TL", 150.0), alert("TO", 250.0)], 0).unwrap();
        assert_eq!(c, ClassifiedCounts { tp: 1, fp: 0, fn_: 0, residual: 0 });
    }

    #[test]
    fn distinct_transactions_are_distinct_fps() {
        let c = classify(&label(true), &[alert("TL", 10.0), alert("TO", 10.0)], 0).unwrap();
        assert_eq!(c.fp, 2);
        assert_eq!(c.fn_, 1);
    }

    #[test]
    fn silent_run_is_false_negative() {
        let c = classify(&label(true), &[], 0).unwrap();
        assert_eq!(c, ClassifiedCounts { tp: 0, fp: 0, fn_: 1, residual: 0 });
        let golden = classify(&label(false), &[], 0).unwrap();
        assert_eq!(golden, ClassifiedCounts::default());
    }

    #[test]
    fn alert_outside_schedule_rejected() {
        assert!(matches!(
            classify(&label(true), &[alert("TL", 5000.0)], 0),
            Err(Error::AlertOutsideSchedule { .. })
        ));
    }

    #[test]
    fn report_has_all_row_and_csv_layout() {
        let labels = vec![
            RunLabel { run_id: "x".into(), ..label(true) },
            RunLabel { run_id: "y".into(), fault_model: "6L".into(), ..label(true) },
        ];
        let policy = ResidualPolicy::new(10.0, 3.0).unwrap();
        let report = evaluation_report(&labels, &[], &policy, 2, 15).unwrap();
        assert_eq!(report.rows.len(), 3);
        assert_eq!(report.rows[2].fault_model, "all");
        assert_eq!(report.rows[2].counts.fn_, 2);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("fault_model,B,D,tp,fp,fn,residual,precision,recall,f1\n"));
        assert!(text.contains("4H,2,15,0,0,1,0,,0,\n"));
    }
}
