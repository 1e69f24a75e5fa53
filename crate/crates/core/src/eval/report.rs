use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    joint_goal_accuracy, joint_turn_accuracy, turn_level_accuracy, EvalError, Task, TurnResult,
};
use crate::router::{routing_report, Expert, RoutingReport};

pub const REPORT_FORMAT: &str = "gem-dst-run-report";
pub const REPORT_VERSION: u32 = 1;

const METRIC_DEFINITIONS: &[(&str, &str)] = &[
    (
        "jga",
        "share of user turns whose accumulated predicted state equals the gold state exactly",
    ),
    (
        "jta",
        "share of user turns whose predicted turn-level slot-value updates equal the gold updates exactly",
    ),
    ("intent_acc", "share of user turns whose predicted intent set equals the gold set"),
    ("domain_acc", "share of user turns whose predicted domain set equals the gold set"),
    ("slot_acc", "share of user turns whose predicted slot set equals the gold set"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub user_turns: usize,
    pub jga: f64,
    pub jta: f64,
    pub intent_acc: f64,
    pub domain_acc: f64,
    pub slot_acc: f64,
}

impl Metrics {
    pub fn from_results(results: &[TurnResult]) -> Result<Self, EvalError> {
        Ok(Self {
            user_turns: results.len(),
            jga: joint_goal_accuracy(results)?,
            jta: joint_turn_accuracy(results)?,
            intent_acc: turn_level_accuracy(results, Task::Intent)?,
            domain_acc: turn_level_accuracy(results, Task::Domain)?,
            slot_acc: turn_level_accuracy(results, Task::Slot)?,
        })
    }
}

/// Latency distribution of one component, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl LatencySummary {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[f64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = |p: f64| {
            let r = (p / 100.0 * sorted.len() as f64).ceil() as usize;
            sorted[r.clamp(1, sorted.len()) - 1]
        };
        Self {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: rank(50.0),
            p95: rank(95.0),
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub metric_definitions: BTreeMap<String, String>,
    pub metrics: Metrics,
    pub routed_gnn: usize,
    pub routed_seq: usize,
    pub routing: RoutingReport,
    pub latency_ms: BTreeMap<String, LatencySummary>,
    /// Failed turns per component.
    pub failures: BTreeMap<String, usize>,
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn from_results(
        results: &[TurnResult],
        config: serde_json::Value,
    ) -> Result<Self, EvalError> {
        let metrics = Metrics::from_results(results)?;
        let decisions: Vec<_> = results
            .iter()
            .filter_map(|r| r.route.clone().map(|d| (d, r.gold_domains.clone())))
            .collect();
        let routing = if decisions.is_empty() {
            RoutingReport::default()
        } else {
            routing_report(&decisions).map_err(|e| EvalError::Setup(e.to_string()))?
        };
        let count = |e: Expert| results.iter().filter(|r| r.expert == Some(e)).count();

        let mut latency_ms = BTreeMap::new();
        let components: [(&str, fn(&TurnResult) -> f64); 6] = [
            ("classify", |r| r.timings.classify_ms),
            ("route", |r| r.timings.route_ms),
            ("expert", |r| r.timings.expert_ms),
            ("retrieve", |r| r.timings.retrieve_ms),
            ("generate", |r| r.timings.generate_ms),
            ("total", |r| r.timings.total_ms()),
        ];
        for (name, get) in components {
            let samples: Vec<f64> = results.iter().map(get).collect();
            latency_ms.insert(name.to_string(), LatencySummary::from_samples(&samples));
        }

        let mut failures = BTreeMap::new();
        for f in results.iter().filter_map(|r| r.failure.as_ref()) {
            *failures.entry(f.component.clone()).or_insert(0) += 1;
        }

        Ok(Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            metric_definitions: METRIC_DEFINITIONS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            metrics,
            routed_gnn: count(Expert::Gnn),
            routed_seq: count(Expert::Seq),
            routing,
            latency_ms,
            failures,
            config,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "user turns   {}", m.user_turns);
        let _ = writeln!(s, "JGA          {:.4}", m.jga);
        let _ = writeln!(s, "JTA          {:.4}", m.jta);
        let _ = writeln!(s, "intent acc   {:.4}", m.intent_acc);
        let _ = writeln!(s, "domain acc   {:.4}", m.domain_acc);
        let _ = writeln!(s, "slot acc     {:.4}", m.slot_acc);
        let _ = writeln!(s, "routed gnn   {}", self.routed_gnn);
        let _ = writeln!(s, "routed seq   {}", self.routed_seq);
        for (component, n) in &self.failures {
            let _ = writeln!(s, "failed {component:<6}{n}");
        }
        if let Some(total) = self.latency_ms.get("total") {
            let _ = writeln!(s, "latency p50  {:.3} ms", total.p50);
            let _ = writeln!(s, "latency p95  {:.3} ms", total.p95);
        }
        s
    }
}

/// Writes `report.json`, `turns.jsonl`, `routing.csv` and `summary.txt` into `dir`.
pub fn write_run(dir: &Path, results: &[TurnResult], report: &RunReport) -> Result<(), EvalError> {
    let err = |path: &Path, e: &dyn std::fmt::Display| EvalError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| err(dir, &e))?;
    let mut turns = String::new();
    for r in results {
        turns.push_str(&serde_json::to_string(r).map_err(|e| err(dir, &e))?);
        turns.push('\n');
    }
    let files = [
        ("report.json", report.to_json()),
        ("turns.jsonl", turns),
        ("routing.csv", report.routing.to_csv()),
        ("summary.txt", report.summary()),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| err(&path, &e))?;
    }
    Ok(())
}

/// Reads a `turns.jsonl` file back into turn results.
pub fn read_turn_results(path: &Path) -> Result<Vec<TurnResult>, EvalError> {
    let err = |message: String| EvalError::Artifact {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    parse_turn_results(&text).map_err(err)
}

/// Parses `turns.jsonl` text; blank lines are skipped.
pub fn parse_turn_results(text: &str) -> Result<Vec<TurnResult>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tests::result;

    #[test]
    fn percentiles_use_nearest_rank() {
        let s = LatencySummary::from_samples(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((s.mean, s.p50, s.p95, s.max), (2.5, 2.0, 4.0, 4.0));
        assert_eq!(LatencySummary::from_samples(&[]), LatencySummary::default());
    }

    #[test]
    fn artifacts_round_trip() {
        let results = vec![
            result(0, &[("hotel-area", "north")], &[("hotel-area", "north")]),
            result(2, &[], &[("hotel-stars", "4")]),
        ];
        let report = RunReport::from_results(&results, serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(report.metrics.jga, 0.5);
        let dir = tempfile::tempdir().unwrap();
        write_run(dir.path(), &results, &report).unwrap();
        let back = read_turn_results(&dir.path().join("turns.jsonl")).unwrap();
        assert_eq!(back, results);
        let json: RunReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
                .unwrap();
        assert_eq!(json, report);
        assert!(dir.path().join("summary.txt").exists());
    }
}
