//! Metrics, pipeline orchestration, run reports and ablation sweeps.

mod pipeline;
mod report;
mod sweep;
pub mod synthetic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use pipeline::{run_pipeline, Pipeline, TimingSource};
pub use report::{
    parse_turn_results, read_turn_results, write_run, LatencySummary, Metrics, RunReport,
    REPORT_FORMAT, REPORT_VERSION,
};
pub use sweep::{ablation_sweep, SweepCell, SweepRow, SweepSetup};

use crate::dialogue::SlotValues;
use crate::router::{Expert, RouteDecision};
use crate::valuegen::{ReactTrace, SlotValuePrediction};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no user turns to score")]
    Empty,
    #[error("{path}: {message}")]
    Artifact { path: String, message: String },
    #[error("pipeline setup: {0}")]
    Setup(String),
}

/// Wall time per pipeline component, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ComponentTimings {
    pub classify_ms: f64,
    pub route_ms: f64,
    pub expert_ms: f64,
    pub retrieve_ms: f64,
    pub generate_ms: f64,
}

impl ComponentTimings {
    pub fn total_ms(&self) -> f64 {
        self.classify_ms + self.route_ms + self.expert_ms + self.retrieve_ms + self.generate_ms
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnFailure {
    pub component: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum GenerationRecord {
    Skipped,
    Direct(SlotValuePrediction),
    React(ReactTrace),
}

/// Everything recorded for one user turn; metrics are computed from these alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub dialogue_id: String,
    pub turn: usize,
    pub route: Option<RouteDecision>,
    pub expert: Option<Expert>,
    pub predicted_intents: BTreeSet<String>,
    pub predicted_domains: BTreeSet<String>,
    pub predicted_slots: BTreeSet<String>,
    pub predicted_turn_pairs: SlotValues,
    pub predicted_state: SlotValues,
    pub gold_intents: BTreeSet<String>,
    pub gold_domains: BTreeSet<String>,
    pub gold_slots: BTreeSet<String>,
    pub gold_turn_pairs: SlotValues,
    pub gold_state: SlotValues,
    pub retrieved: Vec<String>,
    pub generation: GenerationRecord,
    pub timings: ComponentTimings,
    pub failure: Option<TurnFailure>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Intent,
    Domain,
    Slot,
}

fn fraction(results: &[TurnResult], hit: impl Fn(&TurnResult) -> bool) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(results.iter().filter(|r| hit(r)).count() as f64 / results.len() as f64)
}

/// Share of user turns whose cumulative predicted state equals the gold state.
pub fn joint_goal_accuracy(results: &[TurnResult]) -> Result<f64, EvalError> {
    fraction(results, |r| r.predicted_state == r.gold_state)
}

/// Share of user turns whose predicted turn-level updates equal the gold updates.
pub fn joint_turn_accuracy(results: &[TurnResult]) -> Result<f64, EvalError> {
    fraction(results, |r| r.predicted_turn_pairs == r.gold_turn_pairs)
}

/// Share of user turns whose predicted label set equals the gold set.
pub fn turn_level_accuracy(results: &[TurnResult], task: Task) -> Result<f64, EvalError> {
    fraction(results, |r| match task {
        Task::Intent => r.predicted_intents == r.gold_intents,
        Task::Domain => r.predicted_domains == r.gold_domains,
        Task::Slot => r.predicted_slots == r.gold_slots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn result(turn: usize, pred: &[(&str, &str)], gold: &[(&str, &str)]) -> TurnResult {
        let map = |p: &[(&str, &str)]| {
            p.iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect()
        };
        TurnResult {
            dialogue_id: "d".into(),
            turn,
            route: None,
            expert: None,
            predicted_intents: BTreeSet::new(),
            predicted_domains: BTreeSet::new(),
            predicted_slots: BTreeSet::new(),
            predicted_turn_pairs: map(pred),
            predicted_state: map(pred),
            gold_intents: BTreeSet::new(),
            gold_domains: BTreeSet::new(),
            gold_slots: BTreeSet::new(),
            gold_turn_pairs: map(gold),
            gold_state: map(gold),
            retrieved: Vec::new(),
            generation: GenerationRecord::Skipped,
            timings: ComponentTimings::default(),
            failure: None,
        }
    }

    #[test]
    fn definitions() {
        let a = result(0, &[("hotel-area", "north")], &[("hotel-area", "north")]);
        let b = result(2, &[("hotel-area", "south")], &[("hotel-area", "north")]);
        assert_eq!(joint_goal_accuracy(&[a.clone(), b.clone()]).unwrap(), 0.5);
        assert_eq!(joint_goal_accuracy(&[a.clone(), a.clone()]).unwrap(), 1.0);
        assert_eq!(joint_turn_accuracy(&[result(0, &[], &[])]).unwrap(), 1.0);
        assert!(matches!(joint_goal_accuracy(&[]), Err(EvalError::Empty)));
        let mut extra = a.clone();
        extra.predicted_slots.insert("hotel-area".into());
        assert_eq!(turn_level_accuracy(&[a, extra], Task::Slot).unwrap(), 0.5);
    }
}
