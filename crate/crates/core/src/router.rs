//! Domain-weighted voting between the graph expert and the sequence expert.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dialogue::{ContextWindow, Ontology, Turn};
use crate::gat::{build_graph, GatError, GatModel};
use crate::retrieval::{tokenize, EmbeddingProvider};

#[derive(Debug, thiserror::Error)]
pub enum RouterError {
    #[error("no calibrated accuracies for domain {0:?}")]
    MissingDomain(String),
    #[error("accuracy {value} for domain {domain:?} is outside [0, 1]")]
    InvalidAccuracy { domain: String, value: f64 },
    #[error("routing report needs at least one decision")]
    EmptyReport,
    #[error("accuracy table {path}: {message}")]
    Table { path: String, message: String },
    #[error("domain classifier: {0}")]
    Classifier(#[from] GatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expert {
    Gnn,
    Seq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouterMode {
    #[default]
    Voting,
    ForceGnn,
    ForceSeq,
}

/// Outcome of routing one turn. In voting mode `chosen` is GNN exactly when
/// `votes_gnn >= votes_seq`; forced modes keep the votes for reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub chosen: Expert,
    pub votes_gnn: usize,
    pub votes_seq: usize,
    pub domains: BTreeSet<String>,
    pub mode: RouterMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainAccuracy {
    pub gnn: f64,
    pub seq: f64,
    /// Validation turns behind the estimate.
    pub turns: usize,
}

/// Per-domain slot accuracy of each expert; `None` marks a domain with no calibration data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    entries: BTreeMap<String, Option<DomainAccuracy>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    domain: String,
    acc_gnn: Option<f64>,
    acc_seq: Option<f64>,
    turns: usize,
}

impl AccuracyTable {
    /// A table with every domain present but uncalibrated.
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(domains: I) -> Self {
        Self {
            entries: domains.into_iter().map(|d| (d.into(), None)).collect(),
        }
    }

    pub fn set(
        &mut self,
        domain: impl Into<String>,
        gnn: f64,
        seq: f64,
        turns: usize,
    ) -> Result<(), RouterError> {
        let domain = domain.into();
        for value in [gnn, seq] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RouterError::InvalidAccuracy { domain, value });
            }
        }
        self.entries
            .insert(domain, Some(DomainAccuracy { gnn, seq, turns }));
        Ok(())
    }

    pub fn get(&self, domain: &str) -> Option<&DomainAccuracy> {
        self.entries.get(domain).and_then(Option::as_ref)
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, Option<DomainAccuracy>> {
        &self.entries
    }

    /// CSV with columns `domain, acc_gnn, acc_seq, turns`; missing entries leave both accuracies blank.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (domain, entry) in &self.entries {
            w.serialize(TableRow {
                domain: domain.clone(),
                acc_gnn: entry.map(|e| e.gnn),
                acc_seq: entry.map(|e| e.seq),
                turns: entry.map_or(0, |e| e.turns),
            })
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush"))
            .expect("csv output is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, RouterError> {
        let err = |message: String| RouterError::Table {
            path: "<memory>".into(),
            message,
        };
        let mut table = Self::default();
        for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<TableRow>() {
            let row = row.map_err(|e| err(e.to_string()))?;
            match (row.acc_gnn, row.acc_seq) {
                (Some(g), Some(s)) => table.set(row.domain, g, s, row.turns)?,
                (None, None) => {
                    table.entries.insert(row.domain, None);
                }
                _ => {
                    return Err(err(format!(
                        "domain {:?} has only one accuracy",
                        row.domain
                    )))
                }
            }
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<(), RouterError> {
        std::fs::write(path, self.to_csv()).map_err(|e| RouterError::Table {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, RouterError> {
        let text = std::fs::read_to_string(path).map_err(|e| RouterError::Table {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv(&text).map_err(|e| match e {
            RouterError::Table { message, .. } => RouterError::Table {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

/// Each domain votes for the expert with strictly higher accuracy (ties vote
/// SEQ); GNN wins when its votes are at least SEQ's, including the empty set.
pub fn route(
    domains: &BTreeSet<String>,
    table: &AccuracyTable,
) -> Result<RouteDecision, RouterError> {
    let mut votes_gnn = 0;
    let mut votes_seq = 0;
    for d in domains {
        let acc = table
            .get(d)
            .ok_or_else(|| RouterError::MissingDomain(d.clone()))?;
        if acc.gnn > acc.seq {
            votes_gnn += 1;
        } else {
            votes_seq += 1;
        }
    }
    Ok(RouteDecision {
        chosen: if votes_gnn >= votes_seq {
            Expert::Gnn
        } else {
            Expert::Seq
        },
        votes_gnn,
        votes_seq,
        domains: domains.clone(),
        mode: RouterMode::Voting,
    })
}

#[derive(Debug, Clone, Default)]
pub struct Router {
    pub table: AccuracyTable,
    pub mode: RouterMode,
}

impl Router {
    pub fn new(table: AccuracyTable, mode: RouterMode) -> Self {
        Self { table, mode }
    }

    pub fn decide(&self, domains: &BTreeSet<String>) -> Result<RouteDecision, RouterError> {
        let forced = match self.mode {
            RouterMode::Voting => return route(domains, &self.table),
            RouterMode::ForceGnn => Expert::Gnn,
            RouterMode::ForceSeq => Expert::Seq,
        };
        let mut decision = route(domains, &self.table).unwrap_or_else(|_| RouteDecision {
            chosen: forced,
            votes_gnn: 0,
            votes_seq: 0,
            domains: domains.clone(),
            mode: self.mode,
        });
        decision.chosen = forced;
        decision.mode = self.mode;
        Ok(decision)
    }
}

/// One validation turn scored for both experts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationTurn {
    pub gold_domains: BTreeSet<String>,
    pub gold_slots: BTreeSet<String>,
    pub gnn_slots: BTreeSet<String>,
    pub seq_slots: BTreeSet<String>,
}

/// Per-domain exact-set slot accuracy over turns whose gold domains include the domain.
pub fn calibrate<I, S>(turns: &[CalibrationTurn], domains: I) -> AccuracyTable
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let mut counts: BTreeMap<String, (usize, usize, usize)> =
        domains.into_iter().map(|d| (d.into(), (0, 0, 0))).collect();
    for t in turns {
        for d in &t.gold_domains {
            let c = counts.entry(d.clone()).or_default();
            c.0 += 1;
            c.1 += usize::from(t.gnn_slots == t.gold_slots);
            c.2 += usize::from(t.seq_slots == t.gold_slots);
        }
    }
    let mut table = AccuracyTable::default();
    for (d, (n, gnn, seq)) in counts {
        if n == 0 {
            table.entries.insert(d, None);
        } else {
            table
                .set(d, gnn as f64 / n as f64, seq as f64 / n as f64, n)
                .expect("ratios lie in [0, 1]");
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub domain: String,
    pub turns: usize,
    pub gnn_pct: f64,
    pub seq_pct: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub rows: Vec<RoutingRow>,
}

impl RoutingReport {
    pub fn row(&self, domain: &str) -> Option<&RoutingRow> {
        self.rows.iter().find(|r| r.domain == domain)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush"))
            .expect("csv output is utf-8")
    }
}

/// For each gold domain, the share of turns containing it routed to each expert.
pub fn routing_report(
    decisions: &[(RouteDecision, BTreeSet<String>)],
) -> Result<RoutingReport, RouterError> {
    if decisions.is_empty() {
        return Err(RouterError::EmptyReport);
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (decision, gold) in decisions {
        for d in gold {
            let c = counts.entry(d).or_default();
            c.0 += 1;
            c.1 += usize::from(decision.chosen == Expert::Gnn);
        }
    }
    let rows = counts
        .into_iter()
        .map(|(domain, (turns, gnn))| {
            let gnn_pct = 100.0 * gnn as f64 / turns as f64;
            RoutingRow {
                domain: domain.to_string(),
                turns,
                gnn_pct,
                seq_pct: 100.0 - gnn_pct,
            }
        })
        .collect();
    Ok(RoutingReport { rows })
}

/// Active domains of the current utterance given its history.
pub trait DomainClassifier: Send + Sync {
    fn classify(&self, ctx: &ContextWindow) -> Result<BTreeSet<String>, RouterError>;
}

/// Keyword lookup over the current utterance.
#[derive(Debug, Clone)]
pub struct StubDomainClassifier {
    keywords: BTreeMap<String, String>,
}

impl StubDomainClassifier {
    pub fn new(keywords: BTreeMap<String, String>) -> Self {
        Self {
            keywords: keywords
                .into_iter()
                .map(|(k, d)| (k.to_lowercase(), d))
                .collect(),
        }
    }

    /// Keywords for the MultiWOZ domains, restricted to those in `ontology`.
    pub fn multiwoz(ontology: &Ontology) -> Self {
        const MAP: &[(&str, &[&str])] = &[
            (
                "hotel",
                &[
                    "hotel",
                    "guesthouse",
                    "guest",
                    "stay",
                    "room",
                    "parking",
                    "wifi",
                    "stars",
                ],
            ),
            (
                "restaurant",
                &[
                    "restaurant",
                    "food",
                    "eat",
                    "dinner",
                    "lunch",
                    "cuisine",
                    "table",
                ],
            ),
            (
                "attraction",
                &[
                    "attraction",
                    "museum",
                    "college",
                    "park",
                    "theatre",
                    "cinema",
                    "visit",
                ],
            ),
            ("taxi", &["taxi", "cab", "car", "pick", "pickup"]),
            (
                "train",
                &[
                    "train",
                    "depart",
                    "departing",
                    "arrive",
                    "station",
                    "trains",
                ],
            ),
            ("hospital", &["hospital", "department", "doctor"]),
            ("police", &["police"]),
            ("bus", &["bus"]),
        ];
        let keywords = MAP
            .iter()
            .filter(|(d, _)| ontology.has_domain(d))
            .flat_map(|(d, words)| words.iter().map(move |w| (w.to_string(), d.to_string())))
            .collect();
        Self { keywords }
    }

    fn matches(&self, turn: &Turn) -> BTreeSet<String> {
        tokenize(&turn.text)
            .filter_map(|t| self.keywords.get(&t).cloned())
            .collect()
    }
}

impl DomainClassifier for StubDomainClassifier {
    fn classify(&self, ctx: &ContextWindow) -> Result<BTreeSet<String>, RouterError> {
        Ok(self.matches(ctx.current()))
    }
}

/// Uses the graph expert's domain decoder on the context-window graph.
pub struct ModelDomainClassifier {
    model: Arc<GatModel>,
    encoder: Arc<dyn EmbeddingProvider>,
}

impl ModelDomainClassifier {
    pub fn new(model: Arc<GatModel>, encoder: Arc<dyn EmbeddingProvider>) -> Self {
        Self { model, encoder }
    }
}

impl DomainClassifier for ModelDomainClassifier {
    fn classify(&self, ctx: &ContextWindow) -> Result<BTreeSet<String>, RouterError> {
        let graph = build_graph(
            ctx,
            self.encoder.as_ref(),
            self.model.config().bidirectional_edges,
        )?;
        Ok(self.model.predict_current(&graph)?.domains)
    }
}
