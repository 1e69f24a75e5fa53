//! Sequence expert: linearized context in, structured `domain | intent | slots` text out.
//!
//! Output grammar: zero or more blocks separated by `;`. Each block holds three
//! `|`-separated fields (domain, intents, slots); each field is a
//! comma-separated label list that may be empty. Example:
//! `hotel | find_hotel | hotel-area, hotel-stars; taxi | book_taxi | taxi-leaveat`.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dialogue::{
    build_context_window, ContextWindow, Dialogue, LabelMode, Ontology, WindowSize,
};
use crate::http::{HttpError, JsonClient, RemoteSettings};

/// Joins speaker-tagged utterances in a linearized context.
pub const SEGMENT_SEPARATOR: &str = "\n";

#[derive(Debug, thiserror::Error)]
pub enum SeqError {
    #[error("cannot parse structured output at {span:?} ({fragment:?}): {message}")]
    Parse {
        span: Range<usize>,
        fragment: String,
        message: String,
    },
    #[error("unknown {kind} label {label:?}")]
    UnknownLabel { kind: &'static str, label: String },
    #[error("stub table has no entry for input {0:?}")]
    MissingEntry(String),
    #[error("stub table: {0}")]
    Table(String),
    #[error(transparent)]
    Http(#[from] HttpError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqExpertOutput {
    pub intents: BTreeSet<String>,
    pub domains: BTreeSet<String>,
    pub slots: BTreeSet<String>,
    pub raw_text: String,
}

impl SeqExpertOutput {
    /// Renders the label sets in the structured output grammar.
    ///
    /// Slots go to the block of their domain prefix and intents to the block
    /// whose domain they mention; anything unplaced joins the first block.
    pub fn render(
        intents: &BTreeSet<String>,
        domains: &BTreeSet<String>,
        slots: &BTreeSet<String>,
    ) -> String {
        if intents.is_empty() && domains.is_empty() && slots.is_empty() {
            return String::new();
        }
        let mut blocks: Vec<(String, Vec<&str>, Vec<&str>)> = domains
            .iter()
            .map(|d| (d.clone(), Vec::new(), Vec::new()))
            .collect();
        if blocks.is_empty() {
            blocks.push((String::new(), Vec::new(), Vec::new()));
        }
        for i in intents {
            let at = blocks
                .iter()
                .position(|b| !b.0.is_empty() && i.contains(b.0.as_str()))
                .unwrap_or(0);
            blocks[at].1.push(i);
        }
        for s in slots {
            let prefix = Ontology::slot_domain(s).unwrap_or("");
            let at = blocks.iter().position(|b| b.0 == prefix).unwrap_or(0);
            blocks[at].2.push(s);
        }
        blocks
            .iter()
            .map(|(d, i, s)| format!("{d} | {} | {}", i.join(", "), s.join(", ")))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Speaker-tagged utterances joined by [`SEGMENT_SEPARATOR`].
pub fn linearize(ctx: &ContextWindow) -> String {
    ctx.turns
        .iter()
        .map(|t| t.tagged_text())
        .collect::<Vec<_>>()
        .join(SEGMENT_SEPARATOR)
}

fn valid_label(label: &str) -> bool {
    label
        .chars()
        .all(|c| c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ' ' | ':' | '/'))
}

/// Parses structured output. Unknown labels fail in strict mode and are
/// dropped with a warning in lenient mode; malformed structure always fails.
pub fn parse_structured_output(
    text: &str,
    ontology: &Ontology,
    mode: LabelMode,
) -> Result<(SeqExpertOutput, Vec<String>), SeqError> {
    let mut out = SeqExpertOutput {
        raw_text: text.to_string(),
        ..Default::default()
    };
    let mut warnings = Vec::new();
    if text.trim().is_empty() {
        return Ok((out, warnings));
    }
    let mut offset = 0;
    for block in text.split(';') {
        let span = offset..offset + block.len();
        offset += block.len() + 1;
        let fail = |message: &str| SeqError::Parse {
            span: span.clone(),
            fragment: block.to_string(),
            message: message.to_string(),
        };
        if block.trim().is_empty() {
            return Err(fail("empty block"));
        }
        let fields: Vec<&str> = block.split('|').collect();
        if fields.len() != 3 {
            return Err(fail("expected `domain | intents | slots`"));
        }
        let targets: [(
            &'static str,
            &mut BTreeSet<String>,
            fn(&Ontology, &str) -> bool,
        ); 3] = [
            ("domain", &mut out.domains, Ontology::has_domain),
            ("intent", &mut out.intents, Ontology::has_intent),
            ("slot", &mut out.slots, Ontology::has_slot),
        ];
        for (field, (kind, set, known)) in fields.iter().zip(targets) {
            for label in field.split(',').map(str::trim).filter(|l| !l.is_empty()) {
                if !valid_label(label) {
                    return Err(fail(&format!("invalid {kind} label {label:?}")));
                }
                if known(ontology, label) {
                    set.insert(label.to_string());
                } else if mode == LabelMode::Strict {
                    return Err(SeqError::UnknownLabel {
                        kind,
                        label: label.to_string(),
                    });
                } else {
                    warnings.push(format!("dropped unknown {kind} label {label:?}"));
                }
            }
        }
    }
    Ok((out, warnings))
}

pub trait SeqExpert: Send + Sync {
    fn predict(&self, ctx: &ContextWindow) -> Result<SeqExpertOutput, SeqError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StubEntry {
    pub input: String,
    pub output: String,
}

/// Deterministic lookup from linearized input to structured output text.
#[derive(Debug, Clone)]
pub struct StubSeqExpert {
    ontology: Ontology,
    table: HashMap<String, String>,
    fallback: Option<String>,
}

impl StubSeqExpert {
    pub fn new(ontology: Ontology, entries: impl IntoIterator<Item = StubEntry>) -> Self {
        Self {
            ontology,
            table: entries.into_iter().map(|e| (e.input, e.output)).collect(),
            fallback: None,
        }
    }

    /// Output used for inputs missing from the table; without one, misses are errors.
    pub fn with_fallback(mut self, output: impl Into<String>) -> Self {
        self.fallback = Some(output.into());
        self
    }

    /// A table that answers each user turn of `dialogues` with its gold labels.
    pub fn from_gold(ontology: Ontology, dialogues: &[Dialogue], window: WindowSize) -> Self {
        let mut entries = Vec::new();
        for d in dialogues {
            for t in d.user_turn_indices() {
                let ctx = build_context_window(d, t, window).expect("user turn index is in range");
                let turn = &d.turns[t];
                entries.push(StubEntry {
                    input: linearize(&ctx),
                    output: SeqExpertOutput::render(
                        &turn.gold_intents,
                        &turn.gold_domains,
                        &turn.gold_slots,
                    ),
                });
            }
        }
        Self::new(ontology, entries)
    }

    /// Reads a JSON array of `{"input", "output"}` entries.
    pub fn load(ontology: Ontology, path: &Path) -> Result<Self, SeqError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SeqError::Table(format!("{}: {e}", path.display())))?;
        let entries: Vec<StubEntry> = serde_json::from_str(&text)
            .map_err(|e| SeqError::Table(format!("{}: {e}", path.display())))?;
        Ok(Self::new(ontology, entries))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl SeqExpert for StubSeqExpert {
    fn predict(&self, ctx: &ContextWindow) -> Result<SeqExpertOutput, SeqError> {
        let input = linearize(ctx);
        let raw = match (self.table.get(&input), &self.fallback) {
            (Some(raw), _) | (None, Some(raw)) => raw,
            (None, None) => return Err(SeqError::MissingEntry(input)),
        };
        parse_structured_output(raw, &self.ontology, LabelMode::Lenient).map(|(out, _)| out)
    }
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct PredictResponse {
    output: String,
}

/// Client for `POST /predict {"input"} -> {"output"}`.
#[derive(Debug)]
pub struct RemoteSeqExpert {
    client: JsonClient,
    ontology: Ontology,
    mode: LabelMode,
}

impl RemoteSeqExpert {
    pub fn new(settings: RemoteSettings, ontology: Ontology, mode: LabelMode) -> Self {
        Self {
            client: JsonClient::new(settings),
            ontology,
            mode,
        }
    }
}

impl SeqExpert for RemoteSeqExpert {
    fn predict(&self, ctx: &ContextWindow) -> Result<SeqExpertOutput, SeqError> {
        let input = linearize(ctx);
        let response: PredictResponse = self
            .client
            .post("/predict", &PredictRequest { input: &input })?;
        let (out, warnings) = parse_structured_output(&response.output, &self.ontology, self.mode)?;
        for w in warnings {
            log::warn!("sequence expert: {w}");
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Turn;
    use crate::http::testing::serve;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn ontology() -> Ontology {
        Ontology::new(
            ["hotel", "taxi"],
            ["find_hotel", "book_taxi"],
            ["hotel-area", "hotel-stars", "taxi-leaveat"],
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn window(turns: Vec<Turn>) -> ContextWindow {
        let t = turns.len() - 1;
        build_context_window(&Dialogue::new("d", turns), t, WindowSize::Full).unwrap()
    }

    #[test]
    fn linearization() {
        assert_eq!(linearize(&window(vec![Turn::user("hi")])), "[USER] hi");
        let pair = window(vec![Turn::assistant("hello"), Turn::user("a room")]);
        assert_eq!(linearize(&pair), "[ASSISTANT] hello\n[USER] a room");
        assert_eq!(linearize(&pair), linearize(&pair.clone()));
    }

    #[test]
    fn parses_single_block() {
        let (out, w) = parse_structured_output(
            "hotel | find_hotel | hotel-area, hotel-stars",
            &ontology(),
            LabelMode::Strict,
        )
        .unwrap();
        assert_eq!(out.domains, set(&["hotel"]));
        assert_eq!(out.intents, set(&["find_hotel"]));
        assert_eq!(out.slots, set(&["hotel-area", "hotel-stars"]));
        assert!(w.is_empty());
    }

    #[test]
    fn empty_and_garbage() {
        let (out, _) = parse_structured_output("", &ontology(), LabelMode::Strict).unwrap();
        assert!(out.domains.is_empty() && out.intents.is_empty() && out.slots.is_empty());
        let err = parse_structured_output("%%%", &ontology(), LabelMode::Strict).unwrap_err();
        assert!(
            matches!(err, SeqError::Parse { ref fragment, .. } if fragment == "%%%"),
            "{err}"
        );
        let err = parse_structured_output("hotel | x | y; %%", &ontology(), LabelMode::Lenient)
            .unwrap_err();
        assert!(
            matches!(err, SeqError::Parse { ref span, .. } if *span == (14..17)),
            "{err}"
        );
    }

    #[test]
    fn unknown_labels_by_mode() {
        let text = "hotel | find_hotel | hotel-parking";
        let err = parse_structured_output(text, &ontology(), LabelMode::Strict).unwrap_err();
        assert!(matches!(err, SeqError::UnknownLabel { kind: "slot", .. }));
        let (out, w) = parse_structured_output(text, &ontology(), LabelMode::Lenient).unwrap();
        assert!(out.slots.is_empty());
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn stub_is_a_lookup() {
        let d = Dialogue::new(
            "d",
            vec![{
                let mut t = Turn::user("cab at 5");
                t.gold_domains = set(&["taxi"]);
                t.gold_intents = set(&["book_taxi"]);
                t.gold_slots = set(&["taxi-leaveat"]);
                t
            }],
        );
        let stub = StubSeqExpert::from_gold(ontology(), std::slice::from_ref(&d), WindowSize::Full);
        let out = stub.predict(&window(d.turns.clone())).unwrap();
        assert_eq!(out.raw_text, "taxi | book_taxi | taxi-leaveat");
        assert!(matches!(
            stub.predict(&window(vec![Turn::user("other")])),
            Err(SeqError::MissingEntry(_))
        ));
        let stub = stub.with_fallback("");
        assert_eq!(
            stub.predict(&window(vec![Turn::user("other")])).unwrap(),
            SeqExpertOutput::default()
        );
    }

    #[test]
    fn remote_expert_posts_linearized_input() {
        let served = serve(vec![(
            200,
            r#"{"output":"hotel | find_hotel | hotel-area"}"#.into(),
        )]);
        let expert = RemoteSeqExpert::new(
            RemoteSettings::new(&served.url),
            ontology(),
            LabelMode::Strict,
        );
        let out = expert.predict(&window(vec![Turn::user("north")])).unwrap();
        assert_eq!(out.slots, set(&["hotel-area"]));
        let requests = served.requests.lock().unwrap();
        assert_eq!(requests[0].0, "/predict");
        let body: serde_json::Value = serde_json::from_str(&requests[0].1).unwrap();
        assert_eq!(body, serde_json::json!({"input": "[USER] north"}));
    }

    fn subset(all: &'static [&'static str]) -> impl Strategy<Value = BTreeSet<String>> {
        proptest::sample::subsequence(all, 0..=all.len())
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn render_then_parse_is_identity(
            d in subset(&["hotel", "taxi"]),
            i in subset(&["find_hotel", "book_taxi"]),
            s in subset(&["hotel-area", "hotel-stars", "taxi-leaveat"]),
        ) {
            let text = SeqExpertOutput::render(&i, &d, &s);
            let (out, _) = parse_structured_output(&text, &ontology(), LabelMode::Strict).unwrap();
            prop_assert_eq!((&out.domains, &out.intents, &out.slots), (&d, &i, &s));
            let again = SeqExpertOutput::render(&out.intents, &out.domains, &out.slots);
            prop_assert_eq!(again, text);
        }
    }
}
