//! MultiWOZ 2.2 ingestion.
//!
//! A corpus directory holds `schema.json` plus one sub-directory per split
//! (`train`, `dev`, `test`) containing `dialogues_*.json` files. Each file is
//! a JSON array of dialogues; user turns carry per-service frames whose
//! `state` holds the active intent and cumulative slot values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{Dialogue, DialogueError, Ontology, Speaker, Turn};
use crate::text::{normalize_value, DELETE_MARKER, DONT_CARE};

/// How labels missing from the ontology are handled during ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Unknown labels abort parsing.
    Strict,
    /// Unknown labels are dropped and reported as warnings.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub dialogues: Vec<Dialogue>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MultiwozData {
    pub ontology: Ontology,
    /// Split name (`train`, `dev`, `test`) to dialogues, in file order.
    pub splits: BTreeMap<String, Vec<Dialogue>>,
    pub warnings: Vec<String>,
}

#[derive(Deserialize)]
struct RawService {
    service_name: String,
    #[serde(default)]
    slots: Vec<RawSchemaSlot>,
    #[serde(default)]
    intents: Vec<RawSchemaIntent>,
}

#[derive(Deserialize)]
struct RawSchemaSlot {
    name: String,
    #[serde(default)]
    is_categorical: bool,
    #[serde(default)]
    possible_values: Vec<String>,
}

#[derive(Deserialize)]
struct RawSchemaIntent {
    name: String,
}

#[derive(Deserialize)]
struct RawDialogue {
    dialogue_id: String,
    turns: Vec<RawTurn>,
}

#[derive(Deserialize)]
struct RawTurn {
    speaker: String,
    utterance: String,
    #[serde(default)]
    frames: Vec<RawFrame>,
}

#[derive(Deserialize)]
struct RawFrame {
    service: String,
    #[serde(default)]
    state: Option<RawState>,
}

#[derive(Deserialize)]
struct RawState {
    active_intent: String,
    #[serde(default)]
    slot_values: BTreeMap<String, Vec<String>>,
}

#[derive(Deserialize)]
struct IdOnly {
    dialogue_id: String,
}

/// Builds an ontology from a MultiWOZ 2.2 `schema.json` document.
pub fn parse_schema(raw: &[u8]) -> Result<Ontology, DialogueError> {
    let text = utf8(raw)?;
    let services: Vec<RawService> =
        serde_json::from_str(text).map_err(|e| json_error(text, None, 0, &e))?;
    let mut domains = Vec::new();
    let mut intents = BTreeSet::new();
    let mut slots = Vec::new();
    let mut categorical = BTreeMap::new();
    for service in services {
        domains.push(service.service_name);
        intents.extend(service.intents.into_iter().map(|i| i.name));
        for slot in service.slots {
            if slot.is_categorical {
                categorical.insert(slot.name.clone(), slot.possible_values);
            }
            slots.push(slot.name);
        }
    }
    Ontology::new(domains, intents, slots, categorical)
}

/// Parses one MultiWOZ 2.2 dialogue file against an ontology.
pub fn parse_corpus(
    raw: &[u8],
    ontology: &Ontology,
    mode: LabelMode,
) -> Result<ParsedCorpus, DialogueError> {
    let text = utf8(raw)?;
    if text.trim().is_empty() {
        return Err(DialogueError::Parse {
            dialogue_id: None,
            offset: 0,
            message: "empty document".into(),
        });
    }
    let items: Vec<&RawValue> =
        serde_json::from_str(text).map_err(|e| json_error(text, None, 0, &e))?;
    let mut out = ParsedCorpus::default();
    for item in items {
        let slice = item.get();
        let base = slice.as_ptr() as usize - text.as_ptr() as usize;
        let raw_dialogue: RawDialogue = serde_json::from_str(slice).map_err(|e| {
            let id = serde_json::from_str::<IdOnly>(slice)
                .ok()
                .map(|d| d.dialogue_id);
            json_error(slice, id, base, &e)
        })?;
        let dialogue = convert_dialogue(raw_dialogue, ontology, mode, &mut out.warnings).map_err(
            |e| match e {
                DialogueError::Parse {
                    dialogue_id,
                    offset,
                    message,
                } => DialogueError::Parse {
                    dialogue_id,
                    offset: base + offset,
                    message,
                },
                other => other,
            },
        )?;
        out.dialogues.push(dialogue);
    }
    Ok(out)
}

/// Loads `schema.json` and every split directory under `dir`.
///
/// Dialogue files are parsed in parallel; output order follows sorted file names.
pub fn load_multiwoz_dir(dir: &Path, mode: LabelMode) -> Result<MultiwozData, DialogueError> {
    let schema_path = dir.join("schema.json");
    let ontology = parse_schema(&read(&schema_path)?)?;
    let mut splits = BTreeMap::new();
    let mut warnings = Vec::new();
    for split in ["train", "dev", "test"] {
        let split_dir = dir.join(split);
        if !split_dir.is_dir() {
            continue;
        }
        let mut files: Vec<_> = std::fs::read_dir(&split_dir)
            .map_err(|source| io_error(&split_dir, source))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("dialogues"))
            })
            .collect();
        files.sort();
        let parsed: Vec<ParsedCorpus> = files
            .par_iter()
            .map(|path| parse_corpus(&read(path)?, &ontology, mode))
            .collect::<Result<_, _>>()?;
        let mut dialogues = Vec::new();
        for p in parsed {
            dialogues.extend(p.dialogues);
            warnings.extend(p.warnings);
        }
        splits.insert(split.to_string(), dialogues);
    }
    Ok(MultiwozData {
        ontology,
        splits,
        warnings,
    })
}

fn convert_dialogue(
    raw: RawDialogue,
    ontology: &Ontology,
    mode: LabelMode,
    warnings: &mut Vec<String>,
) -> Result<Dialogue, DialogueError> {
    if raw.turns.is_empty() {
        return Err(DialogueError::Parse {
            dialogue_id: Some(raw.dialogue_id),
            offset: 0,
            message: "dialogue has no turns".into(),
        });
    }
    let id = raw.dialogue_id;
    let mut checker = LabelChecker {
        dialogue_id: &id,
        ontology,
        mode,
        warnings,
    };
    let mut previous: BTreeMap<String, String> = BTreeMap::new();
    let mut turns = Vec::with_capacity(raw.turns.len());
    for raw_turn in raw.turns {
        let speaker = match raw_turn.speaker.to_ascii_uppercase().as_str() {
            "USER" => Speaker::User,
            "SYSTEM" | "ASSISTANT" => Speaker::Assistant,
            other => {
                return Err(DialogueError::Parse {
                    dialogue_id: Some(id.clone()),
                    offset: 0,
                    message: format!("unknown speaker {other:?}"),
                })
            }
        };
        let mut turn = Turn::new(speaker, raw_turn.utterance);
        let mut current: BTreeMap<String, String> = BTreeMap::new();
        let mut has_state = false;
        for frame in &raw_turn.frames {
            let Some(state) = &frame.state else { continue };
            has_state = true;
            if state.active_intent != "NONE" {
                if checker.check("domain", &frame.service, |o, l| o.has_domain(l))? {
                    turn.gold_domains.insert(frame.service.clone());
                }
                if checker.check("intent", &state.active_intent, |o, l| o.has_intent(l))? {
                    turn.gold_intents.insert(state.active_intent.clone());
                }
            }
            for (slot, values) in &state.slot_values {
                let Some(value) = values.first() else {
                    continue;
                };
                if !checker.check("slot", slot, |o, l| o.has_slot(l))? {
                    continue;
                }
                let value = normalize_value(value);
                if !checker.check_value(slot, &value)? {
                    continue;
                }
                current.insert(slot.clone(), value);
            }
        }
        if speaker == Speaker::User && has_state {
            for (slot, value) in &current {
                if previous.get(slot) != Some(value) {
                    turn.gold_turn_values.insert(slot.clone(), value.clone());
                }
            }
            for slot in previous.keys() {
                if !current.contains_key(slot) {
                    turn.gold_turn_values
                        .insert(slot.clone(), DELETE_MARKER.to_string());
                }
            }
            for slot in turn.gold_turn_values.keys() {
                turn.gold_slots.insert(slot.clone());
                if let Some(domain) = Ontology::slot_domain(slot) {
                    turn.gold_domains.insert(domain.to_string());
                }
            }
            previous = current;
        }
        turns.push(turn);
    }
    Ok(Dialogue { id, turns })
}

struct LabelChecker<'a> {
    dialogue_id: &'a str,
    ontology: &'a Ontology,
    mode: LabelMode,
    warnings: &'a mut Vec<String>,
}

impl LabelChecker<'_> {
    fn check(
        &mut self,
        kind: &'static str,
        label: &str,
        known: impl Fn(&Ontology, &str) -> bool,
    ) -> Result<bool, DialogueError> {
        if known(self.ontology, label) {
            return Ok(true);
        }
        self.reject(kind, label.to_string())
    }

    fn check_value(&mut self, slot: &str, value: &str) -> Result<bool, DialogueError> {
        match self.ontology.allowed_values(slot) {
            Some(allowed)
                if !allowed.contains(value) && value != DONT_CARE && value != DELETE_MARKER =>
            {
                self.reject("value", format!("{slot}={value}"))
            }
            _ => Ok(true),
        }
    }

    fn reject(&mut self, kind: &'static str, label: String) -> Result<bool, DialogueError> {
        match self.mode {
            LabelMode::Strict => Err(DialogueError::UnknownLabel {
                dialogue_id: self.dialogue_id.to_string(),
                kind,
                label,
            }),
            LabelMode::Lenient => {
                self.warnings.push(format!(
                    "dialogue {}: dropped {kind} label {label:?} (not in ontology)",
                    self.dialogue_id
                ));
                Ok(false)
            }
        }
    }
}

fn utf8(raw: &[u8]) -> Result<&str, DialogueError> {
    std::str::from_utf8(raw).map_err(|e| DialogueError::Parse {
        dialogue_id: None,
        offset: e.valid_up_to(),
        message: "document is not valid UTF-8".into(),
    })
}

fn json_error(
    text: &str,
    dialogue_id: Option<String>,
    base: usize,
    err: &serde_json::Error,
) -> DialogueError {
    DialogueError::Parse {
        dialogue_id,
        offset: base + line_col_to_offset(text, err.line(), err.column()),
        message: err.to_string(),
    }
}

fn line_col_to_offset(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

fn read(path: &Path) -> Result<Vec<u8>, DialogueError> {
    std::fs::read(path).map_err(|source| io_error(path, source))
}

fn io_error(path: &Path, source: std::io::Error) -> DialogueError {
    DialogueError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"[
      {"service_name": "hotel",
       "slots": [{"name": "hotel-area", "is_categorical": true, "possible_values": ["north", "south"]},
                 {"name": "hotel-name", "is_categorical": false, "possible_values": []}],
       "intents": [{"name": "find_hotel"}, {"name": "book_hotel"}]}
    ]"#;

    fn dialogue_json(slot: &str) -> String {
        format!(
            r#"[{{"dialogue_id": "D1.json", "services": ["hotel"], "turns": [
              {{"turn_id": "0", "speaker": "USER", "utterance": "I want a hotel in the north.",
                "frames": [{{"service": "hotel", "slots": [],
                  "state": {{"active_intent": "find_hotel", "requested_slots": [],
                            "slot_values": {{"{slot}": ["North"]}}}}}}]}},
              {{"turn_id": "1", "speaker": "SYSTEM", "utterance": "Sure, which one?", "frames": []}}
            ]}}]"#
        )
    }

    #[test]
    fn two_turn_fixture_parses() {
        let ontology = parse_schema(SCHEMA.as_bytes()).unwrap();
        let parsed = parse_corpus(
            dialogue_json("hotel-area").as_bytes(),
            &ontology,
            LabelMode::Strict,
        )
        .unwrap();
        assert_eq!(parsed.dialogues.len(), 1);
        let d = &parsed.dialogues[0];
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].speaker, Speaker::User);
        assert_eq!(d.turns[0].gold_turn_values["hotel-area"], "north");
        assert!(d.turns[0].gold_intents.contains("find_hotel"));
        assert!(d.turns[0].gold_domains.contains("hotel"));
        assert!(d.turns[1].gold_slots.is_empty());
    }

    #[test]
    fn empty_document_is_a_parse_error() {
        let ontology = parse_schema(SCHEMA.as_bytes()).unwrap();
        let err = parse_corpus(b"  ", &ontology, LabelMode::Lenient).unwrap_err();
        assert!(matches!(err, DialogueError::Parse { offset: 0, .. }));
    }

    #[test]
    fn unknown_slot_strict_names_it() {
        let ontology = parse_schema(SCHEMA.as_bytes()).unwrap();
        let doc = dialogue_json("hotel-parking");
        let err = parse_corpus(doc.as_bytes(), &ontology, LabelMode::Strict).unwrap_err();
        assert!(err.to_string().contains("hotel-parking"), "{err}");
        let lenient = parse_corpus(doc.as_bytes(), &ontology, LabelMode::Lenient).unwrap();
        assert_eq!(lenient.warnings.len(), 1);
        assert!(lenient.warnings[0].contains("hotel-parking"));
        assert!(lenient.dialogues[0].turns[0].gold_turn_values.is_empty());
    }

    #[test]
    fn malformed_dialogue_reports_id_and_offset() {
        let ontology = parse_schema(SCHEMA.as_bytes()).unwrap();
        let doc = r#"[{"dialogue_id": "BAD.json", "turns": [{"speaker": "USER"}]}]"#;
        match parse_corpus(doc.as_bytes(), &ontology, LabelMode::Strict).unwrap_err() {
            DialogueError::Parse {
                dialogue_id,
                offset,
                ..
            } => {
                assert_eq!(dialogue_id.as_deref(), Some("BAD.json"));
                assert!(offset > 1 && offset <= doc.len(), "offset {offset}");
            }
            other => panic!("unexpected {other}"),
        }
        let truncated = &doc[..30];
        assert!(matches!(
            parse_corpus(truncated.as_bytes(), &ontology, LabelMode::Strict).unwrap_err(),
            DialogueError::Parse {
                dialogue_id: None,
                ..
            }
        ));
    }

    #[test]
    fn removed_slot_yields_deletion_update() {
        let ontology = parse_schema(SCHEMA.as_bytes()).unwrap();
        let doc = r#"[{"dialogue_id": "D2", "turns": [
          {"speaker": "USER", "utterance": "a", "frames": [{"service": "hotel",
            "state": {"active_intent": "find_hotel", "slot_values": {"hotel-name": ["Acorn"]}}}]},
          {"speaker": "SYSTEM", "utterance": "b", "frames": []},
          {"speaker": "USER", "utterance": "c", "frames": [{"service": "hotel",
            "state": {"active_intent": "find_hotel", "slot_values": {"hotel-area": ["dontcare"]}}}]}
        ]}]"#;
        let d = &parse_corpus(doc.as_bytes(), &ontology, LabelMode::Strict)
            .unwrap()
            .dialogues[0];
        assert_eq!(d.turns[2].gold_turn_values["hotel-name"], "none");
        assert_eq!(d.turns[2].gold_turn_values["hotel-area"], "dontcare");
        let state = d.gold_state(2).unwrap();
        assert_eq!(state.pairs.len(), 1);
    }

    #[test]
    fn offsets_from_line_and_column() {
        assert_eq!(line_col_to_offset("ab\ncd", 2, 2), 4);
        assert_eq!(line_col_to_offset("ab", 1, 1), 0);
    }
}
