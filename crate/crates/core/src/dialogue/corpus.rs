use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dialogue, DialogueError, Ontology};

pub const CORPUS_FORMAT: &str = "gem-dst-corpus";
pub const CORPUS_VERSION: u32 = 1;

/// Canonical serialized corpus: ontology plus dialogues, reloadable without the raw layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub ontology: Ontology,
    pub dialogues: Vec<Dialogue>,
}

#[derive(Serialize)]
struct EnvelopeRef<'a> {
    format: &'static str,
    version: u32,
    ontology: &'a Ontology,
    dialogues: &'a [Dialogue],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    format: String,
    version: u32,
    ontology: Ontology,
    dialogues: Vec<Dialogue>,
}

impl Corpus {
    pub fn new(ontology: Ontology, dialogues: Vec<Dialogue>) -> Self {
        Self {
            ontology,
            dialogues,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&EnvelopeRef {
            format: CORPUS_FORMAT,
            version: CORPUS_VERSION,
            ontology: &self.ontology,
            dialogues: &self.dialogues,
        })
        .expect("corpus serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self, DialogueError> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| {
            DialogueError::Format(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        if env.format != CORPUS_FORMAT {
            return Err(DialogueError::Format(format!(
                "unexpected format tag {:?}",
                env.format
            )));
        }
        if env.version != CORPUS_VERSION {
            return Err(DialogueError::Format(format!(
                "unsupported corpus version {} (expected {CORPUS_VERSION})",
                env.version
            )));
        }
        if let Some(d) = env.dialogues.iter().find(|d| d.turns.is_empty()) {
            return Err(DialogueError::Format(format!(
                "dialogue {} has no turns",
                d.id
            )));
        }
        Ok(Self {
            ontology: env.ontology,
            dialogues: env.dialogues,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DialogueError> {
        std::fs::write(path, self.to_json()).map_err(|source| DialogueError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DialogueError> {
        let text = std::fs::read_to_string(path).map_err(|source| DialogueError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Number of user turns across all dialogues.
    pub fn user_turn_count(&self) -> usize {
        self.dialogues
            .iter()
            .map(|d| d.user_turn_indices().count())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{Speaker, Turn};
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn ontology() -> Ontology {
        Ontology::new(
            ["hotel", "taxi"],
            ["find_hotel", "book_taxi"],
            ["hotel-area", "taxi-leaveat"],
            BTreeMap::new(),
        )
        .unwrap()
    }

    fn turn_strategy() -> impl Strategy<Value = Turn> {
        (
            any::<bool>(),
            "[a-z ]{0,12}",
            proptest::collection::btree_set(prop_oneof!["find_hotel", "book_taxi"], 0..2),
            proptest::collection::btree_map(
                prop_oneof!["hotel-area", "taxi-leaveat"],
                "[a-z0-9]{1,5}",
                0..2,
            ),
        )
            .prop_map(|(user, text, intents, values)| {
                let mut t = Turn::new(
                    if user {
                        Speaker::User
                    } else {
                        Speaker::Assistant
                    },
                    text,
                );
                t.gold_intents = intents;
                t.gold_slots = values.keys().cloned().collect();
                t.gold_domains = values
                    .keys()
                    .filter_map(|s| Ontology::slot_domain(s).map(str::to_string))
                    .collect();
                t.gold_turn_values = values;
                t
            })
    }

    proptest! {
        #[test]
        fn serialize_round_trip(dialogues in proptest::collection::vec(
            ("[A-Z0-9]{1,6}", proptest::collection::vec(turn_strategy(), 1..5))
                .prop_map(|(id, turns)| Dialogue::new(id, turns)),
            0..4,
        )) {
            let corpus = Corpus::new(ontology(), dialogues);
            let back = Corpus::from_json(&corpus.to_json()).unwrap();
            prop_assert_eq!(back, corpus);
        }
    }

    #[test]
    fn rejects_wrong_version() {
        let corpus = Corpus::new(ontology(), vec![]);
        let text = corpus.to_json().replace("\"version\": 1", "\"version\": 9");
        assert!(Corpus::from_json(&text)
            .unwrap_err()
            .to_string()
            .contains("version 9"));
    }
}
