//! Dialogues, ontology, cumulative state and context windows.
//!
//! Dialogues are stored as a flat sequence of utterances. A "turn index"
//! addresses one utterance; a window size counts prior user/assistant
//! exchanges, so a bounded window of size `w` keeps `2w` preceding utterances
//! plus the current one.

mod corpus;
mod multiwoz;
mod ontology;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use corpus::{Corpus, CORPUS_FORMAT, CORPUS_VERSION};
pub use multiwoz::{
    load_multiwoz_dir, parse_corpus, parse_schema, LabelMode, MultiwozData, ParsedCorpus,
};
pub use ontology::Ontology;

use crate::text::{normalize_value, DELETE_MARKER};

/// Slot name to value, one value per slot.
pub type SlotValues = BTreeMap<String, String>;

#[derive(Debug, thiserror::Error)]
pub enum DialogueError {
    #[error("invalid ontology: {0}")]
    InvalidOntology(String),
    #[error("parse error in dialogue {dialogue_id} at byte {offset}: {message}", dialogue_id = .dialogue_id.as_deref().unwrap_or("<document>"))]
    Parse {
        dialogue_id: Option<String>,
        offset: usize,
        message: String,
    },
    #[error("dialogue {dialogue_id}: {kind} label {label:?} is not in the ontology")]
    UnknownLabel {
        dialogue_id: String,
        kind: &'static str,
        label: String,
    },
    #[error("turn index {index} out of range for dialogue of {len} turns")]
    TurnIndex { index: usize, len: usize },
    #[error("corpus format: {0}")]
    Format(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    User,
    Assistant,
}

impl Speaker {
    /// Token prefixed to the utterance text before encoding.
    pub fn tag(self) -> &'static str {
        match self {
            Speaker::User => "[USER]",
            Speaker::Assistant => "[ASSISTANT]",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default)]
    pub gold_intents: BTreeSet<String>,
    #[serde(default)]
    pub gold_domains: BTreeSet<String>,
    #[serde(default)]
    pub gold_slots: BTreeSet<String>,
    /// Slot values introduced or updated by this turn.
    #[serde(default)]
    pub gold_turn_values: SlotValues,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Speaker::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::new(Speaker::Assistant, text)
    }

    pub fn new(speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
            gold_intents: BTreeSet::new(),
            gold_domains: BTreeSet::new(),
            gold_slots: BTreeSet::new(),
            gold_turn_values: SlotValues::new(),
        }
    }

    pub fn is_user(&self) -> bool {
        self.speaker == Speaker::User
    }

    /// Speaker-tagged text, e.g. `[USER] i need a hotel`.
    pub fn tagged_text(&self) -> String {
        format!("{} {}", self.speaker.tag(), self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialogue {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Self {
            id: id.into(),
            turns,
        }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// Indices of user turns in order.
    pub fn user_turn_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.turns
            .iter()
            .enumerate()
            .filter(|(_, t)| t.is_user())
            .map(|(i, _)| i)
    }

    /// Gold turn-level updates for every turn, in order.
    pub fn gold_updates(&self) -> Vec<SlotValues> {
        self.turns
            .iter()
            .map(|t| t.gold_turn_values.clone())
            .collect()
    }

    /// Cumulative gold state after turn `upto`.
    pub fn gold_state(&self, upto: usize) -> Result<DialogueState, DialogueError> {
        if upto >= self.turns.len() {
            return Err(DialogueError::TurnIndex {
                index: upto,
                len: self.turns.len(),
            });
        }
        Ok(accumulate_state(&self.gold_updates(), upto))
    }

    /// Text of the most recent assistant utterance strictly before `t`.
    pub fn previous_assistant_text(&self, t: usize) -> &str {
        self.turns[..t.min(self.turns.len())]
            .iter()
            .rev()
            .find(|turn| !turn.is_user())
            .map(|turn| turn.text.as_str())
            .unwrap_or("")
    }
}

/// Cumulative slot-value state up to a turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueState {
    pub pairs: SlotValues,
}

impl DialogueState {
    /// Applies one turn of updates: last write wins, the deletion marker removes.
    pub fn apply(&mut self, updates: &SlotValues) {
        for (slot, value) in updates {
            let value = normalize_value(value);
            if value == DELETE_MARKER {
                self.pairs.remove(slot);
            } else {
                self.pairs.insert(slot.clone(), value);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Folds per-turn updates `0..=upto` into a cumulative state.
///
/// Indices past the end of `turn_updates` are ignored.
pub fn accumulate_state(turn_updates: &[SlotValues], upto: usize) -> DialogueState {
    let mut state = DialogueState::default();
    for updates in turn_updates.iter().take(upto.saturating_add(1)) {
        state.apply(updates);
    }
    state
}

/// Serialized as the string `"full"` or a non-negative integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WindowSize {
    /// Number of preceding user/assistant exchanges to keep.
    Bounded(usize),
    #[default]
    Full,
}

impl Serialize for WindowSize {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            WindowSize::Bounded(w) => serializer.serialize_u64(*w as u64),
            WindowSize::Full => serializer.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for WindowSize {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Count(usize),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Count(w) => Ok(WindowSize::Bounded(w)),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl fmt::Display for WindowSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowSize::Bounded(w) => write!(f, "{w}"),
            WindowSize::Full => f.write_str("full"),
        }
    }
}

impl std::str::FromStr for WindowSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(WindowSize::Full);
        }
        s.parse::<usize>().map(WindowSize::Bounded).map_err(|_| {
            format!("window size must be a non-negative integer or \"full\", got {s:?}")
        })
    }
}

/// Ordered utterances ending at the current turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub dialogue_id: String,
    /// Index of the first kept utterance within the dialogue.
    pub start: usize,
    pub turns: Vec<Turn>,
    pub window_size: WindowSize,
}

impl ContextWindow {
    pub fn current(&self) -> &Turn {
        self.turns.last().expect("context window is never empty")
    }

    /// Index of the current turn within the dialogue.
    pub fn current_index(&self) -> usize {
        self.start + self.turns.len() - 1
    }

    /// Utterances before the current one.
    pub fn history(&self) -> &[Turn] {
        &self.turns[..self.turns.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

pub fn build_context_window(
    dialogue: &Dialogue,
    t: usize,
    window: WindowSize,
) -> Result<ContextWindow, DialogueError> {
    if t >= dialogue.turns.len() {
        return Err(DialogueError::TurnIndex {
            index: t,
            len: dialogue.turns.len(),
        });
    }
    let start = match window {
        WindowSize::Full => 0,
        WindowSize::Bounded(w) => (t + 1).saturating_sub(w.saturating_mul(2).saturating_add(1)),
    };
    Ok(ContextWindow {
        dialogue_id: dialogue.id.clone(),
        start,
        turns: dialogue.turns[start..=t].to_vec(),
        window_size: window,
    })
}
