//! Small generated corpora with known structure, for smoke runs and learning checks.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dialogue::{Corpus, Dialogue, Ontology, Turn};

struct SlotSpec {
    slot: &'static str,
    cue: &'static str,
    values: &'static [&'static str],
}

struct IntentSpec {
    intent: &'static str,
    domain: &'static str,
    cue: &'static str,
}

const SLOTS: &[SlotSpec] = &[
    SlotSpec {
        slot: "hotel-area",
        cue: "district",
        values: &["north", "south", "east", "west"],
    },
    SlotSpec {
        slot: "hotel-stars",
        cue: "rating",
        values: &["2", "3", "4", "5"],
    },
    SlotSpec {
        slot: "train-day",
        cue: "weekday",
        values: &["monday", "tuesday", "friday", "sunday"],
    },
    SlotSpec {
        slot: "train-destination",
        cue: "terminus",
        values: &["cambridge", "london", "ely", "norwich"],
    },
];

const INTENTS: &[IntentSpec] = &[
    IntentSpec {
        intent: "find_hotel",
        domain: "hotel",
        cue: "lodging",
    },
    IntentSpec {
        intent: "find_train",
        domain: "train",
        cue: "railway",
    },
];

/// Values shared by every slot in the history-dependent corpus, so the reply alone
/// does not reveal which slot it fills.
const SHARED_VALUES: &[&str] = &["alpha", "bravo", "charlie", "delta"];

const FILLER: &[&str] = &["okay", "sure", "thanks", "right"];

fn domain_slots(domain: &str) -> Vec<&'static SlotSpec> {
    SLOTS
        .iter()
        .filter(|s| s.slot.starts_with(&format!("{domain}-")))
        .collect()
}

fn ontology(shared_values: bool) -> Ontology {
    let categorical: BTreeMap<String, Vec<String>> = SLOTS
        .iter()
        .map(|s| {
            let values = if shared_values {
                SHARED_VALUES
            } else {
                s.values
            };
            (
                s.slot.to_string(),
                values.iter().map(|v| v.to_string()).collect(),
            )
        })
        .collect();
    Ontology::new(
        ["hotel", "train"],
        INTENTS.iter().map(|i| i.intent),
        SLOTS.iter().map(|s| s.slot),
        categorical,
    )
    .expect("synthetic ontology is valid")
}

fn labelled(mut turn: Turn, intent: &IntentSpec, pairs: &[(&SlotSpec, &str)]) -> Turn {
    turn.gold_intents = BTreeSet::from([intent.intent.to_string()]);
    turn.gold_domains = BTreeSet::from([intent.domain.to_string()]);
    turn.gold_slots = pairs.iter().map(|(s, _)| s.slot.to_string()).collect();
    turn.gold_turn_values = pairs
        .iter()
        .map(|(s, v)| (s.slot.to_string(), v.to_string()))
        .collect();
    turn
}

/// Every user turn names its intent and slots with dedicated cue words followed by
/// the values, so labels are recoverable from the current utterance alone.
pub fn separable_corpus(dialogues: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..dialogues)
        .map(|d| {
            let mut turns = Vec::new();
            let exchanges = rng.random_range(2..=3);
            for _ in 0..exchanges {
                let intent = INTENTS.choose(&mut rng).expect("non-empty");
                let mut slots = domain_slots(intent.domain);
                slots.shuffle(&mut rng);
                slots.truncate(rng.random_range(1..=slots.len()));
                slots.sort_by_key(|s| s.slot);
                let pairs: Vec<(&SlotSpec, &str)> = slots
                    .iter()
                    .map(|s| (*s, *s.values.choose(&mut rng).expect("non-empty")))
                    .collect();
                let mut text = vec![intent.cue.to_string()];
                for (s, v) in &pairs {
                    text.push(s.cue.to_string());
                    text.push(v.to_string());
                }
                turns.push(labelled(Turn::user(text.join(" ")), intent, &pairs));
                turns.push(Turn::assistant(
                    *FILLER.choose(&mut rng).expect("non-empty"),
                ));
            }
            Dialogue::new(format!("sep-{d:04}"), turns)
        })
        .collect();
    Corpus::new(ontology(false), out)
}

/// The assistant asks for a slot by its cue word; the user replies with a value drawn
/// from a pool shared by all slots. The filled slot is only recoverable from the
/// preceding assistant turn.
pub fn history_dependent_corpus(dialogues: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = (0..dialogues)
        .map(|d| {
            let intent = INTENTS.choose(&mut rng).expect("non-empty");
            let mut turns = vec![labelled(Turn::user(intent.cue), intent, &[])];
            let mut slots = domain_slots(intent.domain);
            slots.shuffle(&mut rng);
            for s in slots {
                turns.push(Turn::assistant(format!("which {} please", s.cue)));
                let value = *SHARED_VALUES.choose(&mut rng).expect("non-empty");
                let filler = *FILLER.choose(&mut rng).expect("non-empty");
                turns.push(labelled(
                    Turn::user(format!("{filler} {value}")),
                    intent,
                    &[(s, value)],
                ));
            }
            Dialogue::new(format!("hist-{d:04}"), turns)
        })
        .collect();
    Corpus::new(ontology(true), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_deterministic_and_labelled() {
        assert_eq!(separable_corpus(5, 3), separable_corpus(5, 3));
        assert_ne!(separable_corpus(5, 3), separable_corpus(5, 4));
        for corpus in [separable_corpus(10, 0), history_dependent_corpus(10, 0)] {
            for d in &corpus.dialogues {
                for t in d.user_turn_indices() {
                    let turn = &d.turns[t];
                    assert_eq!(turn.gold_intents.len(), 1);
                    for (slot, value) in &turn.gold_turn_values {
                        assert!(corpus
                            .ontology
                            .allowed_values(slot)
                            .unwrap()
                            .contains(value));
                    }
                }
                assert!(d.gold_state(d.len() - 1).is_ok());
            }
        }
    }
}
