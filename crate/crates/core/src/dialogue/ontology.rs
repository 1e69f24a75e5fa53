use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::DialogueError;
use crate::text::normalize_value;

/// Fixed inventory of domains, intents, slots and categorical value sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ontology {
    domains: BTreeSet<String>,
    intents: BTreeSet<String>,
    slots: BTreeSet<String>,
    /// Allowed values per categorical slot. Free-form slots are absent.
    categorical_values: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    pub fn new<D, I, S>(
        domains: D,
        intents: I,
        slots: S,
        categorical_values: BTreeMap<String, Vec<String>>,
    ) -> Result<Self, DialogueError>
    where
        D: IntoIterator,
        D::Item: Into<String>,
        I: IntoIterator,
        I::Item: Into<String>,
        S: IntoIterator,
        S::Item: Into<String>,
    {
        let domains = unique_set("domain", domains)?;
        let intents = unique_set("intent", intents)?;
        let slots = unique_set("slot", slots)?;
        for slot in &slots {
            match slot.split_once('-') {
                Some((domain, rest)) if domains.contains(domain) && !rest.is_empty() => {
                    if let Some((inner, _)) = rest.split_once('-') {
                        if domains.contains(inner) {
                            return Err(DialogueError::InvalidOntology(format!(
                                "slot {slot:?} carries more than one domain prefix"
                            )));
                        }
                    }
                }
                _ => {
                    return Err(DialogueError::InvalidOntology(format!(
                        "slot {slot:?} lacks a known domain prefix"
                    )))
                }
            }
        }
        let mut categorical = BTreeMap::new();
        for (slot, values) in categorical_values {
            if !slots.contains(&slot) {
                return Err(DialogueError::InvalidOntology(format!(
                    "categorical values given for unknown slot {slot:?}"
                )));
            }
            if values.is_empty() {
                continue;
            }
            categorical.insert(slot, values.iter().map(|v| normalize_value(v)).collect());
        }
        Ok(Self {
            domains,
            intents,
            slots,
            categorical_values: categorical,
        })
    }

    pub fn domains(&self) -> &BTreeSet<String> {
        &self.domains
    }

    pub fn intents(&self) -> &BTreeSet<String> {
        &self.intents
    }

    pub fn slots(&self) -> &BTreeSet<String> {
        &self.slots
    }

    pub fn categorical_values(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.categorical_values
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.domains.contains(domain)
    }

    pub fn has_intent(&self, intent: &str) -> bool {
        self.intents.contains(intent)
    }

    pub fn has_slot(&self, slot: &str) -> bool {
        self.slots.contains(slot)
    }

    /// Allowed values for a categorical slot, or `None` when the slot is free-form.
    pub fn allowed_values(&self, slot: &str) -> Option<&BTreeSet<String>> {
        self.categorical_values.get(slot)
    }

    /// Domain prefix of a fully qualified slot name.
    pub fn slot_domain(slot: &str) -> Option<&str> {
        slot.split_once('-').map(|(d, _)| d)
    }

    /// Ordered label lists, used as decoder output layouts.
    pub fn domain_labels(&self) -> Vec<String> {
        self.domains.iter().cloned().collect()
    }

    pub fn intent_labels(&self) -> Vec<String> {
        self.intents.iter().cloned().collect()
    }

    pub fn slot_labels(&self) -> Vec<String> {
        self.slots.iter().cloned().collect()
    }
}

fn unique_set<T>(kind: &str, items: T) -> Result<BTreeSet<String>, DialogueError>
where
    T: IntoIterator,
    T::Item: Into<String>,
{
    let mut set = BTreeSet::new();
    for item in items {
        let item = item.into();
        if item.is_empty() {
            return Err(DialogueError::InvalidOntology(format!(
                "empty {kind} label"
            )));
        }
        if !set.insert(item.clone()) {
            return Err(DialogueError::InvalidOntology(format!(
                "duplicate {kind} label {item:?}"
            )));
        }
    }
    if set.is_empty() {
        return Err(DialogueError::InvalidOntology(format!("no {kind} labels")));
    }
    Ok(set)
}
