use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ValueGenError;
use crate::dialogue::Turn;
use crate::retrieval::RetrievedExample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    ZeroShot,
    #[default]
    FewShot,
    React,
}

/// Section markers placed between the prompt parts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delimiters {
    pub prefix: String,
    pub history: String,
    pub current: String,
    pub slots: String,
}

/// Templates for the three reasoning stages. Placeholders use `{{name}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactTemplates {
    /// Requires `{{context}}`.
    pub analysis: String,
    /// Requires `{{context}}` and `{{analysis}}`.
    pub reasoning: String,
    /// Requires `{{reasoning}}` and `{{slots}}`; `{{context}}` is optional.
    pub json: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub delimiters: Delimiters,
    pub react: ReactTemplates,
    /// Appended after a completion that held no JSON object.
    pub repair: String,
    /// Character budget for a single prompt.
    pub max_prompt_chars: usize,
}

pub const DEFAULT_MAX_PROMPT_CHARS: usize = 16_000;

const TEMPLATE_FILES: [&str; 8] = [
    "prefix.txt",
    "history.txt",
    "current.txt",
    "slots.txt",
    "react_analysis.txt",
    "react_reasoning.txt",
    "react_json.txt",
    "repair.txt",
];

const DEFAULT_TEMPLATES: [&str; 8] = [
    include_str!("../../assets/prompts/prefix.txt"),
    include_str!("../../assets/prompts/history.txt"),
    include_str!("../../assets/prompts/current.txt"),
    include_str!("../../assets/prompts/slots.txt"),
    include_str!("../../assets/prompts/react_analysis.txt"),
    include_str!("../../assets/prompts/react_reasoning.txt"),
    include_str!("../../assets/prompts/react_json.txt"),
    include_str!("../../assets/prompts/repair.txt"),
];

impl Default for PromptSpec {
    fn default() -> Self {
        Self::from_texts(DEFAULT_TEMPLATES.map(String::from)).expect("bundled templates are valid")
    }
}

fn placeholders(template: &str) -> BTreeSet<&str> {
    let mut out = BTreeSet::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.insert(&after[..end]);
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

fn check_template(
    name: &str,
    template: &str,
    required: &[&str],
    optional: &[&str],
) -> Result<(), ValueGenError> {
    let found = placeholders(template);
    for r in required {
        if !found.contains(r) {
            return Err(ValueGenError::Template(format!(
                "{name} is missing placeholder {{{{{r}}}}}"
            )));
        }
    }
    if let Some(extra) = found
        .iter()
        .find(|p| !required.contains(p) && !optional.contains(p))
    {
        return Err(ValueGenError::Template(format!(
            "{name} has unknown placeholder {{{{{extra}}}}}"
        )));
    }
    Ok(())
}

pub(crate) fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

impl PromptSpec {
    fn from_texts(texts: [String; 8]) -> Result<Self, ValueGenError> {
        let [prefix, history, current, slots, analysis, reasoning, json, repair] = texts;
        let spec = Self {
            delimiters: Delimiters {
                prefix: prefix.trim_end().to_string(),
                history: history.trim_end().to_string(),
                current: current.trim_end().to_string(),
                slots: slots.trim_end().to_string(),
            },
            react: ReactTemplates {
                analysis: analysis.trim_end().to_string(),
                reasoning: reasoning.trim_end().to_string(),
                json: json.trim_end().to_string(),
            },
            repair: repair.trim_end().to_string(),
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Reads template files from `dir`; files that are absent keep their bundled default.
    pub fn load_dir(dir: &Path) -> Result<Self, ValueGenError> {
        let mut texts = DEFAULT_TEMPLATES.map(String::from);
        for (slot, name) in texts.iter_mut().zip(TEMPLATE_FILES) {
            let path = dir.join(name);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)
                    .map_err(|e| ValueGenError::Template(format!("{}: {e}", path.display())))?;
            }
        }
        Self::from_texts(texts)
    }

    /// Writes the templates as editable files.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ValueGenError> {
        let texts = [
            &self.delimiters.prefix,
            &self.delimiters.history,
            &self.delimiters.current,
            &self.delimiters.slots,
            &self.react.analysis,
            &self.react.reasoning,
            &self.react.json,
            &self.repair,
        ];
        std::fs::create_dir_all(dir)
            .map_err(|e| ValueGenError::Template(format!("{}: {e}", dir.display())))?;
        for (text, name) in texts.into_iter().zip(TEMPLATE_FILES) {
            let path = dir.join(name);
            std::fs::write(&path, format!("{text}\n"))
                .map_err(|e| ValueGenError::Template(format!("{}: {e}", path.display())))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ValueGenError> {
        let d = &self.delimiters;
        for (name, text) in [
            ("prefix", &d.prefix),
            ("history", &d.history),
            ("current", &d.current),
            ("slots", &d.slots),
        ] {
            if text.trim().is_empty() {
                return Err(ValueGenError::Template(format!(
                    "{name} delimiter is empty"
                )));
            }
            check_template(name, text, &[], &[])?;
        }
        check_template("react analysis", &self.react.analysis, &["context"], &[])?;
        check_template(
            "react reasoning",
            &self.react.reasoning,
            &["context", "analysis"],
            &[],
        )?;
        check_template(
            "react json",
            &self.react.json,
            &["reasoning", "slots"],
            &["context"],
        )?;
        check_template("repair", &self.repair, &[], &[])?;
        if self.max_prompt_chars == 0 {
            return Err(ValueGenError::Template(
                "max_prompt_chars must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Everything the prompt is built from for one turn.
#[derive(Debug, Clone, Copy)]
pub struct PromptInputs<'a> {
    pub examples: &'a [RetrievedExample],
    pub history: &'a [Turn],
    pub current: &'a Turn,
    pub slots: &'a BTreeSet<String>,
}

fn render_example(e: &RetrievedExample) -> String {
    let pairs = serde_json::to_string(&e.record.gold_pairs).expect("string map serializes");
    format!("{}\n{pairs}", e.record.combined_text)
}

fn render(
    spec: &PromptSpec,
    examples: &[RetrievedExample],
    history: &[Turn],
    current: &Turn,
    slots: &str,
) -> String {
    let d = &spec.delimiters;
    let mut parts: Vec<String> = vec![d.prefix.clone()];
    parts.extend(examples.iter().map(render_example));
    parts.push(d.history.clone());
    parts.extend(history.iter().map(Turn::tagged_text));
    parts.push(d.current.clone());
    parts.push(current.tagged_text());
    parts.push(d.slots.clone());
    parts.push(slots.to_string());
    parts.join("\n")
}

/// Concatenates prefix, examples, history, current turn and slot list in that
/// order. Over budget, the oldest history turns go first, then the
/// least-similar examples.
pub fn assemble_prompt(
    spec: &PromptSpec,
    inputs: &PromptInputs<'_>,
) -> Result<String, ValueGenError> {
    let slots = inputs.slots.iter().cloned().collect::<Vec<_>>().join(", ");
    let mut history = inputs.history;
    let mut examples = inputs.examples;
    loop {
        let prompt = render(spec, examples, history, inputs.current, &slots);
        let len = prompt.chars().count();
        if len <= spec.max_prompt_chars {
            return Ok(prompt);
        }
        if let Some((_, rest)) = history.split_first() {
            history = rest;
        } else if let Some((_, rest)) = examples.split_last() {
            examples = rest;
        } else {
            return Err(ValueGenError::PromptTooLong {
                chars: len,
                budget: spec.max_prompt_chars,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::SlotValues;
    use crate::retrieval::ExampleRecord;

    fn example(id: &str, text: &str, slot: &str, value: &str) -> RetrievedExample {
        RetrievedExample {
            record: ExampleRecord {
                id: id.into(),
                embedding: vec![1.0],
                combined_text: text.into(),
                gold_pairs: SlotValues::from([(slot.to_string(), value.to_string())]),
            },
            similarity: 0.9,
        }
    }

    fn slots() -> BTreeSet<String> {
        ["hotel-area".to_string()].into()
    }

    #[test]
    fn zero_shot_has_only_the_four_sections() {
        let spec = PromptSpec::default();
        let current = Turn::user("in the north");
        let history = [Turn::user("a hotel"), Turn::assistant("which area?")];
        let s = slots();
        let prompt = assemble_prompt(
            &spec,
            &PromptInputs {
                examples: &[],
                history: &history,
                current: &current,
                slots: &s,
            },
        )
        .unwrap();
        let d = &spec.delimiters;
        let expected = [
            d.prefix.as_str(),
            d.history.as_str(),
            "[USER] a hotel",
            "[ASSISTANT] which area?",
            d.current.as_str(),
            "[USER] in the north",
            d.slots.as_str(),
            "hotel-area",
        ]
        .join("\n");
        assert_eq!(prompt, expected);
    }

    #[test]
    fn examples_sit_between_prefix_and_history_in_order() {
        let spec = PromptSpec::default();
        let ex = [
            example("a", "system:  | user: first", "hotel-area", "east"),
            example("b", "second", "hotel-stars", "4"),
        ];
        let current = Turn::user("north");
        let s = slots();
        let inputs = PromptInputs {
            examples: &ex,
            history: &[],
            current: &current,
            slots: &s,
        };
        let prompt = assemble_prompt(&spec, &inputs).unwrap();
        let p = prompt.find(&spec.delimiters.prefix).unwrap();
        let first = prompt
            .find("system:  | user: first\n{\"hotel-area\":\"east\"}")
            .unwrap();
        let second = prompt.find("second\n{\"hotel-stars\":\"4\"}").unwrap();
        let h = prompt.find(&spec.delimiters.history).unwrap();
        assert!(p < first && first < second && second < h);
        assert_eq!(prompt, assemble_prompt(&spec, &inputs).unwrap());
    }

    #[test]
    fn truncates_oldest_history_first() {
        let mut spec = PromptSpec::default();
        let history: Vec<Turn> = (0..6)
            .map(|i| Turn::user(format!("history line number {i}")))
            .collect();
        let current = Turn::user("now");
        let s = slots();
        let inputs = PromptInputs {
            examples: &[],
            history: &history,
            current: &current,
            slots: &s,
        };
        let full = assemble_prompt(&spec, &inputs).unwrap();
        spec.max_prompt_chars = full.chars().count() - 10;
        let cut = assemble_prompt(&spec, &inputs).unwrap();
        assert!(!cut.contains("number 0") && cut.contains("number 1") && cut.contains("number 5"));
        spec.max_prompt_chars = 5;
        assert!(matches!(
            assemble_prompt(&spec, &inputs),
            Err(ValueGenError::PromptTooLong { .. })
        ));
    }

    #[test]
    fn templates_validated_at_load() {
        let dir = tempfile::tempdir().unwrap();
        PromptSpec::default().write_dir(dir.path()).unwrap();
        assert_eq!(
            PromptSpec::load_dir(dir.path()).unwrap(),
            PromptSpec::default()
        );
        std::fs::write(
            dir.path().join("react_reasoning.txt"),
            "reason about {{context}}",
        )
        .unwrap();
        let err = PromptSpec::load_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains("analysis"), "{err}");
        std::fs::write(
            dir.path().join("react_reasoning.txt"),
            "{{context}} {{analysis}} {{bogus}}",
        )
        .unwrap();
        assert!(PromptSpec::load_dir(dir.path()).is_err());
    }
}
