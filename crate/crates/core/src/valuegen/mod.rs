//! Slot-value generation: prompt assembly, few-shot and three-stage LLM
//! generation, JSON extraction with one repair round, and ontology validation.

mod client;
mod prompt;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use client::{
    FnLlmClient, GenerationParams, LlmClient, LlmError, RecordingLlmClient, RemoteLlmClient,
    ScriptEntry, ScriptedLlmClient,
};
pub use prompt::{
    assemble_prompt, Delimiters, GenerationMode, PromptInputs, PromptSpec, ReactTemplates,
    DEFAULT_MAX_PROMPT_CHARS,
};

use crate::dialogue::{Ontology, SlotValues};
use crate::text::{content_hash, normalize_value, DELETE_MARKER, DONT_CARE};

#[derive(Debug, thiserror::Error)]
pub enum ValueGenError {
    #[error("prompt template: {0}")]
    Template(String),
    #[error("prompt of {chars} characters exceeds the budget of {budget}")]
    PromptTooLong { chars: usize, budget: usize },
    #[error("generation failed: {0}")]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    UnknownSlot,
    BadValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub slot: String,
    pub value: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedPairs {
    pub pairs: SlotValues,
    pub rejects: Vec<Reject>,
}

/// Normalizes values and drops pairs with unknown slots or values outside a
/// categorical slot's allowed set. `none` and `dontcare` pass for every slot.
pub fn validate_pairs<I, S, V>(pairs: I, ontology: &Ontology) -> ValidatedPairs
where
    I: IntoIterator<Item = (S, V)>,
    S: AsRef<str>,
    V: AsRef<str>,
{
    let mut out = ValidatedPairs::default();
    for (slot, value) in pairs {
        let slot = slot.as_ref().trim().to_string();
        let value = normalize_value(value.as_ref());
        let reason = if !ontology.has_slot(&slot) {
            Some(RejectReason::UnknownSlot)
        } else if value.is_empty() {
            Some(RejectReason::BadValue)
        } else if value == DELETE_MARKER || value == DONT_CARE {
            None
        } else {
            match ontology.allowed_values(&slot) {
                Some(allowed) if !allowed.is_empty() && !allowed.contains(&value) => {
                    Some(RejectReason::BadValue)
                }
                _ => None,
            }
        };
        match reason {
            Some(reason) => out.rejects.push(Reject {
                slot,
                value,
                reason,
            }),
            None => {
                out.pairs.insert(slot, value);
            }
        }
    }
    out
}

/// Finds the first balanced `{...}` span that parses as a JSON object.
/// Braces inside JSON strings are ignored while matching.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(offset) = text[start..].find('{') {
        let open = start + offset;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut close = None;
        for (i, &b) in bytes.iter().enumerate().skip(open) {
            if in_string {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_string = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_string = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        close = Some(i);
                        break;
                    }
                }
                _ => {}
            }
        }
        let close = close?;
        if let Ok(serde_json::Value::Object(map)) = serde_json::from_str(&text[open..=close]) {
            return Some(map);
        }
        start = open + 1;
    }
    None
}

/// Flattens JSON values to strings; nested values and nulls become rejects.
fn json_pairs(
    map: serde_json::Map<String, serde_json::Value>,
) -> (Vec<(String, String)>, Vec<Reject>) {
    let mut pairs = Vec::new();
    let mut rejects = Vec::new();
    for (slot, value) in map {
        match value {
            serde_json::Value::String(s) => pairs.push((slot, s)),
            serde_json::Value::Number(n) => pairs.push((slot, n.to_string())),
            serde_json::Value::Bool(b) => pairs.push((slot, b.to_string())),
            other => rejects.push(Reject {
                slot,
                value: other.to_string(),
                reason: RejectReason::BadValue,
            }),
        }
    }
    (pairs, rejects)
}

/// One prompt and its completion, kept for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt_hash: String,
    pub completion: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotValuePrediction {
    pub pairs: SlotValues,
    pub raw_completion: String,
    pub repair_count: u32,
    /// No JSON object was recovered, even after repair.
    pub failed: bool,
    pub rejects: Vec<Reject>,
    pub exchanges: Vec<Exchange>,
}

fn ask(
    client: &dyn LlmClient,
    prompt: &str,
    params: &GenerationParams,
    log: &mut Vec<Exchange>,
) -> Result<String, LlmError> {
    let completion = client.complete(prompt, params)?;
    log.push(Exchange {
        prompt_hash: content_hash(prompt),
        completion: completion.clone(),
    });
    Ok(completion)
}

/// Parses `completion`; on failure sends one repair prompt built from
/// `prompt`, the failed completion and the repair instruction.
fn parse_with_repair(
    client: &dyn LlmClient,
    spec: &PromptSpec,
    params: &GenerationParams,
    ontology: &Ontology,
    prompt: &str,
    completion: String,
    mut exchanges: Vec<Exchange>,
) -> Result<SlotValuePrediction, LlmError> {
    let mut raw = completion;
    let mut repair_count = 0;
    let mut object = extract_json_object(&raw);
    if object.is_none() {
        repair_count = 1;
        let repair_prompt = format!("{prompt}\n{raw}\n{}", spec.repair);
        raw = ask(client, &repair_prompt, params, &mut exchanges)?;
        object = extract_json_object(&raw);
    }
    let Some(object) = object else {
        return Ok(SlotValuePrediction {
            raw_completion: raw,
            repair_count,
            failed: true,
            exchanges,
            ..Default::default()
        });
    };
    let (pairs, mut rejects) = json_pairs(object);
    let validated = validate_pairs(pairs, ontology);
    rejects.extend(validated.rejects);
    Ok(SlotValuePrediction {
        pairs: validated.pairs,
        raw_completion: raw,
        repair_count,
        failed: false,
        rejects,
        exchanges,
    })
}

/// Single-prompt generation. Transport failures are errors; unparseable
/// output after the repair round yields an empty prediction marked failed.
pub fn generate(
    client: &dyn LlmClient,
    spec: &PromptSpec,
    params: &GenerationParams,
    inputs: &PromptInputs<'_>,
    ontology: &Ontology,
) -> Result<SlotValuePrediction, ValueGenError> {
    let prompt = assemble_prompt(spec, inputs)?;
    let mut exchanges = Vec::new();
    let completion = ask(client, &prompt, params, &mut exchanges)?;
    Ok(parse_with_repair(
        client, spec, params, ontology, &prompt, completion, exchanges,
    )?)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReactTrace {
    pub analysis: String,
    pub reasoning: String,
    pub json_stage: String,
    /// Stages that returned a completion (0 to 3).
    pub reached_stages: u8,
    #[serde(rename = "final")]
    pub final_prediction: SlotValuePrediction,
    /// Transport error that stopped the trace, if any.
    pub error: Option<String>,
}

/// Analysis, reasoning and JSON stages run as three sequential completions;
/// the JSON stage goes through the same repair policy as [`generate`].
pub fn react_generate(
    client: &dyn LlmClient,
    spec: &PromptSpec,
    params: &GenerationParams,
    inputs: &PromptInputs<'_>,
    ontology: &Ontology,
) -> Result<ReactTrace, ValueGenError> {
    let context = assemble_prompt(spec, inputs)?;
    let slots = inputs.slots.iter().cloned().collect::<Vec<_>>().join(", ");
    let mut trace = ReactTrace::default();
    let mut exchanges = Vec::new();
    let fail = |mut trace: ReactTrace, exchanges: Vec<Exchange>, e: LlmError| {
        trace.error = Some(e.to_string());
        trace.final_prediction = SlotValuePrediction {
            failed: true,
            exchanges,
            ..Default::default()
        };
        Ok(trace)
    };

    let p1 = prompt::fill(&spec.react.analysis, &[("context", &context)]);
    match ask(client, &p1, params, &mut exchanges) {
        Ok(c) => trace.analysis = c,
        Err(e) => return fail(trace, exchanges, e),
    }
    trace.reached_stages = 1;
    let p2 = prompt::fill(
        &spec.react.reasoning,
        &[("context", &context), ("analysis", &trace.analysis)],
    );
    match ask(client, &p2, params, &mut exchanges) {
        Ok(c) => trace.reasoning = c,
        Err(e) => return fail(trace, exchanges, e),
    }
    trace.reached_stages = 2;
    let p3 = prompt::fill(
        &spec.react.json,
        &[
            ("context", &context),
            ("reasoning", &trace.reasoning),
            ("slots", &slots),
        ],
    );
    match ask(client, &p3, params, &mut exchanges) {
        Ok(c) => trace.json_stage = c,
        Err(e) => return fail(trace, exchanges, e),
    }
    trace.reached_stages = 3;
    match parse_with_repair(
        client,
        spec,
        params,
        ontology,
        &p3,
        trace.json_stage.clone(),
        exchanges.clone(),
    ) {
        Ok(prediction) => trace.final_prediction = prediction,
        Err(e) => return fail(trace, exchanges, e),
    }
    Ok(trace)
}

/// Renders the three stage prompts for given stage outputs, for building replay scripts.
pub fn react_stage_prompts(
    spec: &PromptSpec,
    inputs: &PromptInputs<'_>,
    analysis: &str,
    reasoning: &str,
) -> Result<[String; 3], ValueGenError> {
    let context = assemble_prompt(spec, inputs)?;
    let slots = inputs.slots.iter().cloned().collect::<Vec<_>>().join(", ");
    Ok([
        prompt::fill(&spec.react.analysis, &[("context", &context)]),
        prompt::fill(
            &spec.react.reasoning,
            &[("context", &context), ("analysis", analysis)],
        ),
        prompt::fill(
            &spec.react.json,
            &[
                ("context", &context),
                ("reasoning", reasoning),
                ("slots", &slots),
            ],
        ),
    ])
}

/// Sorted `slot=value` listing, handy for logs.
pub fn describe_pairs(pairs: &BTreeMap<String, String>) -> String {
    pairs
        .iter()
        .map(|(s, v)| format!("{s}={v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::Turn;
    use std::collections::BTreeSet;

    fn ontology() -> Ontology {
        Ontology::new(
            ["hotel", "train", "a"],
            ["find_hotel"],
            ["hotel-area", "hotel-name", "train-day", "a-b"],
            BTreeMap::from([(
                "hotel-area".to_string(),
                vec!["north".to_string(), "south".to_string()],
            )]),
        )
        .unwrap()
    }

    #[test]
    fn validation_rules() {
        let o = ontology();
        let v = validate_pairs([("hotel-area", "North ")], &o);
        assert_eq!(
            v.pairs,
            SlotValues::from([("hotel-area".into(), "north".into())])
        );
        let v = validate_pairs([("fake-slot", "x")], &o);
        assert_eq!(v.rejects[0].reason, RejectReason::UnknownSlot);
        let v = validate_pairs([("hotel-area", "west")], &o);
        assert_eq!(v.rejects[0].reason, RejectReason::BadValue);
        let v = validate_pairs([("hotel-area", "dontcare"), ("hotel-name", "None")], &o);
        assert!(v.rejects.is_empty() && v.pairs.len() == 2);
    }

    #[test]
    fn json_extraction() {
        assert_eq!(
            extract_json_object("sure! {\"a\":\"b\"}").unwrap()["a"],
            "b"
        );
        assert_eq!(
            extract_json_object("x {\"a\":\"}{\"} y").unwrap()["a"],
            "}{"
        );
        assert_eq!(
            extract_json_object("{oops} then {\"k\": {\"n\": 1}}").unwrap()["k"]["n"],
            1
        );
        assert!(extract_json_object("no braces").is_none());
        assert!(extract_json_object("{ unbalanced").is_none());
    }

    fn inputs<'a>(current: &'a Turn, slots: &'a BTreeSet<String>) -> PromptInputs<'a> {
        PromptInputs {
            examples: &[],
            history: &[],
            current,
            slots,
        }
    }

    #[test]
    fn generate_parses_and_repairs() {
        let o = ontology();
        let spec = PromptSpec::default();
        let params = GenerationParams::default();
        let current = Turn::user("north please");
        let slots: BTreeSet<String> = ["hotel-area".to_string()].into();
        let prompt = assemble_prompt(&spec, &inputs(&current, &slots)).unwrap();

        let client = ScriptedLlmClient::new([ScriptEntry::completion(
            &prompt,
            "{\"hotel-area\":\"north\"}",
        )]);
        let p = generate(&client, &spec, &params, &inputs(&current, &slots), &o).unwrap();
        assert_eq!(
            p.pairs,
            SlotValues::from([("hotel-area".into(), "north".into())])
        );
        assert_eq!((p.repair_count, p.failed), (0, false));

        let client =
            ScriptedLlmClient::new([ScriptEntry::completion(&prompt, "sure! {\"a-b\":\"b\"}")]);
        let p = generate(&client, &spec, &params, &inputs(&current, &slots), &o).unwrap();
        assert_eq!(p.pairs, SlotValues::from([("a-b".into(), "b".into())]));

        let repair = format!("{prompt}\ngarbage\n{}", spec.repair);
        let client = ScriptedLlmClient::new([
            ScriptEntry::completion(&prompt, "garbage"),
            ScriptEntry::completion(&repair, "still garbage"),
        ]);
        let p = generate(&client, &spec, &params, &inputs(&current, &slots), &o).unwrap();
        assert!(p.failed && p.pairs.is_empty());
        assert_eq!(p.repair_count, 1);
        assert_eq!(p.exchanges.len(), 2);

        let client = ScriptedLlmClient::new([ScriptEntry::failure(&prompt, "timeout")]);
        assert!(matches!(
            generate(&client, &spec, &params, &inputs(&current, &slots), &o),
            Err(ValueGenError::Llm(_))
        ));
    }

    #[test]
    fn react_three_stages_and_stage_failure() {
        let o = ontology();
        let spec = PromptSpec::default();
        let params = GenerationParams::default();
        let current = Turn::user("a train on monday");
        let slots: BTreeSet<String> = ["train-day".to_string()].into();
        let inp = inputs(&current, &slots);
        let [p1, p2, p3] =
            react_stage_prompts(&spec, &inp, "user wants a train", "day is monday").unwrap();
        let script = vec![
            ScriptEntry::completion(&p1, "user wants a train"),
            ScriptEntry::completion(&p2, "day is monday"),
            ScriptEntry::completion(&p3, "{\"train-day\":\"monday\"}"),
        ];
        let client = ScriptedLlmClient::new(script.clone());
        let t = react_generate(&client, &spec, &params, &inp, &o).unwrap();
        assert_eq!(t.reached_stages, 3);
        assert!(!t.analysis.is_empty() && !t.reasoning.is_empty() && !t.json_stage.is_empty());
        assert_eq!(
            t.final_prediction.pairs,
            SlotValues::from([("train-day".into(), "monday".into())])
        );
        let again =
            react_generate(&ScriptedLlmClient::new(script), &spec, &params, &inp, &o).unwrap();
        assert_eq!(t, again);

        let client = ScriptedLlmClient::new([
            ScriptEntry::completion(&p1, "user wants a train"),
            ScriptEntry::failure(&p2, "connection reset"),
        ]);
        let t = react_generate(&client, &spec, &params, &inp, &o).unwrap();
        assert_eq!(t.reached_stages, 1);
        assert!(t.reasoning.is_empty() && t.json_stage.is_empty());
        assert!(t.final_prediction.failed);
        assert!(t.error.unwrap().contains("connection reset"));
    }
}
