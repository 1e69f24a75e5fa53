use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use super::{ComponentTimings, EvalError, GenerationRecord, RunReport, TurnFailure, TurnResult};
use crate::dialogue::{build_context_window, Dialogue, DialogueState, Ontology, WindowSize};
use crate::gat::{build_graph, GatModel};
use crate::retrieval::{combine_fields, EmbeddingProvider, RetrievedExample, VectorIndex};
use crate::router::{DomainClassifier, Expert, Router};
use crate::seq::SeqExpert;
use crate::valuegen::{
    generate, react_generate, GenerationMode, GenerationParams, LlmClient, PromptInputs, PromptSpec,
};

/// Clock used for per-component latency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimingSource {
    #[default]
    Wall,
    /// Every measurement reports this duration, so reports are reproducible byte for byte.
    Fixed(Duration),
}

impl TimingSource {
    fn time<T>(self, f: impl FnOnce() -> T) -> (T, f64) {
        match self {
            TimingSource::Wall => {
                let start = Instant::now();
                let out = f();
                (out, start.elapsed().as_secs_f64() * 1e3)
            }
            TimingSource::Fixed(d) => (f(), d.as_secs_f64() * 1e3),
        }
    }
}

/// All components of one evaluation run.
#[derive(Clone)]
pub struct Pipeline<'a> {
    pub ontology: &'a Ontology,
    pub window: WindowSize,
    pub classifier: &'a dyn DomainClassifier,
    pub router: &'a Router,
    pub gnn: Option<&'a GatModel>,
    /// Node encoder for the graph expert; its dimension must match the model input.
    pub graph_encoder: &'a dyn EmbeddingProvider,
    pub seq: &'a dyn SeqExpert,
    pub index: Option<&'a VectorIndex>,
    /// Query encoder for retrieval; its dimension must match the index.
    pub retrieval_encoder: &'a dyn EmbeddingProvider,
    pub top_k: usize,
    pub tau: f64,
    pub llm: &'a dyn LlmClient,
    pub prompt: &'a PromptSpec,
    pub params: GenerationParams,
    pub mode: GenerationMode,
    pub timing: TimingSource,
    /// Dialogues evaluated concurrently.
    pub max_in_flight: usize,
    /// Resolved configuration embedded in the report.
    pub config_snapshot: serde_json::Value,
}

struct Labels {
    intents: BTreeSet<String>,
    domains: BTreeSet<String>,
    slots: BTreeSet<String>,
}

impl Pipeline<'_> {
    fn expert_labels(
        &self,
        expert: Expert,
        ctx: &crate::dialogue::ContextWindow,
    ) -> Result<Labels, String> {
        match expert {
            Expert::Gnn => {
                let model = self
                    .gnn
                    .ok_or("graph expert selected but no model is loaded")?;
                let graph =
                    build_graph(ctx, self.graph_encoder, model.config().bidirectional_edges)
                        .map_err(|e| e.to_string())?;
                let l = model.predict_current(&graph).map_err(|e| e.to_string())?;
                Ok(Labels {
                    intents: l.intents,
                    domains: l.domains,
                    slots: l.slots,
                })
            }
            Expert::Seq => {
                let out = self.seq.predict(ctx).map_err(|e| e.to_string())?;
                Ok(Labels {
                    intents: out.intents,
                    domains: out.domains,
                    slots: out.slots,
                })
            }
        }
    }

    fn retrieve(
        &self,
        dialogue: &Dialogue,
        t: usize,
        slots: &BTreeSet<String>,
    ) -> Result<Vec<RetrievedExample>, String> {
        let Some(index) = self.index else {
            return Ok(Vec::new());
        };
        if self.mode == GenerationMode::ZeroShot || self.top_k == 0 {
            return Ok(Vec::new());
        }
        let text = combine_fields(
            dialogue.previous_assistant_text(t),
            &dialogue.turns[t].text,
            slots,
        );
        let query = self
            .retrieval_encoder
            .embed(&text)
            .map_err(|e| e.to_string())?;
        if query.iter().all(|&x| x == 0.0) {
            return Ok(Vec::new());
        }
        index
            .query_topk(&query, self.top_k, self.tau)
            .map_err(|e| e.to_string())
    }

    fn run_dialogue(&self, dialogue: &Dialogue) -> Vec<TurnResult> {
        let mut state = DialogueState::default();
        let mut out = Vec::new();
        for t in dialogue.user_turn_indices() {
            let turn = &dialogue.turns[t];
            let gold_state = dialogue.gold_state(t).map(|s| s.pairs).unwrap_or_default();
            let mut r = TurnResult {
                dialogue_id: dialogue.id.clone(),
                turn: t,
                route: None,
                expert: None,
                predicted_intents: BTreeSet::new(),
                predicted_domains: BTreeSet::new(),
                predicted_slots: BTreeSet::new(),
                predicted_turn_pairs: Default::default(),
                predicted_state: Default::default(),
                gold_intents: turn.gold_intents.clone(),
                gold_domains: turn.gold_domains.clone(),
                gold_slots: turn.gold_slots.clone(),
                gold_turn_pairs: turn.gold_turn_values.clone(),
                gold_state,
                retrieved: Vec::new(),
                generation: GenerationRecord::Skipped,
                timings: ComponentTimings::default(),
                failure: None,
            };
            if let Err(failure) = self.run_turn(dialogue, t, &mut r) {
                r.failure = Some(failure);
            }
            state.apply(&r.predicted_turn_pairs);
            r.predicted_state = state.pairs.clone();
            out.push(r);
        }
        out
    }

    fn run_turn(
        &self,
        dialogue: &Dialogue,
        t: usize,
        r: &mut TurnResult,
    ) -> Result<(), TurnFailure> {
        let fail = |component: &str| {
            let component = component.to_string();
            move |message: String| TurnFailure { component, message }
        };
        let ctx = build_context_window(dialogue, t, self.window)
            .map_err(|e| fail("window")(e.to_string()))?;

        let (domains, ms) = self.timing.time(|| self.classifier.classify(&ctx));
        r.timings.classify_ms = ms;
        let domains = domains.map_err(|e| fail("classifier")(e.to_string()))?;

        let (decision, ms) = self.timing.time(|| self.router.decide(&domains));
        r.timings.route_ms = ms;
        let decision = decision.map_err(|e| fail("router")(e.to_string()))?;
        let expert = decision.chosen;
        r.route = Some(decision);
        r.expert = Some(expert);

        let (labels, ms) = self.timing.time(|| self.expert_labels(expert, &ctx));
        r.timings.expert_ms = ms;
        let labels = labels.map_err(fail(match expert {
            Expert::Gnn => "gnn",
            Expert::Seq => "seq",
        }))?;
        r.predicted_intents = labels.intents;
        r.predicted_domains = labels.domains;
        r.predicted_slots = labels.slots;

        let (examples, ms) = self
            .timing
            .time(|| self.retrieve(dialogue, t, &r.predicted_slots));
        r.timings.retrieve_ms = ms;
        let examples = examples.map_err(fail("retrieval"))?;
        r.retrieved = examples.iter().map(|e| e.record.id.clone()).collect();

        let inputs = PromptInputs {
            examples: &examples,
            history: ctx.history(),
            current: ctx.current(),
            slots: &r.predicted_slots,
        };
        let (generation, ms) = self.timing.time(|| {
            if r.predicted_slots.is_empty() {
                return Ok(GenerationRecord::Skipped);
            }
            match self.mode {
                GenerationMode::React => {
                    react_generate(self.llm, self.prompt, &self.params, &inputs, self.ontology)
                        .map(GenerationRecord::React)
                }
                _ => generate(self.llm, self.prompt, &self.params, &inputs, self.ontology)
                    .map(GenerationRecord::Direct),
            }
        });
        r.timings.generate_ms = ms;
        let generation = generation.map_err(|e| fail("generator")(e.to_string()))?;
        let prediction = match &generation {
            GenerationRecord::Skipped => None,
            GenerationRecord::Direct(p) => Some(p),
            GenerationRecord::React(trace) => Some(&trace.final_prediction),
        };
        if let Some(p) = prediction {
            r.predicted_turn_pairs = p.pairs.clone();
        }
        let react_error = match &generation {
            GenerationRecord::React(trace) => trace.error.clone(),
            _ => None,
        };
        r.generation = generation;
        match react_error {
            Some(message) => Err(fail("generator")(message)),
            None => Ok(()),
        }
    }
}

/// Runs every user turn of `dialogues`; dialogues run concurrently up to the
/// in-flight cap, turns within a dialogue in order. Component failures mark
/// the turn failed and the run continues.
pub fn run_pipeline(
    pipeline: &Pipeline<'_>,
    dialogues: &[Dialogue],
) -> Result<(Vec<TurnResult>, RunReport), EvalError> {
    if let (Some(model), dim) = (pipeline.gnn, pipeline.graph_encoder.dimension()) {
        if model.input_dim() != dim {
            return Err(EvalError::Setup(format!(
                "graph encoder dimension {dim} does not match model input {}",
                model.input_dim()
            )));
        }
    }
    if let Some(index) = pipeline.index {
        if index.dimension() != pipeline.retrieval_encoder.dimension() {
            return Err(EvalError::Setup(format!(
                "retrieval encoder dimension {} does not match index dimension {}",
                pipeline.retrieval_encoder.dimension(),
                index.dimension()
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(pipeline.max_in_flight.max(1))
        .build()
        .map_err(|e| EvalError::Setup(e.to_string()))?;
    let per_dialogue: Vec<Vec<TurnResult>> = pool.install(|| {
        dialogues
            .par_iter()
            .map(|d| pipeline.run_dialogue(d))
            .collect()
    });
    let results: Vec<TurnResult> = per_dialogue.into_iter().flatten().collect();
    let report = RunReport::from_results(&results, pipeline.config_snapshot.clone())?;
    Ok((results, report))
}
