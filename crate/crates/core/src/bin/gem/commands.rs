use std::path::Path;
use std::sync::Arc;

use gem_dst::config::RunConfig;
use gem_dst::dialogue::{
    build_context_window, load_multiwoz_dir, Corpus, Dialogue, Ontology, SlotValues,
};
use gem_dst::eval::{
    ablation_sweep, run_pipeline, write_run, Pipeline, RunReport, SweepCell, SweepRow, SweepSetup,
    TurnResult,
};
use gem_dst::gat::{build_graph, build_samples, train, GatModel, LabelSpace};
use gem_dst::retrieval::{build_index as build_vector_index, VectorIndex};
use gem_dst::router::{calibrate, CalibrationTurn, Expert, RouterMode};
use gem_dst::valuegen::GenerationMode;
use serde::Serialize;
use serde_json::json;

use crate::failure::Failure;
use crate::providers::{self, require};

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Failure::at("io", parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Failure::at("io", path, e))
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => std::fs::create_dir_all(parent).map_err(|e| Failure::at("io", parent, e)),
        None => Ok(()),
    }
}

fn print(value: &serde_json::Value) {
    println!("{value}");
}

/// Persists the resolved configuration so the command can be rerun from it.
pub fn write_snapshot(config: &RunConfig) -> Result<(), Failure> {
    write_file(&config.paths.out_dir.join("config.toml"), config.to_toml())
}

pub fn ingest(config: &RunConfig) -> Result<(), Failure> {
    let source = config
        .ingest
        .source
        .as_deref()
        .ok_or_else(|| Failure::new("config", "ingest.source is not set"))?;
    require(source, "MultiWOZ directory")?;
    let data = load_multiwoz_dir(source, config.ingest.label_mode)?;
    for w in &data.warnings {
        log::warn!("{w}");
    }
    let mut counts = serde_json::Map::new();
    for (split, dialogues) in &data.splits {
        let path = config.split_path(split);
        ensure_parent(&path)?;
        Corpus::new(data.ontology.clone(), dialogues.clone()).save(&path)?;
        counts.insert(split.clone(), json!(dialogues.len()));
    }
    print(
        &json!({"splits": counts, "warnings": data.warnings.len(), "data_dir": config.paths.data_dir}),
    );
    Ok(())
}

pub fn train_gat(config: &RunConfig) -> Result<(), Failure> {
    let corpus = providers::load_split(config, "train")?;
    let validation = providers::optional_split(config, "dev")?;
    let encoder = providers::embedder(config);
    let labels = LabelSpace::from_ontology(&corpus.ontology);
    let (window, bidir) = (config.gat.context_window, config.gat.bidirectional_edges);
    let train_samples = build_samples(&corpus.dialogues, &labels, encoder.as_ref(), window, bidir)?;
    let val_samples = build_samples(&validation, &labels, encoder.as_ref(), window, bidir)?;
    let model = GatModel::new(config.gat.clone(), encoder.dimension(), labels, config.seed)?;
    let outcome = train(
        model,
        &train_samples,
        &val_samples,
        &config.loss,
        &config.training,
    )?;
    ensure_parent(&config.paths.checkpoint)?;
    outcome.model.save(&config.paths.checkpoint)?;
    let log_path = config.paths.out_dir.join("training.jsonl");
    outcome.log.write_jsonl(&log_path)?;
    print(&json!({
        "checkpoint": config.paths.checkpoint,
        "epochs": outcome.log.epochs.len(),
        "best_epoch": outcome.log.best_epoch,
        "training_log": log_path,
    }));
    Ok(())
}

pub fn calibrate_router(config: &RunConfig) -> Result<(), Failure> {
    let corpus = providers::load_split(config, &config.eval.calibration_split)?;
    let model = providers::load_model(config)?;
    let encoder = providers::embedder(config);
    let seq = providers::seq_expert(config, &corpus.ontology)?;
    let mut turns = Vec::new();
    for d in &corpus.dialogues {
        for t in d.user_turn_indices() {
            let ctx = build_context_window(d, t, model.config().context_window)?;
            let graph = build_graph(&ctx, encoder.as_ref(), model.config().bidirectional_edges)?;
            let gnn = model.predict_current(&graph)?;
            let seq_out = seq.predict(&ctx)?;
            let turn = &d.turns[t];
            turns.push(CalibrationTurn {
                gold_domains: turn.gold_domains.clone(),
                gold_slots: turn.gold_slots.clone(),
                gnn_slots: gnn.slots,
                seq_slots: seq_out.slots,
            });
        }
    }
    let table = calibrate(&turns, corpus.ontology.domains().iter().cloned());
    ensure_parent(&config.paths.accuracy_table)?;
    table.save(&config.paths.accuracy_table)?;
    print(
        &json!({"accuracy_table": config.paths.accuracy_table, "turns": turns.len(), "table": table.entries()}),
    );
    Ok(())
}

pub fn build_index(config: &RunConfig) -> Result<(), Failure> {
    let corpus = providers::load_split(config, "train")?;
    let encoder = providers::embedder(config);
    let index = build_vector_index(&corpus.dialogues, encoder.as_ref())?;
    ensure_parent(&config.paths.index)?;
    index.save(&config.paths.index)?;
    print(
        &json!({"index": config.paths.index, "records": index.len(), "dimension": index.dimension()}),
    );
    Ok(())
}

fn run(
    config: &RunConfig,
    ontology: &Ontology,
    dialogues: &[Dialogue],
) -> Result<(Vec<TurnResult>, RunReport), Failure> {
    let encoder = providers::embedder(config);
    let needs_model = config.router.mode != RouterMode::ForceSeq
        || config.router.classifier == gem_dst::config::ClassifierKind::Model;
    let model = if needs_model || config.paths.checkpoint.exists() {
        Some(Arc::new(providers::load_model(config)?))
    } else {
        None
    };
    let router = providers::router(config)?;
    let seq = providers::seq_expert(config, ontology)?;
    let llm = providers::llm(config)?;
    let prompt = providers::prompt_spec(config)?;
    let index = if config.generator.mode == GenerationMode::ZeroShot {
        None
    } else {
        let path = require(&config.paths.index, "example index")?;
        Some(VectorIndex::open(path, Some(encoder.dimension()))?)
    };
    let classifier = providers::classifier(config, ontology, model.as_ref(), &encoder)?;
    let pipeline = Pipeline {
        ontology,
        window: config.gat.context_window,
        classifier: classifier.as_ref(),
        router: &router,
        gnn: model.as_deref(),
        graph_encoder: encoder.as_ref(),
        seq: seq.as_ref(),
        index: index.as_ref(),
        retrieval_encoder: encoder.as_ref(),
        top_k: config.retrieval.top_k,
        tau: config.retrieval.tau,
        llm: llm.as_ref(),
        prompt: &prompt,
        params: config.generator.params,
        mode: config.generator.mode,
        timing: providers::timing(config),
        max_in_flight: config.eval.max_in_flight,
        config_snapshot: config.to_json(),
    };
    let (results, report) = run_pipeline(&pipeline, dialogues)?;
    Ok((results, report))
}

fn strict_check(config: &RunConfig, report: &RunReport) -> Result<(), Failure> {
    let failed: usize = report.failures.values().sum();
    if config.strict && failed > 0 {
        return Err(Failure::new(
            "turn_failures",
            format!("{failed} turn(s) failed: {:?}", report.failures),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct TrackRecord<'a> {
    dialogue_id: &'a str,
    turn: usize,
    expert: Option<Expert>,
    domains: &'a std::collections::BTreeSet<String>,
    slots: &'a std::collections::BTreeSet<String>,
    turn_pairs: &'a SlotValues,
    state: &'a SlotValues,
    failure: Option<&'a str>,
}

fn read_track_input(
    config: &RunConfig,
    input: &Path,
) -> Result<(Ontology, Vec<Dialogue>), Failure> {
    require(input, "dialogue file")?;
    let text = std::fs::read_to_string(input).map_err(|e| Failure::at("io", input, e))?;
    if let Ok(corpus) = Corpus::from_json(&text) {
        return Ok((corpus.ontology, corpus.dialogues));
    }
    let dialogue: Dialogue =
        serde_json::from_str(&text).map_err(|e| Failure::at("corpus", input, e))?;
    let ontology = providers::load_split(config, "train")?.ontology;
    Ok((ontology, vec![dialogue]))
}

pub fn track(config: &RunConfig, input: &Path) -> Result<(), Failure> {
    let (ontology, dialogues) = read_track_input(config, input)?;
    let (results, report) = run(config, &ontology, &dialogues)?;
    for r in &results {
        let record = TrackRecord {
            dialogue_id: &r.dialogue_id,
            turn: r.turn,
            expert: r.expert,
            domains: &r.predicted_domains,
            slots: &r.predicted_slots,
            turn_pairs: &r.predicted_turn_pairs,
            state: &r.predicted_state,
            failure: r.failure.as_ref().map(|f| f.message.as_str()),
        };
        println!(
            "{}",
            serde_json::to_string(&record).expect("record serializes")
        );
    }
    strict_check(config, &report)
}

pub fn evaluate(config: &RunConfig) -> Result<(), Failure> {
    let corpus = providers::load_split(config, &config.eval.split)?;
    let (results, report) = run(config, &corpus.ontology, &corpus.dialogues)?;
    write_run(&config.paths.out_dir, &results, &report)?;
    print(
        &json!({"out_dir": config.paths.out_dir, "metrics": report.metrics, "failures": report.failures}),
    );
    strict_check(config, &report)
}

pub fn sweep(config: &RunConfig) -> Result<(), Failure> {
    let corpus = providers::load_split(config, "train")?;
    let validation = providers::optional_split(config, "dev")?;
    let eval = providers::load_split(config, &config.eval.split)?;
    let encoder = providers::embedder(config);
    let mut cells = Vec::new();
    for window in &config.sweep.windows {
        for (i, weights) in config.sweep.weights.iter().enumerate() {
            let mut gat = config.gat.clone();
            gat.context_window = *window;
            cells.push(SweepCell {
                name: format!("window={window} weights={i}"),
                gat,
                weights: *weights,
            });
        }
    }
    let setup = SweepSetup {
        train: &corpus.dialogues,
        validation: &validation,
        eval: &eval.dialogues,
        labels: LabelSpace::from_ontology(&corpus.ontology),
        encoder: encoder.as_ref(),
        options: config.training,
        seed: config.seed,
    };
    let rows = ablation_sweep(&setup, &cells, None);
    let mut csv = format!("{}\n", SweepRow::csv_header());
    let mut jsonl = String::new();
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
        jsonl.push_str(&serde_json::to_string(r).expect("row serializes"));
        jsonl.push('\n');
    }
    write_file(&config.paths.out_dir.join("sweep.csv"), &csv)?;
    write_file(&config.paths.out_dir.join("sweep.jsonl"), &jsonl)?;
    print!("{csv}");
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 && config.strict {
        return Err(Failure::new("sweep", format!("{failed} cell(s) failed")));
    }
    Ok(())
}
