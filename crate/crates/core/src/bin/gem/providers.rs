use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use gem_dst::config::{ClassifierKind, RunConfig};
use gem_dst::dialogue::{Corpus, Dialogue, Ontology};
use gem_dst::eval::TimingSource;
use gem_dst::gat::GatModel;
use gem_dst::retrieval::{
    CachingProvider, EmbeddingProvider, HashEmbeddingProvider, RemoteEmbeddingClient,
};
use gem_dst::router::{
    AccuracyTable, DomainClassifier, ModelDomainClassifier, Router, StubDomainClassifier,
};
use gem_dst::seq::{RemoteSeqExpert, SeqExpert, StubSeqExpert};
use gem_dst::valuegen::{LlmClient, PromptSpec, RemoteLlmClient, ScriptedLlmClient};

use crate::failure::Failure;

pub fn require<'a>(path: &'a Path, what: &str) -> Result<&'a Path, Failure> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Failure::missing(path, what))
    }
}

pub fn load_split(config: &RunConfig, split: &str) -> Result<Corpus, Failure> {
    let path = config.split_path(split);
    require(&path, &format!("{split} split"))?;
    Ok(Corpus::load(&path)?)
}

/// Loads a split when its file exists, else an empty dialogue list.
pub fn optional_split(config: &RunConfig, split: &str) -> Result<Vec<Dialogue>, Failure> {
    let path = config.split_path(split);
    if path.exists() {
        Ok(Corpus::load(&path)?.dialogues)
    } else {
        Ok(Vec::new())
    }
}

pub fn embedder(config: &RunConfig) -> Arc<dyn EmbeddingProvider> {
    match (&config.embedding.remote, config.stub_providers) {
        (Some(remote), false) => Arc::new(CachingProvider::new(RemoteEmbeddingClient::new(
            remote.clone(),
            config.embedding.dimension,
        ))),
        _ => Arc::new(HashEmbeddingProvider::new(config.embedding.dimension)),
    }
}

pub fn seq_expert(config: &RunConfig, ontology: &Ontology) -> Result<Box<dyn SeqExpert>, Failure> {
    if let (Some(remote), false) = (&config.seq.remote, config.stub_providers) {
        return Ok(Box::new(RemoteSeqExpert::new(
            remote.clone(),
            ontology.clone(),
            config.seq.label_mode,
        )));
    }
    if let Some(path) = &config.seq.stub_table {
        require(path, "sequence expert stub table")?;
        return Ok(Box::new(StubSeqExpert::load(ontology.clone(), path)?));
    }
    let mut dialogues = Vec::new();
    for split in ["train", "dev", "test"] {
        dialogues.extend(optional_split(config, split)?);
    }
    Ok(Box::new(StubSeqExpert::from_gold(
        ontology.clone(),
        &dialogues,
        config.gat.context_window,
    )))
}

pub fn llm(config: &RunConfig) -> Result<Box<dyn LlmClient>, Failure> {
    let g = &config.generator;
    if let (Some(remote), false) = (&g.remote, config.stub_providers) {
        return Ok(Box::new(RemoteLlmClient::new(remote.clone())));
    }
    let client = match &g.script {
        Some(path) => ScriptedLlmClient::load(require(path, "generator script")?)?,
        None if config.stub_providers => ScriptedLlmClient::default(),
        None => {
            return Err(Failure::new(
                "config",
                "generator needs generator.remote or generator.script unless stub providers are enabled",
            ))
        }
    };
    let fallback = match (
        &g.script_fallback,
        config.stub_providers && g.script.is_none(),
    ) {
        (Some(f), _) => Some(f.clone()),
        (None, true) => Some("{}".to_string()),
        (None, false) => None,
    };
    Ok(Box::new(match fallback {
        Some(f) => client.with_fallback(f),
        None => client,
    }))
}

pub fn prompt_spec(config: &RunConfig) -> Result<PromptSpec, Failure> {
    let mut spec = match &config.paths.templates {
        Some(dir) => PromptSpec::load_dir(require(dir, "prompt template directory")?)?,
        None => PromptSpec::default(),
    };
    spec.max_prompt_chars = config.generator.max_prompt_chars;
    Ok(spec)
}

pub fn load_model(config: &RunConfig) -> Result<GatModel, Failure> {
    let path = &config.paths.checkpoint;
    require(path, "graph expert checkpoint")?;
    Ok(GatModel::load(path)?)
}

pub fn router(config: &RunConfig) -> Result<Router, Failure> {
    let path = &config.paths.accuracy_table;
    require(path, "router accuracy table")?;
    Ok(Router::new(AccuracyTable::load(path)?, config.router.mode))
}

pub fn classifier(
    config: &RunConfig,
    ontology: &Ontology,
    model: Option<&Arc<GatModel>>,
    encoder: &Arc<dyn EmbeddingProvider>,
) -> Result<Box<dyn DomainClassifier>, Failure> {
    Ok(match (config.router.classifier, &config.router.keywords) {
        (ClassifierKind::Model, _) => {
            let model = model.ok_or_else(|| {
                Failure::missing(&config.paths.checkpoint, "graph expert checkpoint")
            })?;
            Box::new(ModelDomainClassifier::new(model.clone(), encoder.clone()))
        }
        (ClassifierKind::Keyword, Some(map)) => Box::new(StubDomainClassifier::new(map.clone())),
        (ClassifierKind::Keyword, None) => Box::new(StubDomainClassifier::multiwoz(ontology)),
    })
}

pub fn timing(config: &RunConfig) -> TimingSource {
    if config.stub_providers {
        TimingSource::Fixed(Duration::from_millis(config.eval.stub_latency_ms))
    } else {
        TimingSource::Wall
    }
}
