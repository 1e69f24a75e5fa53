//! Resolved run configuration shared by every command.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dialogue::{LabelMode, WindowSize};
use crate::gat::{GatConfig, LossWeights, TrainOptions};
use crate::http::RemoteSettings;
use crate::retrieval::{DEFAULT_SIMILARITY_THRESHOLD, DEFAULT_TOP_K};
use crate::router::RouterMode;
use crate::valuegen::{GenerationMode, GenerationParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<FieldError>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Directory of canonical corpora, one `<split>.json` per split.
    pub data_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub accuracy_table: PathBuf,
    pub index: PathBuf,
    /// Directory overriding the bundled prompt templates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint: "artifacts/gat.bin".into(),
            accuracy_table: "artifacts/accuracy.csv".into(),
            index: "artifacts/index.bin".into(),
            templates: None,
            out_dir: "runs".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// Raw MultiWOZ directory holding `schema.json` and split folders.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<PathBuf>,
    pub label_mode: LabelMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Keyword lookup on the current utterance.
    #[default]
    Keyword,
    /// Domain head of the trained graph expert.
    Model,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterConfig {
    pub mode: RouterMode,
    pub classifier: ClassifierKind,
    /// Keyword to domain map replacing the built-in one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keywords: Option<BTreeMap<String, String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub dimension: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteSettings>,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            dimension: 256,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalConfig {
    pub top_k: usize,
    pub tau: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            tau: DEFAULT_SIMILARITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteSettings>,
    /// Lookup table used by the stub expert; gold labels are used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stub_table: Option<PathBuf>,
    pub label_mode: LabelMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub mode: GenerationMode,
    pub params: GenerationParams,
    pub max_prompt_chars: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteSettings>,
    /// Replay script for the scripted client.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Completion the scripted client returns for prompts missing from the script.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub script_fallback: Option<String>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            mode: GenerationMode::default(),
            params: GenerationParams::default(),
            max_prompt_chars: 16_000,
            remote: None,
            script: None,
            script_fallback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: String,
    pub calibration_split: String,
    pub max_in_flight: usize,
    /// Latency reported for every component under stub providers.
    pub stub_latency_ms: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: "test".into(),
            calibration_split: "dev".into(),
            max_in_flight: 4,
            stub_latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub windows: Vec<WindowSize>,
    pub weights: Vec<LossWeights>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            windows: vec![
                WindowSize::Bounded(0),
                WindowSize::Bounded(1),
                WindowSize::Bounded(2),
                WindowSize::Full,
            ],
            weights: vec![LossWeights::default()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub seed: u64,
    pub stub_providers: bool,
    pub strict: bool,
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub gat: GatConfig,
    pub loss: LossWeights,
    pub training: TrainOptions,
    pub router: RouterConfig,
    pub embedding: EmbeddingConfig,
    pub retrieval: RetrievalConfig,
    pub seq: SeqConfig,
    pub generator: GeneratorConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub stub_providers: bool,
    pub strict: bool,
}

impl RunConfig {
    /// Parses TOML, rejecting unknown keys, then validates.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Invalid(vec![FieldError {
                field: if field == "." { "<root>".into() } else { field },
                message: e.into_inner().message().trim().to_string(),
            }])
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Defaults, then the optional file, then flags.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(dir) = &overrides.out_dir {
            config.paths.out_dir = dir.clone();
        }
        config.stub_providers |= overrides.stub_providers;
        config.strict |= overrides.strict;
        if config.strict {
            config.ingest.label_mode = LabelMode::Strict;
            config.seq.label_mode = LabelMode::Strict;
        }
        config.validate()?;
        Ok(config)
    }

    /// Collects every semantic problem rather than stopping at the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        let mut check = |ok: bool, field: &str, message: &str| {
            if !ok {
                errors.push(FieldError {
                    field: field.into(),
                    message: message.into(),
                });
            }
        };
        if let Err(e) = self.gat.validate() {
            check(false, "gat", &e.to_string());
        }
        if let Err(e) = self.loss.validate() {
            check(false, "loss", &e.to_string());
        }
        for (i, w) in self.sweep.weights.iter().enumerate() {
            if let Err(e) = w.validate() {
                check(false, &format!("sweep.weights[{i}]"), &e.to_string());
            }
        }
        let t = &self.training;
        check(t.batch_size >= 1, "training.batch_size", "must be >= 1");
        check(
            t.learning_rate.is_finite() && t.learning_rate > 0.0,
            "training.learning_rate",
            "must be a positive finite number",
        );
        check(
            self.embedding.dimension >= 1,
            "embedding.dimension",
            "must be >= 1",
        );
        check(
            (-1.0..=1.0).contains(&self.retrieval.tau),
            "retrieval.tau",
            "must lie in [-1, 1]",
        );
        check(
            self.generator.max_prompt_chars >= 1,
            "generator.max_prompt_chars",
            "must be >= 1",
        );
        check(
            self.generator.params.temperature.is_finite()
                && self.generator.params.temperature >= 0.0,
            "generator.params.temperature",
            "must be a non-negative finite number",
        );
        check(
            self.eval.max_in_flight >= 1,
            "eval.max_in_flight",
            "must be >= 1",
        );
        check(
            !self.eval.split.is_empty(),
            "eval.split",
            "must not be empty",
        );
        for (name, remote) in [
            ("embedding.remote", &self.embedding.remote),
            ("seq.remote", &self.seq.remote),
            ("generator.remote", &self.generator.remote),
        ] {
            if let Some(r) = remote {
                check(
                    r.max_in_flight >= 1,
                    &format!("{name}.max_in_flight"),
                    "must be >= 1",
                );
                check(
                    r.endpoint.starts_with("http://") || r.endpoint.starts_with("https://"),
                    &format!("{name}.endpoint"),
                    "must be an http(s) URL",
                );
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to toml")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes to json")
    }

    /// Corpus file of a split under the data directory.
    pub fn split_path(&self, split: &str) -> PathBuf {
        self.paths.data_dir.join(format!("{split}.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let Err(ConfigError::Invalid(errors)) =
            RunConfig::from_toml("[gat]\nlayers = 2\nlayer = 3\n")
        else {
            panic!("expected a field error");
        };
        assert_eq!(errors[0].field, "gat.layer");
        assert!(errors[0].message.contains("unknown field"));
    }

    #[test]
    fn semantic_errors_are_all_listed() {
        let text = "[training]\nbatch_size = 0\n[retrieval]\ntau = 2.0\n";
        let Err(ConfigError::Invalid(errors)) = RunConfig::from_toml(text) else {
            panic!("expected field errors");
        };
        let fields: Vec<_> = errors.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, ["training.batch_size", "retrieval.tau"]);
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 7\n[paths]\nout_dir = \"from-file\"\n[training]\nepochs = 3\n",
        )
        .unwrap();
        let file_only = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((file_only.seed, file_only.training.epochs), (7, 3));
        assert_eq!(file_only.paths.out_dir, PathBuf::from("from-file"));
        let flags = Overrides {
            seed: Some(9),
            out_dir: Some("from-flag".into()),
            strict: true,
            ..Overrides::default()
        };
        let both = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(both.seed, 9);
        assert_eq!(both.paths.out_dir, PathBuf::from("from-flag"));
        assert_eq!(both.training.epochs, 3);
        assert_eq!(both.seq.label_mode, LabelMode::Strict);
    }

    #[test]
    fn snapshot_round_trips() {
        let mut config = RunConfig::default();
        config.gat.context_window = WindowSize::Bounded(2);
        config.generator.script = Some("s.json".into());
        config.router.keywords = Some(BTreeMap::from([("inn".into(), "hotel".into())]));
        assert_eq!(RunConfig::from_toml(&config.to_toml()).unwrap(), config);
    }
}
