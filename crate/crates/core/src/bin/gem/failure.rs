use std::path::Path;

use gem_dst::config::{ConfigError, FieldError};
use serde::Serialize;

/// Error reported on stderr as a single JSON object.
#[derive(Debug, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
            path: None,
            fields: Vec::new(),
        }
    }

    pub fn at(kind: &'static str, path: &Path, message: impl ToString) -> Self {
        Self {
            path: Some(path.display().to_string()),
            ..Self::new(kind, message)
        }
    }

    pub fn missing(path: &Path, what: &str) -> Self {
        Self::at(
            "missing_artifact",
            path,
            format!("{what} not found at {}", path.display()),
        )
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            "config" => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self, command: &str) -> String {
        #[derive(Serialize)]
        struct Report<'a> {
            command: &'a str,
            error: &'a Failure,
        }
        serde_json::to_string(&Report {
            command,
            error: self,
        })
        .expect("error report serializes")
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Invalid(fields) => Self {
                fields,
                ..Self::new("config", "configuration validation failed")
            },
            ConfigError::Io { ref path, .. } => Self {
                path: Some(path.clone()),
                ..Self::new("config", &e)
            },
        }
    }
}

macro_rules! failure_from {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Self::new($kind, e)
            }
        })*
    };
}

failure_from! {
    gem_dst::dialogue::DialogueError => "corpus",
    gem_dst::gat::GatError => "gat",
    gem_dst::router::RouterError => "router",
    gem_dst::retrieval::RetrievalError => "retrieval",
    gem_dst::seq::SeqError => "seq",
    gem_dst::valuegen::ValueGenError => "generator",
    gem_dst::valuegen::LlmError => "generator",
    gem_dst::eval::EvalError => "eval",
}
