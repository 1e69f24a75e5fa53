use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::http::{HttpError, JsonClient, RemoteSettings};
use crate::text::content_hash;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("no scripted completion for prompt hash {0}")]
    Unscripted(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
    #[error("script {path}: {message}")]
    Script { path: String, message: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: 512,
            temperature: 0.0,
        }
    }
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, LlmError>;
}

impl<C: LlmClient + ?Sized> LlmClient for &C {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, LlmError> {
        (**self).complete(prompt, params)
    }
}

/// One replay entry: the sha256 of a prompt and either its completion or a failure message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptEntry {
    pub fn completion(prompt: &str, completion: impl Into<String>) -> Self {
        Self {
            prompt_hash: content_hash(prompt),
            completion: Some(completion.into()),
            error: None,
        }
    }

    pub fn failure(prompt: &str, error: impl Into<String>) -> Self {
        Self {
            prompt_hash: content_hash(prompt),
            completion: None,
            error: Some(error.into()),
        }
    }
}

/// Replays completions keyed by prompt hash.
///
/// Entries sharing a hash are served in order; the last one repeats once the
/// others are used up.
#[derive(Debug, Default)]
pub struct ScriptedLlmClient {
    entries: HashMap<String, Vec<ScriptEntry>>,
    cursors: Mutex<HashMap<String, usize>>,
    fallback: Option<String>,
}

impl ScriptedLlmClient {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        let mut map: HashMap<String, Vec<ScriptEntry>> = HashMap::new();
        for e in entries {
            map.entry(e.prompt_hash.clone()).or_default().push(e);
        }
        Self {
            entries: map,
            cursors: Mutex::new(HashMap::new()),
            fallback: None,
        }
    }

    /// Completion returned for prompts absent from the script.
    pub fn with_fallback(mut self, completion: impl Into<String>) -> Self {
        self.fallback = Some(completion.into());
        self
    }

    /// Reads a JSON array of [`ScriptEntry`].
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let err = |message: String| LlmError::Script {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let entries: Vec<ScriptEntry> =
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if let Some(e) = entries
            .iter()
            .find(|e| e.completion.is_some() == e.error.is_some())
        {
            return Err(err(format!(
                "entry {} needs exactly one of completion or error",
                e.prompt_hash
            )));
        }
        Ok(Self::new(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl LlmClient for ScriptedLlmClient {
    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, LlmError> {
        let hash = content_hash(prompt);
        let Some(list) = self.entries.get(&hash) else {
            return self.fallback.clone().ok_or(LlmError::Unscripted(hash));
        };
        let mut cursors = self.cursors.lock().unwrap_or_else(|e| e.into_inner());
        let cursor = cursors.entry(hash).or_insert(0);
        let entry = &list[(*cursor).min(list.len() - 1)];
        *cursor += 1;
        match (&entry.completion, &entry.error) {
            (Some(c), _) => Ok(c.clone()),
            (None, Some(e)) => Err(LlmError::Scripted(e.clone())),
            (None, None) => Err(LlmError::Scripted("empty script entry".into())),
        }
    }
}

/// Wraps a client and records every exchange as a replayable script.
pub struct RecordingLlmClient<C> {
    inner: C,
    log: Mutex<Vec<ScriptEntry>>,
}

impl<C: LlmClient> RecordingLlmClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn save(&self, path: &Path) -> Result<(), LlmError> {
        let text = serde_json::to_string_pretty(&self.entries())
            .map_err(|e| LlmError::Other(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| LlmError::Script {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

impl<C: LlmClient> LlmClient for RecordingLlmClient<C> {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, LlmError> {
        let result = self.inner.complete(prompt, params);
        let entry = match &result {
            Ok(c) => ScriptEntry::completion(prompt, c.clone()),
            Err(e) => ScriptEntry::failure(prompt, e.to_string()),
        };
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(entry);
        result
    }
}

/// Adapts a closure into a client.
pub struct FnLlmClient<F>(pub F);

impl<F> LlmClient for FnLlmClient<F>
where
    F: Fn(&str) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, LlmError> {
        (self.0)(prompt)
    }
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
}

#[derive(Deserialize)]
struct CompleteResponse {
    completion: String,
}

/// Client for `POST /complete {"prompt", "max_tokens", "temperature"} -> {"completion"}`.
#[derive(Debug)]
pub struct RemoteLlmClient {
    client: JsonClient,
}

impl RemoteLlmClient {
    pub fn new(settings: RemoteSettings) -> Self {
        Self {
            client: JsonClient::new(settings),
        }
    }
}

impl LlmClient for RemoteLlmClient {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, LlmError> {
        let response: CompleteResponse = self.client.post(
            "/complete",
            &CompleteRequest {
                prompt,
                max_tokens: params.max_tokens,
                temperature: params.temperature,
            },
        )?;
        Ok(response.completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::serve;

    #[test]
    fn scripted_replay_in_order_then_sticky() {
        let client = ScriptedLlmClient::new([
            ScriptEntry::completion("p", "one"),
            ScriptEntry::completion("p", "two"),
            ScriptEntry::failure("q", "down"),
        ]);
        let params = GenerationParams::default();
        assert_eq!(client.complete("p", &params).unwrap(), "one");
        assert_eq!(client.complete("p", &params).unwrap(), "two");
        assert_eq!(client.complete("p", &params).unwrap(), "two");
        assert!(matches!(
            client.complete("q", &params),
            Err(LlmError::Scripted(_))
        ));
        assert!(matches!(
            client.complete("r", &params),
            Err(LlmError::Unscripted(_))
        ));
        let client = client.with_fallback("{}");
        assert_eq!(client.complete("r", &params).unwrap(), "{}");
    }

    #[test]
    fn recording_round_trips_through_a_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("script.json");
        let recorder = RecordingLlmClient::new(FnLlmClient(|p: &str| Ok(format!("echo {p}"))));
        let params = GenerationParams::default();
        recorder.complete("a", &params).unwrap();
        recorder.complete("b", &params).unwrap();
        recorder.save(&path).unwrap();
        let replay = ScriptedLlmClient::load(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete("b", &params).unwrap(), "echo b");
    }

    #[test]
    fn malformed_script_entry_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"[{"prompt_hash":"x"}]"#).unwrap();
        assert!(matches!(
            ScriptedLlmClient::load(&path),
            Err(LlmError::Script { .. })
        ));
    }

    #[test]
    fn remote_client_contract() {
        let served = serve(vec![(200, r#"{"completion":"{\"a\":\"b\"}"}"#.into())]);
        let client = RemoteLlmClient::new(RemoteSettings::new(&served.url));
        let out = client
            .complete("hello", &GenerationParams::default())
            .unwrap();
        assert_eq!(out, r#"{"a":"b"}"#);
        let requests = served.requests.lock().unwrap();
        assert_eq!(requests[0].0, "/complete");
        let body: serde_json::Value = serde_json::from_str(&requests[0].1).unwrap();
        assert_eq!(
            body,
            serde_json::json!({"prompt": "hello", "max_tokens": 512, "temperature": 0.0})
        );
    }
}
