//! Blocking JSON-over-HTTP plumbing shared by the remote clients.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Environment variable holding a bearer token for remote services.
pub const CREDENTIALS_ENV: &str = "GEM_DST_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSettings {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_in_flight() -> usize {
    4
}

fn default_retries() -> u32 {
    1
}

impl RemoteSettings {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_max_in_flight(),
            retries: default_retries(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Transport {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("response from {url} did not match the expected schema: {message}")]
    Schema { url: String, message: String },
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightLimiter {
    cap: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightPermit<'a>(&'a InFlightLimiter);

impl InFlightLimiter {
    pub fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.cap {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightPermit(self)
    }

    pub fn active(&self) -> usize {
        *self.active.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// JSON POST client with timeout, bounded retries and an in-flight cap.
#[derive(Debug)]
pub struct JsonClient {
    settings: RemoteSettings,
    agent: ureq::Agent,
    limiter: InFlightLimiter,
    token: Option<String>,
}

impl JsonClient {
    pub fn new(settings: RemoteSettings) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(settings.timeout_ms)))
            .build()
            .into();
        Self {
            limiter: InFlightLimiter::new(settings.max_in_flight),
            token: std::env::var(CREDENTIALS_ENV)
                .ok()
                .filter(|t| !t.is_empty()),
            settings,
            agent,
        }
    }

    pub fn settings(&self) -> &RemoteSettings {
        &self.settings
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, HttpError> {
        let url = format!("{}{}", self.settings.endpoint.trim_end_matches('/'), path);
        let _permit = self.limiter.acquire();
        let attempts = self.settings.retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            let mut request = self.agent.post(&url);
            if let Some(token) = &self.token {
                request = request.header("Authorization", &format!("Bearer {token}"));
            }
            match request.send_json(body) {
                Ok(mut response) => {
                    return response.body_mut().read_json::<Resp>().map_err(|e| {
                        HttpError::Schema {
                            url: url.clone(),
                            message: e.to_string(),
                        }
                    });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(HttpError::Transport {
            url,
            attempts,
            message: last,
        })
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[derive(Serialize)]
    struct Ping {
        input: String,
    }

    #[derive(Debug, Deserialize)]
    struct Pong {
        output: String,
    }

    #[test]
    fn retries_once_after_failure() {
        let served = testing::serve(vec![(500, "{}".into()), (200, r#"{"output":"ok"}"#.into())]);
        let client = JsonClient::new(RemoteSettings::new(&served.url));
        let pong: Pong = client
            .post("/predict", &Ping { input: "x".into() })
            .unwrap();
        assert_eq!(pong.output, "ok");
        assert_eq!(served.requests.lock().unwrap().len(), 2);
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let served = testing::serve(vec![(500, "{}".into()), (503, "{}".into())]);
        let client = JsonClient::new(RemoteSettings::new(&served.url));
        let err = client
            .post::<_, Pong>("/predict", &Ping { input: "x".into() })
            .unwrap_err();
        assert!(
            matches!(err, HttpError::Transport { attempts: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = Arc::new(InFlightLimiter::new(2));
        let peak = Arc::new(Mutex::new(0usize));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let limiter = Arc::clone(&limiter);
                let peak = Arc::clone(&peak);
                std::thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = limiter.active();
                    let mut m = peak.lock().unwrap();
                    *m = (*m).max(now);
                    drop(m);
                    std::thread::sleep(Duration::from_millis(5));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limiter.active(), 0);
    }
}
