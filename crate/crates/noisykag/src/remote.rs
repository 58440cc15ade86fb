//! HTTP-backed encoder and generator.
//!
//! The service exposes three JSON endpoints:
//!
//! | path      | request                                                  | response                          |
//! |-----------|----------------------------------------------------------|-----------------------------------|
//! | `/embed`  | `{"texts": [..]}`                                        | `{"vectors": [[..]]}`              |
//! | `/score`  | `{"history": [..], "knowledge": "..", "response_tokens": [..]}` | `{"token_logprobs": [..]}`  |
//! | `/greedy` | `{"history": [..], "knowledge": "..", "max_len": n}`     | `{"tokens": [..], "token_logprobs": [..]}` |
//!
//! `history` is a list of `{"speaker", "text"}` objects; a topic, when
//! present, is sent as `"topic"`.

use std::time::Duration;

use noisykag_core::{BackendError, DialogueHistory, Encoder, Generator, Response, Turn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const URL_ENV: &str = "NOISYKAG_BACKEND_URL";
const EXCERPT_CHARS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// Base URL; falls back to `NOISYKAG_BACKEND_URL`.
    pub url: Option<String>,
    pub timeout_secs: f64,
    /// Extra attempts after a network error, 429 or 5xx.
    pub retries: u32,
    pub backoff_ms: u64,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub dim: usize,
    pub max_len: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            url: None,
            timeout_secs: 30.0,
            retries: 2,
            backoff_ms: 200,
            token_env: None,
            dim: 768,
            max_len: 32,
        }
    }
}

fn excerpt(body: &str) -> String {
    let mut out: String = body.chars().take(EXCERPT_CHARS).collect();
    if body.chars().count() > EXCERPT_CHARS {
        out.push('…');
    }
    out
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct WireHistory<'a> {
    history: &'a [Turn],
    #[serde(skip_serializing_if = "Option::is_none")]
    topic: Option<&'a str>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    #[serde(flatten)]
    history: WireHistory<'a>,
    knowledge: &'a str,
    response_tokens: &'a [String],
}

#[derive(Deserialize)]
struct ScoreReply {
    token_logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct GreedyRequest<'a> {
    #[serde(flatten)]
    history: WireHistory<'a>,
    knowledge: &'a str,
    max_len: usize,
}

#[derive(Deserialize)]
struct GreedyReply {
    tokens: Vec<String>,
    token_logprobs: Vec<f64>,
}

fn wire(history: &DialogueHistory) -> WireHistory<'_> {
    WireHistory {
        history: &history.turns,
        topic: history.topic.as_deref(),
    }
}

#[derive(Debug, Clone)]
pub struct RemoteClient {
    base: String,
    http: reqwest::blocking::Client,
    token: Option<String>,
    retries: u32,
    backoff: Duration,
    dim: usize,
    max_len: usize,
}

impl RemoteClient {
    pub fn new(config: &RemoteConfig) -> Result<Self, BackendError> {
        let base = config
            .url
            .clone()
            .or_else(|| std::env::var(URL_ENV).ok())
            .filter(|u| !u.trim().is_empty())
            .ok_or_else(|| {
                BackendError::Other(format!("no backend URL configured (set remote.url or {URL_ENV})"))
            })?;
        if !(config.timeout_secs.is_finite() && config.timeout_secs > 0.0) {
            return Err(BackendError::Other("timeout_secs must be > 0".into()));
        }
        let token = config
            .token_env
            .as_ref()
            .and_then(|name| std::env::var(name).ok());
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::Other(e.to_string()))?;
        Ok(RemoteClient {
            base: base.trim_end_matches('/').to_string(),
            http,
            token,
            retries: config.retries,
            backoff: Duration::from_millis(config.backoff_ms),
            dim: config.dim,
            max_len: config.max_len,
        })
    }

    fn attempt(&self, url: &str, body: &[u8]) -> Result<String, (bool, BackendError)> {
        let mut req = self
            .http
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req
            .send()
            .map_err(|e| (true, BackendError::Network(format!("{url}: {e}"))))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| (true, BackendError::Network(format!("{url}: reading body: {e}"))))?;
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((
                retry,
                BackendError::Status {
                    status: status.as_u16(),
                    excerpt: excerpt(&text),
                },
            ));
        }
        Ok(text)
    }

    fn post<Q: Serialize, R: DeserializeOwned>(&self, path: &str, request: &Q) -> Result<(R, String), BackendError> {
        let url = format!("{}{path}", self.base);
        let body = serde_json::to_vec(request).map_err(|e| BackendError::Other(e.to_string()))?;
        let mut tries = 0;
        let text = loop {
            match self.attempt(&url, &body) {
                Ok(t) => break t,
                Err((true, _)) if tries < self.retries => {
                    tries += 1;
                    std::thread::sleep(self.backoff * tries);
                }
                Err((_, e)) => return Err(e),
            }
        };
        let parsed = serde_json::from_str(&text).map_err(|e| BackendError::Schema {
            reason: format!("{path}: {e}"),
            excerpt: excerpt(&text),
        })?;
        Ok((parsed, text))
    }
}

fn check_logprobs(path: &str, lps: &[f64], raw: &str) -> Result<(), BackendError> {
    if let Some(bad) = lps.iter().find(|l| !(l.is_finite() && **l <= 0.0)) {
        return Err(BackendError::Schema {
            reason: format!("{path}: log-probability {bad} is not a finite value <= 0"),
            excerpt: excerpt(raw),
        });
    }
    Ok(())
}

impl Encoder for RemoteClient {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendError> {
        let (reply, raw): (EmbedReply, _) = self.post("/embed", &EmbedRequest { texts })?;
        if reply.vectors.len() != texts.len() {
            return Err(BackendError::Dimension {
                expected: texts.len(),
                got: reply.vectors.len(),
                excerpt: excerpt(&raw),
            });
        }
        if let Some(v) = reply.vectors.iter().find(|v| v.len() != self.dim) {
            return Err(BackendError::Dimension {
                expected: self.dim,
                got: v.len(),
                excerpt: excerpt(&raw),
            });
        }
        if reply.vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(BackendError::Schema {
                reason: "/embed: non-finite vector component".into(),
                excerpt: excerpt(&raw),
            });
        }
        Ok(reply.vectors)
    }
}

impl Generator for RemoteClient {
    fn max_len(&self) -> usize {
        self.max_len
    }

    fn score(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        response: &[String],
    ) -> Result<Vec<f64>, BackendError> {
        let req = ScoreRequest {
            history: wire(history),
            knowledge,
            response_tokens: response,
        };
        let (reply, raw): (ScoreReply, _) = self.post("/score", &req)?;
        if reply.token_logprobs.len() != response.len() {
            return Err(BackendError::Dimension {
                expected: response.len(),
                got: reply.token_logprobs.len(),
                excerpt: excerpt(&raw),
            });
        }
        check_logprobs("/score", &reply.token_logprobs, &raw)?;
        Ok(reply.token_logprobs)
    }

    fn greedy(
        &self,
        history: &DialogueHistory,
        knowledge: &str,
        max_len: usize,
    ) -> Result<Response, BackendError> {
        let req = GreedyRequest {
            history: wire(history),
            knowledge,
            max_len,
        };
        let (reply, raw): (GreedyReply, _) = self.post("/greedy", &req)?;
        if reply.tokens.is_empty() {
            return Err(BackendError::Schema {
                reason: "/greedy: empty token list".into(),
                excerpt: excerpt(&raw),
            });
        }
        if reply.tokens.len() != reply.token_logprobs.len() {
            return Err(BackendError::Dimension {
                expected: reply.tokens.len(),
                got: reply.token_logprobs.len(),
                excerpt: excerpt(&raw),
            });
        }
        check_logprobs("/greedy", &reply.token_logprobs, &raw)?;
        Response::with_logprobs(reply.tokens, reply.token_logprobs)
            .map_err(|e| BackendError::Schema {
                reason: format!("/greedy: {e}"),
                excerpt: excerpt(&raw),
            })
    }
}
