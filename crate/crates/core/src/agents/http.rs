//! OpenAI-compatible chat-completions and embeddings client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{whitespace_tokens, AgentBackend, BackendError, Embedder, Generation, GenerationRequest};
use crate::observation::ReasoningEmbedding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20)).min(self.max_delay_ms);
        Duration::from_millis(ms)
    }

    /// Runs `call` until it succeeds, fails with a non-retryable error, or retries run out.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    tracing::warn!(attempt, error = %e, "retrying backend call");
                    std::thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpSpec {
    /// Base URL, e.g. `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_timeout() -> u64 {
    120
}

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

fn read_token(auth_env: &Option<String>) -> Result<Option<String>, BackendError> {
    match auth_env {
        None => Ok(None),
        Some(var) => std::env::var(var).map(Some).map_err(|_| BackendError::MissingAuth(var.clone())),
    }
}

fn join(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    token: Option<&str>,
    body: &serde_json::Value,
) -> Result<serde_json::Value, BackendError> {
    let mut req = client.post(url).json(body);
    if let Some(t) = token {
        req = req.bearer_auth(t);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            BackendError::Timeout
        } else {
            BackendError::Transport(e.to_string())
        }
    })?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
    if status == 429 {
        return Err(BackendError::RateLimited);
    }
    if status >= 400 {
        return Err(BackendError::Status { code: status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    completion_tokens: Option<u64>,
    #[serde(default)]
    prompt_tokens: Option<u64>,
}

/// Agent served behind an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpAgent {
    model: String,
    spec: HttpSpec,
    token: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpAgent {
    pub fn new(model: String, spec: HttpSpec) -> Result<Self, BackendError> {
        let token = read_token(&spec.auth_env)?;
        let client = client(Duration::from_secs(spec.timeout_secs))?;
        Ok(Self { model, spec, token, client })
    }

    pub fn chat(&self, system: &str, user: &str) -> Result<Generation, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
            "temperature": self.spec.temperature,
            "max_tokens": self.spec.max_tokens,
        });
        let url = join(&self.spec.endpoint, "chat/completions");
        self.spec.retry.run(|| {
            let value = post_json(&self.client, &url, self.token.as_deref(), &body)?;
            let resp: ChatResponse =
                serde_json::from_value(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
            let text = resp
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
                .ok_or_else(|| BackendError::Malformed("no assistant message".into()))?;
            let completion = resp.usage.as_ref().and_then(|u| u.completion_tokens);
            let prompt = resp.usage.as_ref().and_then(|u| u.prompt_tokens);
            Ok(Generation {
                completion_tokens: completion.unwrap_or_else(|| whitespace_tokens(&text)),
                prompt_tokens: prompt.unwrap_or_else(|| whitespace_tokens(system) + whitespace_tokens(user)),
                usage_estimated: completion.is_none(),
                embedding: None,
                text,
            })
        })
    }
}

impl AgentBackend for HttpAgent {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, BackendError> {
        self.chat(req.system, req.user)
    }

    fn is_remote(&self) -> bool {
        true
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    embedding: Vec<f64>,
}

/// Embedding backend behind an OpenAI-compatible `/embeddings` endpoint.
pub struct HttpEmbedder {
    endpoint: String,
    model: String,
    token: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpEmbedder {
    pub fn new(endpoint: String, model: String, auth_env: Option<String>, retry: RetryPolicy) -> Result<Self, BackendError> {
        let token = read_token(&auth_env)?;
        Ok(Self { endpoint, model, token, retry, client: client(Duration::from_secs(60))? })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str, _attached: Option<&[f64]>) -> Result<ReasoningEmbedding, BackendError> {
        let body = json!({ "model": self.model, "input": text });
        let url = join(&self.endpoint, "embeddings");
        self.retry.run(|| {
            let value = post_json(&self.client, &url, self.token.as_deref(), &body)?;
            let resp: EmbeddingResponse =
                serde_json::from_value(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
            resp.data
                .into_iter()
                .next()
                .map(|d| ReasoningEmbedding::new(d.embedding))
                .ok_or_else(|| BackendError::Malformed("empty embedding list".into()))
        })
    }
}
