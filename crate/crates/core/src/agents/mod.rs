//! Agent and embedding backends.
//!
//! A backend turns a [`GenerationRequest`] into a [`Generation`]. The request
//! carries both the rendered prompt (for language-model backends) and the
//! structured debate context (for the simulator), so either kind can sit
//! behind the same debate loop.

mod http;
mod sim;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use http::{HttpAgent, HttpEmbedder, HttpSpec, RetryPolicy};
pub use sim::{sim_debate_step, sim_initial, SimAgent, SimAgentModel};

use crate::debate::DebateTask;
use crate::observation::ReasoningEmbedding;
use crate::topology::Tier;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("rate limited (HTTP 429)")]
    RateLimited,
    #[error("HTTP status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingAuth(String),
    #[error("no embedding attached to response")]
    NoEmbedding,
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::RateLimited | BackendError::Timeout | BackendError::Transport(_) => true,
            BackendError::Malformed(_) => true,
            BackendError::Status { code, .. } => *code >= 500,
            BackendError::MissingAuth(_) | BackendError::NoEmbedding => false,
        }
    }
}

/// A neighbor response visible to the prompted agent this round.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibleNeighbor {
    pub agent: usize,
    pub tier: Tier,
    pub answer: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GenerationRequest<'a> {
    pub agent: usize,
    pub round: usize,
    pub system: &'a str,
    pub user: &'a str,
    pub task: &'a DebateTask,
    pub previous_answer: Option<&'a str>,
    pub visible: &'a [VisibleNeighbor],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub text: String,
    pub completion_tokens: u64,
    pub prompt_tokens: u64,
    /// Token count estimated from whitespace because the backend reported no usage.
    pub usage_estimated: bool,
    /// Synthetic embedding produced together with the text (simulator only).
    pub embedding: Option<Vec<f64>>,
}

pub trait AgentBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, BackendError>;

    /// Remote backends are fanned out across threads within a round.
    fn is_remote(&self) -> bool {
        false
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str, attached: Option<&[f64]>) -> Result<ReasoningEmbedding, BackendError>;
}

/// Returns the embedding the simulator attached at generation time.
#[derive(Debug, Clone, Copy, Default)]
pub struct AttachedEmbedder;

impl Embedder for AttachedEmbedder {
    fn embed(&self, _text: &str, attached: Option<&[f64]>) -> Result<ReasoningEmbedding, BackendError> {
        attached.map(|v| ReasoningEmbedding::new(v.to_vec())).ok_or(BackendError::NoEmbedding)
    }
}

/// Content-addressed cache in front of another embedder.
pub struct CachedEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<[u8; 32], Vec<f64>>>,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, cache: RwLock::new(HashMap::new()) }
    }

    pub fn clear(&self) {
        self.cache.write().expect("embedding cache poisoned").clear();
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("embedding cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn embed(&self, text: &str, attached: Option<&[f64]>) -> Result<ReasoningEmbedding, BackendError> {
        if attached.is_some() {
            return self.inner.embed(text, attached);
        }
        let key: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        if let Some(v) = self.cache.read().expect("embedding cache poisoned").get(&key) {
            return Ok(ReasoningEmbedding::new(v.clone()));
        }
        let e = self.inner.embed(text, None)?;
        self.cache.write().expect("embedding cache poisoned").insert(key, e.as_slice().to_vec());
        Ok(e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Simulated(SimAgentModel),
    Http(HttpSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub index: usize,
    #[serde(default)]
    pub model: String,
    #[serde(default)]
    pub seed: u64,
    pub backend: BackendSpec,
}

impl AgentSpec {
    pub fn build(&self) -> Result<Arc<dyn AgentBackend>, BackendError> {
        Ok(match &self.backend {
            BackendSpec::Simulated(model) => Arc::new(SimAgent { model: model.clone(), seed: self.seed }),
            BackendSpec::Http(spec) => Arc::new(HttpAgent::new(self.model.clone(), spec.clone())?),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    #[default]
    Attached,
    Http {
        endpoint: String,
        model: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

impl EmbeddingSpec {
    pub fn build(&self) -> Result<Arc<dyn Embedder>, BackendError> {
        Ok(match self {
            EmbeddingSpec::Attached => Arc::new(AttachedEmbedder),
            EmbeddingSpec::Http { endpoint, model, auth_env, retry } => Arc::new(CachedEmbedder::new(HttpEmbedder::new(
                endpoint.clone(),
                model.clone(),
                auth_env.clone(),
                *retry,
            )?)),
        })
    }
}

/// Crude token estimate used when a backend omits usage.
pub fn whitespace_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}
