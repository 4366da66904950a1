use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate swarm: {0} agent(s), at least 2 required")]
    DegenerateSwarm(usize),

    #[error("degenerate embedding: zero-norm vector")]
    DegenerateEmbedding,

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("invalid weight {value} at ({row}, {col}); weights must lie in (0, 1)")]
    InvalidWeight { row: usize, col: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vote failure: no parsed answers")]
    VoteFailure,

    #[error("backward called before a recorded forward pass")]
    BackwardBeforeForward,

    #[error("empty rollout buffer")]
    EmptyBuffer,

    #[error("non-finite loss during update: {0}")]
    NonFiniteLoss(String),

    #[error("unknown task id: {0}")]
    UnknownTask(String),

    #[error("dataset is empty: {0}")]
    EmptyDataset(String),

    #[error("episode {} aborted: {source}", partial.task_id)]
    EpisodeAborted { partial: Box<crate::debate::EpisodeTranscript>, source: Box<Error> },

    #[error("backend error: {0}")]
    Backend(#[from] crate::agents::BackendError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}
