//! Content-agnostic observation: a blend of reasoning-embedding cosine
//! similarity and answer agreement, flattened row-major for the controller.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct ReasoningEmbedding {
    v: Vec<f64>,
    norm: f64,
}

impl From<Vec<f64>> for ReasoningEmbedding {
    fn from(v: Vec<f64>) -> Self {
        Self::new(v)
    }
}

impl From<ReasoningEmbedding> for Vec<f64> {
    fn from(e: ReasoningEmbedding) -> Self {
        e.v
    }
}

impl ReasoningEmbedding {
    pub fn new(v: Vec<f64>) -> Self {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Self { v, norm }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityConfig {
    /// Weight of the cosine channel; `1 - lambda` goes to answer agreement.
    pub lambda: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { lambda: 0.5 }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

/// Symmetric n×n matrix with unit diagonal and entries in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    n: usize,
    s: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.s
    }

    /// Mean over the n(n-1)/2 unordered pairs.
    pub fn mean_pairwise(&self) -> f64 {
        let n = self.n;
        if n < 2 {
            return 1.0;
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.get(i, j);
            }
        }
        sum / (n * (n - 1) / 2) as f64
    }
}

/// Flat row-major view of a [`SimilarityMatrix`]; the only input the controller accepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Observation(pub Vec<f64>);

impl Observation {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Cosine similarity with negative values clamped to zero.
pub fn cosine_similarity(a: &ReasoningEmbedding, b: &ReasoningEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Shape { expected: a.dim(), actual: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let dot: f64 = a.v.iter().zip(&b.v).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(0.0, 1.0))
}

pub fn pairwise_similarity(
    embeddings: &[ReasoningEmbedding],
    answers: &[Option<String>],
    cfg: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    let refs: Vec<Option<&ReasoningEmbedding>> = embeddings.iter().map(Some).collect();
    similarity_with_missing(&refs, answers, cfg)
}

/// Like [`pairwise_similarity`], but agents without any embedding (a backend
/// failure before their first good response) get a cosine of zero to everyone.
/// Unparsed answers (`None`) never agree with anything.
pub fn similarity_with_missing(
    embeddings: &[Option<&ReasoningEmbedding>],
    answers: &[Option<String>],
    cfg: &SimilarityConfig,
) -> Result<SimilarityMatrix> {
    let n = embeddings.len();
    if answers.len() != n {
        return Err(Error::Shape { expected: n, actual: answers.len() });
    }
    if n < 2 {
        return Err(Error::DegenerateSwarm(n));
    }
    let lambda = cfg.lambda;
    let mut s = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let cos = match (embeddings[i], embeddings[j]) {
                (Some(a), Some(b)) => cosine_similarity(a, b)?,
                _ => 0.0,
            };
            let agree = match (&answers[i], &answers[j]) {
                (Some(a), Some(b)) if a == b => 1.0,
                _ => 0.0,
            };
            let v = lambda * cos + (1.0 - lambda) * agree;
            s[i * n + j] = v;
            s[j * n + i] = v;
        }
    }
    Ok(SimilarityMatrix { n, s })
}

pub fn build_observation(s: &SimilarityMatrix) -> Observation {
    Observation(s.s.clone())
}
