//! Seeded stand-in for language-model agents.
//!
//! An agent answers correctly with probability `base_accuracy`, otherwise
//! picks a wrong label uniformly. When debating it adopts the modal visible
//! answer (weighted by tier influence) with probability
//! `susceptibility * modal_mass / total_mass` and otherwise redraws. Its
//! reasoning embedding is a noisy one-hot of the chosen label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AgentBackend, BackendError, Generation, GenerationRequest, VisibleNeighbor};
use crate::debate::DebateTask;
use crate::seed::mix_seed;
use crate::topology::Tier;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimAgentModel {
    pub base_accuracy: f64,
    pub susceptibility: f64,
    pub embedding_dim: usize,
    pub noise_scale: f64,
    pub tokens_per_generation: u64,
    /// Wrong candidates generated around the truth for numeric tasks.
    pub numeric_distractors: usize,
    /// Influence of a Critical, Reference and Background neighbor.
    pub tier_influence: [f64; 3],
}

impl Default for SimAgentModel {
    fn default() -> Self {
        Self {
            base_accuracy: 0.6,
            susceptibility: 0.8,
            embedding_dim: 8,
            noise_scale: 0.3,
            tokens_per_generation: 200,
            numeric_distractors: 3,
            tier_influence: [1.0, 0.6, 0.3],
        }
    }
}

impl SimAgentModel {
    pub fn with_accuracy(base_accuracy: f64, susceptibility: f64) -> Self {
        Self { base_accuracy, susceptibility, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.base_accuracy) || !(0.0..=1.0).contains(&self.susceptibility) {
            return Err("simulated agent probabilities must lie in [0, 1]".into());
        }
        if self.embedding_dim < 2 {
            return Err("simulated embedding dimension must be at least 2".into());
        }
        if self.noise_scale < 0.0 {
            return Err("noise scale must be non-negative".into());
        }
        Ok(())
    }

    fn influence(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Critical => self.tier_influence[0],
            Tier::Reference => self.tier_influence[1],
            Tier::Background => self.tier_influence[2],
            Tier::Invisible => 0.0,
        }
    }

    fn embedding<R: Rng + ?Sized>(&self, alphabet: &[String], answer: &str, rng: &mut R) -> Vec<f64> {
        let dim = self.embedding_dim.max(alphabet.len());
        let slot = alphabet.iter().position(|a| a == answer).unwrap_or(0);
        let mut v: Vec<f64> = (0..dim).map(|_| self.noise_scale * rng.sample::<f64, _>(StandardNormal)).collect();
        v[slot] += 1.0;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        } else {
            v[slot] = 1.0;
        }
        v
    }
}

fn draw_answer<R: Rng + ?Sized>(model: &SimAgentModel, alphabet: &[String], truth: &str, rng: &mut R) -> String {
    let wrong: Vec<&String> = alphabet.iter().filter(|a| *a != truth).collect();
    if wrong.is_empty() || rng.random::<f64>() < model.base_accuracy {
        truth.to_string()
    } else {
        wrong[rng.random_range(0..wrong.len())].clone()
    }
}

/// Independent first answer. Returns `(answer, embedding)`.
pub fn sim_initial<R: Rng + ?Sized>(model: &SimAgentModel, task: &DebateTask, rng: &mut R) -> (String, Vec<f64>) {
    let alphabet = task.answer_space(model.numeric_distractors);
    let answer = draw_answer(model, &alphabet, &task.answer, rng);
    let emb = model.embedding(&alphabet, &answer, rng);
    (answer, emb)
}

/// Label with the largest tier-weighted support, ties to the lowest agent index.
/// Returns `(label, its mass, total mass)`.
pub fn modal_visible_answer(model: &SimAgentModel, visible: &[VisibleNeighbor]) -> Option<(String, f64, f64)> {
    let mut ordered: Vec<&VisibleNeighbor> = visible.iter().filter(|v| v.answer.is_some()).collect();
    ordered.sort_by_key(|v| v.agent);
    let mut labels: Vec<(String, f64)> = Vec::new();
    for v in &ordered {
        let label = v.answer.as_ref().expect("filtered");
        let mass = model.influence(v.tier);
        match labels.iter_mut().find(|(l, _)| l == label) {
            Some((_, m)) => *m += mass,
            None => labels.push((label.clone(), mass)),
        }
    }
    let total: f64 = labels.iter().map(|(_, m)| m).sum();
    if total <= 0.0 {
        return None;
    }
    // labels are in first-holder order, so the first maximum wins ties
    let mut best = 0;
    for (k, (_, m)) in labels.iter().enumerate() {
        if *m > labels[best].1 {
            best = k;
        }
    }
    let (label, mass) = labels.swap_remove(best);
    Some((label, mass, total))
}

pub fn sim_debate_step<R: Rng + ?Sized>(
    model: &SimAgentModel,
    task: &DebateTask,
    _own_previous: Option<&str>,
    visible: &[VisibleNeighbor],
    rng: &mut R,
) -> (String, Vec<f64>) {
    let Some((modal, mass, total)) = modal_visible_answer(model, visible) else {
        return sim_initial(model, task, rng);
    };
    let alphabet = task.answer_space(model.numeric_distractors);
    let answer = if rng.random::<f64>() < model.susceptibility * mass / total {
        modal
    } else {
        draw_answer(model, &alphabet, &task.answer, rng)
    };
    let emb = model.embedding(&alphabet, &answer, rng);
    (answer, emb)
}

/// A simulated agent bound to its own seed.
#[derive(Debug, Clone)]
pub struct SimAgent {
    pub model: SimAgentModel,
    pub seed: u64,
}

impl AgentBackend for SimAgent {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(req.seed, &[self.seed]));
        let (answer, embedding) = if req.round == 0 {
            sim_initial(&self.model, req.task, &mut rng)
        } else {
            sim_debate_step(&self.model, req.task, req.previous_answer, req.visible, &mut rng)
        };
        let text = if req.round == 0 {
            format!("Agent {} reasons about the question independently. \\boxed{{{answer}}}", req.agent)
        } else {
            format!(
                "Agent {} weighs {} visible solution(s) and updates its answer. \\boxed{{{answer}}}",
                req.agent,
                req.visible.len()
            )
        };
        Ok(Generation {
            text,
            completion_tokens: self.model.tokens_per_generation,
            prompt_tokens: super::whitespace_tokens(req.system) + super::whitespace_tokens(req.user),
            usage_estimated: false,
            embedding: Some(embedding),
        })
    }
}
