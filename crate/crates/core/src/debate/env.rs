//! The debate pipeline: independent initialization, topology-controlled
//! rounds, and a final majority vote.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::answer::{extract_answer, majority_vote};
use super::prompt::{build_prompt, visible_neighbors, PromptTemplates};
use super::DebateTask;
use crate::agents::{AgentBackend, BackendError, Embedder, Generation, GenerationRequest, VisibleNeighbor};
use crate::controller::{deterministic_weights, sample_weights, Controller};
use crate::error::{Error, Result};
use crate::observation::{build_observation, similarity_with_missing, Observation, ReasoningEmbedding, SimilarityConfig, SimilarityMatrix};
use crate::ppo::Transition;
use crate::reward::{episode_reward, round_reward, RewardBreakdown, RewardShaping, RewardWeights, RoundOutcome};
use crate::seed::mix_seed;
use crate::topology::{compute_activation, count_active_links, quantize_tiers, ActivationMask, BudgetConfig, TierMatrix, WeightMatrix};

/// Switches for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_episode_reward: bool,
    pub no_round_reward: bool,
    /// Every agent regenerates every round regardless of its weights.
    pub no_activation: bool,
    pub no_budget_loss: bool,
}

impl Ablations {
    pub fn validate(&self) -> Result<()> {
        if self.no_episode_reward && self.no_round_reward {
            return Err(Error::Config("disabling both reward levels leaves nothing to learn".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebateConfig {
    /// Total rounds including initialization.
    pub rounds: usize,
    pub similarity: SimilarityConfig,
    pub budget: BudgetConfig,
    pub reward_weights: RewardWeights,
    pub shaping: RewardShaping,
    pub ablations: Ablations,
    pub templates: PromptTemplates,
}

impl Default for DebateConfig {
    fn default() -> Self {
        Self {
            rounds: 6,
            similarity: SimilarityConfig::default(),
            budget: BudgetConfig::default(),
            reward_weights: RewardWeights::default(),
            shaping: RewardShaping::default(),
            ablations: Ablations::default(),
            templates: PromptTemplates::default(),
        }
    }
}

impl DebateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        self.similarity.validate()?;
        self.ablations.validate()
    }
}

/// The agents of one debate and the embedder for their responses.
#[derive(Clone)]
pub struct Swarm {
    pub agents: Vec<Arc<dyn AgentBackend>>,
    pub embedder: Arc<dyn Embedder>,
}

impl Swarm {
    pub fn new(agents: Vec<Arc<dyn AgentBackend>>, embedder: Arc<dyn Embedder>) -> Result<Self> {
        if agents.len() < 2 {
            return Err(Error::DegenerateSwarm(agents.len()));
        }
        Ok(Self { agents, embedder })
    }

    pub fn n(&self) -> usize {
        self.agents.len()
    }

    fn any_remote(&self, which: &[usize]) -> bool {
        which.iter().any(|&i| self.agents[i].is_remote())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub agent: usize,
    pub round: usize,
    pub text: String,
    pub answer: Option<String>,
    pub embedding: Option<ReasoningEmbedding>,
    pub tokens_generated: u64,
    pub prompt_tokens: u64,
    pub reused: bool,
    /// The backend failed after retries; the answer counts as unparsed this round.
    #[serde(default)]
    pub failed: bool,
    #[serde(default)]
    pub usage_estimated: bool,
}

impl AgentResponse {
    fn carried(prev: &AgentResponse, round: usize) -> Self {
        Self { round, tokens_generated: 0, prompt_tokens: 0, reused: true, usage_estimated: false, ..prev.clone() }
    }

    fn failure(agent: usize, round: usize) -> Self {
        Self {
            agent,
            round,
            text: String::new(),
            answer: None,
            embedding: None,
            tokens_generated: 0,
            prompt_tokens: 0,
            reused: false,
            failed: true,
            usage_estimated: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// `None` for initialization.
    pub weights: Option<WeightMatrix>,
    pub tiers: Option<TierMatrix>,
    pub activation: ActivationMask,
    pub responses: Vec<AgentResponse>,
    pub similarity: SimilarityMatrix,
    pub majority: Option<String>,
    pub tokens: u64,
    pub prompt_tokens: u64,
    pub active_links: usize,
    pub reward: Option<RewardBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTranscript {
    pub task_id: String,
    pub ground_truth: String,
    pub policy: String,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub final_answer: Option<String>,
    pub correct: bool,
    pub total_tokens: u64,
    pub total_prompt_tokens: u64,
    pub episode_reward: Option<RewardBreakdown>,
    pub reward_shaping: RewardShaping,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EpisodeTranscript {
    /// Which agents generated fresh text in each round.
    pub fn regeneration_pattern(&self) -> Vec<Vec<usize>> {
        self.rounds
            .iter()
            .map(|r| r.responses.iter().filter(|a| !a.reused && !a.failed).map(|a| a.agent).collect())
            .collect()
    }
}

/// Policy-side bookkeeping for one controller decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    pub z: Vec<f64>,
    pub noise: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub weights: WeightMatrix,
    /// Present when the decision came from a learnable controller.
    pub action: Option<ActionRecord>,
}

/// Chooses the weight matrix for each controlled round from the observation alone.
pub trait TopologyPolicy {
    fn name(&self) -> String;
    fn decide(&mut self, round: usize, obs: &Observation) -> Result<PolicyDecision>;
}

/// The learned controller, sampling (training) or taking the mean (inference).
pub struct ControllerPolicy<'a> {
    controller: &'a Controller,
    rng: Option<ChaCha8Rng>,
}

impl<'a> ControllerPolicy<'a> {
    pub fn stochastic(controller: &'a Controller, seed: u64) -> Self {
        Self { controller, rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn deterministic(controller: &'a Controller) -> Self {
        Self { controller, rng: None }
    }
}

impl TopologyPolicy for ControllerPolicy<'_> {
    fn name(&self) -> String {
        if self.rng.is_some() { "rumad-stochastic" } else { "rumad" }.to_string()
    }

    fn decide(&mut self, _round: usize, obs: &Observation) -> Result<PolicyDecision> {
        let gp = self.controller.actor_forward(obs)?;
        let value = self.controller.critic_forward(obs)?;
        match self.rng.as_mut() {
            Some(rng) => {
                let a = sample_weights(&gp, rng)?;
                Ok(PolicyDecision {
                    weights: a.w,
                    action: Some(ActionRecord { z: a.z, noise: a.noise, log_prob: a.log_prob, value }),
                })
            }
            None => {
                let log_prob = gp.log_prob(&gp.mu);
                Ok(PolicyDecision {
                    weights: deterministic_weights(&gp)?,
                    action: Some(ActionRecord { z: gp.mu.clone(), noise: vec![0.0; gp.mu.len()], log_prob, value }),
                })
            }
        }
    }
}

/// Fixed weights every round.
#[derive(Debug, Clone)]
pub struct StaticPolicy {
    pub name: String,
    pub weights: WeightMatrix,
}

impl TopologyPolicy for StaticPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn decide(&mut self, _round: usize, _obs: &Observation) -> Result<PolicyDecision> {
        Ok(PolicyDecision { weights: self.weights.clone(), action: None })
    }
}

/// A prescribed weight matrix per controlled round (`schedule[t - 1]`).
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub schedule: Vec<WeightMatrix>,
}

impl TopologyPolicy for ScriptedPolicy {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn decide(&mut self, round: usize, _obs: &Observation) -> Result<PolicyDecision> {
        let w = self
            .schedule
            .get(round - 1)
            .ok_or_else(|| Error::Config(format!("script has no weights for round {round}")))?;
        Ok(PolicyDecision { weights: w.clone(), action: None })
    }
}

/// Runs `f` for each index, on scoped threads when any backend is remote.
fn fan_out<T: Send>(swarm: &Swarm, which: &[usize], f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if which.len() > 1 && swarm.any_remote(which) {
        std::thread::scope(|s| {
            let f = &f;
            let handles: Vec<_> = which.iter().map(|&i| s.spawn(move || f(i))).collect();
            handles.into_iter().map(|h| h.join().expect("agent worker panicked")).collect()
        })
    } else {
        which.iter().map(|&i| f(i)).collect()
    }
}

fn generate_and_embed(swarm: &Swarm, req: &GenerationRequest<'_>) -> Result<(Generation, ReasoningEmbedding), BackendError> {
    let g = swarm.agents[req.agent].generate(req)?;
    let e = swarm.embedder.embed(&g.text, g.embedding.as_deref())?;
    Ok((g, e))
}

fn fresh_response(
    agent: usize,
    round: usize,
    task: &DebateTask,
    result: Result<(Generation, ReasoningEmbedding), BackendError>,
) -> AgentResponse {
    match result {
        Ok((g, e)) => AgentResponse {
            agent,
            round,
            answer: extract_answer(&g.text, task.format),
            text: g.text,
            embedding: Some(e),
            tokens_generated: g.completion_tokens,
            prompt_tokens: g.prompt_tokens,
            reused: false,
            failed: false,
            usage_estimated: g.usage_estimated,
        },
        Err(err) => {
            tracing::warn!(agent, round, task = %task.id, error = %err, "agent failed; answer treated as unparsed");
            AgentResponse::failure(agent, round)
        }
    }
}

/// Live state between rounds.
pub struct DebateState<'a> {
    pub task: &'a DebateTask,
    swarm: &'a Swarm,
    cfg: &'a DebateConfig,
    seed: u64,
    /// Last good response per agent; `None` until the agent first succeeds.
    last_good: Vec<Option<AgentResponse>>,
    pub similarity: SimilarityMatrix,
    pub majority: Option<String>,
    pub round: usize,
}

fn assemble(
    state_last_good: &[Option<AgentResponse>],
    round_responses: &[AgentResponse],
    cfg: &DebateConfig,
) -> Result<(Vec<Option<String>>, SimilarityMatrix, Option<String>)> {
    let answers: Vec<Option<String>> = round_responses.iter().map(|r| r.answer.clone()).collect();
    let embeddings: Vec<Option<&ReasoningEmbedding>> =
        state_last_good.iter().map(|r| r.as_ref().and_then(|r| r.embedding.as_ref())).collect();
    let sim = similarity_with_missing(&embeddings, &answers, &cfg.similarity)?;
    let majority = majority_vote(&answers).ok();
    Ok((answers, sim, majority))
}

/// Stage 1: every agent answers the bare question.
pub fn run_stage1<'a>(task: &'a DebateTask, swarm: &'a Swarm, cfg: &'a DebateConfig, seed: u64) -> Result<(DebateState<'a>, RoundRecord)> {
    let n = swarm.n();
    if n < 2 {
        return Err(Error::DegenerateSwarm(n));
    }
    let user = cfg.templates.render_starting(&task.question, task.format);
    let all: Vec<usize> = (0..n).collect();
    let responses: Vec<AgentResponse> = fan_out(swarm, &all, |i| {
        let req = GenerationRequest {
            agent: i,
            round: 0,
            system: &cfg.templates.system,
            user: &user,
            task,
            previous_answer: None,
            visible: &[],
            seed: mix_seed(seed, &[0, i as u64]),
        };
        fresh_response(i, 0, task, generate_and_embed(swarm, &req))
    });
    let last_good: Vec<Option<AgentResponse>> = responses.iter().map(|r| (!r.failed).then(|| r.clone())).collect();
    let (_, similarity, majority) = assemble(&last_good, &responses, cfg)?;
    let record = RoundRecord {
        round: 0,
        weights: None,
        tiers: None,
        activation: ActivationMask::all(n, true),
        tokens: responses.iter().map(|r| r.tokens_generated).sum(),
        prompt_tokens: responses.iter().map(|r| r.prompt_tokens).sum(),
        responses,
        similarity: similarity.clone(),
        majority: majority.clone(),
        active_links: 0,
        reward: None,
    };
    Ok((DebateState { task, swarm, cfg, seed, last_good, similarity, majority, round: 0 }, record))
}

impl DebateState<'_> {
    pub fn observation(&self) -> Observation {
        build_observation(&self.similarity)
    }

    /// Stage 2, one round: activation, tiered prompts for active agents, and
    /// the reward for the resulting state.
    pub fn run_round(&mut self, weights: WeightMatrix) -> Result<RoundRecord> {
        let n = self.swarm.n();
        if weights.n() != n {
            return Err(Error::Shape { expected: n, actual: weights.n() });
        }
        let round = self.round + 1;
        let cfg = self.cfg;
        let task = self.task;
        let activation =
            if cfg.ablations.no_activation { ActivationMask::all(n, true) } else { compute_activation(&weights)? };
        let tiers = quantize_tiers(&weights);
        let texts: Vec<&str> = self.last_good.iter().map(|r| r.as_ref().map_or("", |r| r.text.as_str())).collect();
        let active = activation.active_indices();

        let fresh: Vec<AgentResponse> = fan_out(self.swarm, &active, |i| {
            let visible: Vec<VisibleNeighbor> = visible_neighbors(i, &tiers)
                .into_iter()
                .filter_map(|(tier, j)| {
                    self.last_good[j].as_ref().map(|r| VisibleNeighbor { agent: j, tier, answer: r.answer.clone() })
                })
                .collect();
            let user = build_prompt(&cfg.templates, i, &texts, &tiers, task.format);
            let req = GenerationRequest {
                agent: i,
                round,
                system: &cfg.templates.system,
                user: &user,
                task,
                previous_answer: self.last_good[i].as_ref().and_then(|r| r.answer.as_deref()),
                visible: &visible,
                seed: mix_seed(self.seed, &[round as u64, i as u64]),
            };
            fresh_response(i, round, task, generate_and_embed(self.swarm, &req))
        });

        let mut fresh = fresh.into_iter();
        let responses: Vec<AgentResponse> = (0..n)
            .map(|i| {
                if activation.is_active(i) {
                    fresh.next().expect("one response per active agent")
                } else {
                    match &self.last_good[i] {
                        Some(prev) => AgentResponse::carried(prev, round),
                        None => AgentResponse::failure(i, round),
                    }
                }
            })
            .collect();
        for r in &responses {
            if !r.failed && !r.reused {
                self.last_good[r.agent] = Some(r.clone());
            }
        }

        let (answers, similarity, majority) = assemble(&self.last_good, &responses, cfg)?;
        let tokens: u64 = responses.iter().map(|r| r.tokens_generated).sum();
        let outcome = RoundOutcome {
            round,
            majority: majority.as_deref(),
            previous_majority: self.majority.as_deref(),
            ground_truth: &task.answer,
            answers: &answers,
            similarity: &similarity,
            tokens,
            tiers: Some(&tiers),
        };
        let reward = round_reward(&outcome, &cfg.reward_weights, &cfg.shaping);
        let record = RoundRecord {
            round,
            active_links: count_active_links(&weights, &cfg.budget),
            weights: Some(weights),
            tiers: Some(tiers),
            activation,
            prompt_tokens: responses.iter().map(|r| r.prompt_tokens).sum(),
            responses,
            similarity: similarity.clone(),
            majority: majority.clone(),
            tokens,
            reward: Some(reward),
        };
        self.similarity = similarity;
        self.majority = majority;
        self.round = round;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub transcript: EpisodeTranscript,
    pub transitions: Vec<Transition>,
}

/// Full pipeline for one task. Backend failures are absorbed per agent; any
/// other error aborts with the partial transcript attached.
pub fn run_episode(
    task: &DebateTask,
    swarm: &Swarm,
    policy: &mut dyn TopologyPolicy,
    cfg: &DebateConfig,
    seed: u64,
) -> Result<EpisodeOutcome> {
    cfg.validate()?;
    let mut transcript = EpisodeTranscript {
        task_id: task.id.clone(),
        ground_truth: task.answer.clone(),
        policy: policy.name(),
        seed,
        rounds: Vec::with_capacity(cfg.rounds),
        final_answer: None,
        correct: false,
        total_tokens: 0,
        total_prompt_tokens: 0,
        episode_reward: None,
        reward_shaping: cfg.shaping,
        error: None,
    };
    let mut transitions = Vec::new();
    match drive(task, swarm, policy, cfg, seed, &mut transcript, &mut transitions) {
        Ok(()) => Ok(EpisodeOutcome { transcript, transitions }),
        Err(e) => {
            transcript.error = Some(e.to_string());
            Err(Error::EpisodeAborted { partial: Box::new(transcript), source: Box::new(e) })
        }
    }
}

fn drive(
    task: &DebateTask,
    swarm: &Swarm,
    policy: &mut dyn TopologyPolicy,
    cfg: &DebateConfig,
    seed: u64,
    transcript: &mut EpisodeTranscript,
    transitions: &mut Vec<Transition>,
) -> Result<()> {
    let (mut state, record) = run_stage1(task, swarm, cfg, seed)?;
    let initial_majority = record.majority.clone();
    transcript.rounds.push(record);
    let mut round_rewards = Vec::new();

    for t in 1..cfg.rounds {
        let obs = state.observation();
        let decision = policy.decide(t, &obs)?;
        let record = state.run_round(decision.weights)?;
        if let Some(a) = decision.action {
            round_rewards.push(record.reward.map_or(0.0, |r| r.total));
            transitions.push(Transition {
                obs,
                z: a.z,
                noise: a.noise,
                old_log_prob: a.log_prob,
                reward: 0.0,
                value: a.value,
                done: false,
                active_links: record.active_links,
            });
        }
        transcript.rounds.push(record);
    }

    transcript.total_tokens = transcript.rounds.iter().map(|r| r.tokens).sum();
    transcript.total_prompt_tokens = transcript.rounds.iter().map(|r| r.prompt_tokens).sum();
    transcript.final_answer = state.majority.clone();
    transcript.correct = state.majority.as_deref() == Some(task.answer.as_str());

    let last = transcript.rounds.last().expect("stage 1 recorded");
    let answers: Vec<Option<String>> = last.responses.iter().map(|r| r.answer.clone()).collect();
    let final_out = RoundOutcome {
        round: last.round,
        majority: state.majority.as_deref(),
        previous_majority: initial_majority.as_deref(),
        ground_truth: &task.answer,
        answers: &answers,
        similarity: &state.similarity,
        tokens: last.tokens,
        tiers: last.tiers.as_ref(),
    };
    let ep = episode_reward(&final_out, cfg.rounds, transcript.total_tokens, &cfg.reward_weights, &cfg.shaping);
    transcript.episode_reward = Some(ep);

    let ablate = cfg.ablations;
    let count = transitions.len();
    for (k, (tr, r)) in transitions.iter_mut().zip(round_rewards).enumerate() {
        let terminal = k + 1 == count;
        tr.done = terminal;
        tr.reward = if ablate.no_round_reward {
            // R_ep is broadcast to every step
            ep.total
        } else if terminal && !ablate.no_episode_reward {
            r + ep.total
        } else {
            r
        };
    }
    Ok(())
}
