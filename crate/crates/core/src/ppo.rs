//! Clipped-surrogate PPO with GAE and a differentiable link-budget penalty.
//!
//! The joint loss is `L = L_pi + c1 * L_v + c2 * L_budget`. The budget term
//! replaces the link indicator with a tight sigmoid soft count and follows the
//! sampled action through the reparameterization `z = mu + sigma * noise`;
//! by default only its `mu` path is kept.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{gaussian_log_prob, sigmoid, Controller};
use crate::error::{Error, Result};
use crate::nn::{Gradients, Tape};
use crate::observation::Observation;
use crate::topology::{budget_penalty, BudgetConfig, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// value loss coefficient
    pub c1: f64,
    /// budget loss coefficient
    pub c2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rollout_length: usize,
    pub hidden_dim: usize,
    /// Heavy-ball momentum; 0 is plain SGD.
    pub momentum: f64,
    pub soft_count_temperature: f64,
    pub advantage_std_floor: f64,
    /// Let the budget term move sigma as well as mu. Off by default: a wider
    /// sigma lowers the expected soft count without changing the mean topology.
    pub budget_sigma_gradient: bool,
    /// Global L2 clip applied to each network's minibatch gradient; 0 disables.
    pub max_grad_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.20,
            c1: 0.01,
            c2: 0.01,
            epochs: 1,
            batch_size: 10,
            rollout_length: 10,
            hidden_dim: 128,
            momentum: 0.0,
            soft_count_temperature: 0.02,
            advantage_std_floor: 1e-8,
            budget_sigma_gradient: false,
            max_grad_norm: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("train config: {what}")));
        let positive = |x: f64| x > 0.0;
        if !positive(self.learning_rate) {
            return bad("learning_rate must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if self.c1 < 0.0 || self.c2 < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.rollout_length == 0 || self.hidden_dim == 0 {
            return bad("epochs, batch_size, rollout_length and hidden_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.max_grad_norm.is_nan() || self.max_grad_norm < 0.0 {
            return bad("max_grad_norm must be non-negative");
        }
        if !positive(self.soft_count_temperature) {
            return bad("soft_count_temperature must be positive");
        }
        Ok(())
    }
}

/// One controller decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Observation,
    /// Pre-squash action.
    pub z: Vec<f64>,
    /// Standardized noise that produced `z` under the behaviour policy.
    pub noise: Vec<f64>,
    pub old_log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
    pub active_links: usize,
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// Value of the state after the last transition when it is not terminal.
    pub bootstrap_value: f64,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// GAE over a flat stream; `dones[t]` cuts bootstrapping after step `t`.
/// Returns `(advantages, return_targets)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let len = rewards.len();
    if len == 0 {
        return Err(Error::EmptyBuffer);
    }
    if values.len() != len || dones.len() != len {
        return Err(Error::Shape { expected: len, actual: values.len().min(dones.len()) });
    }
    let mut advantages = vec![0.0; len];
    let mut running = 0.0;
    for t in (0..len).rev() {
        let (next_value, carry) = if dones[t] {
            (0.0, 0.0)
        } else if t + 1 == len {
            (bootstrap_value, 0.0)
        } else {
            (values[t + 1], running)
        };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * carry;
        advantages[t] = running;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, targets))
}

pub fn compute_gae(buffer: &RolloutBuffer, cfg: &TrainConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let rewards: Vec<f64> = buffer.transitions.iter().map(|t| t.reward).collect();
    let values: Vec<f64> = buffer.transitions.iter().map(|t| t.value).collect();
    let dones: Vec<bool> = buffer.transitions.iter().map(|t| t.done).collect();
    gae(&rewards, &values, &dones, buffer.bootstrap_value, cfg.gamma, cfg.gae_lambda)
}

/// Mean 0, std 1 (population std, floored).
pub fn normalize_advantages(adv: &[f64], std_floor: f64) -> Vec<f64> {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(std_floor);
    adv.iter().map(|a| (a - mean) / std).collect()
}

/// Clipped surrogate loss and its gradient with respect to each new log-probability.
pub fn policy_loss_and_grad(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], clip_eps: f64) -> (f64, Vec<f64>) {
    let b = new_log_probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(new_log_probs.len());
    for ((&new, &old), &adv) in new_log_probs.iter().zip(old_log_probs).zip(advantages) {
        let ratio = (new - old).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * adv;
        if unclipped <= clipped {
            loss -= unclipped / b;
            grad.push(-adv * ratio / b);
        } else {
            loss -= clipped / b;
            grad.push(0.0);
        }
    }
    (loss, grad)
}

pub fn policy_loss(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], cfg: &TrainConfig) -> f64 {
    policy_loss_and_grad(new_log_probs, old_log_probs, advantages, cfg.clip_eps).0
}

pub fn value_loss(values: &[f64], targets: &[f64]) -> f64 {
    values.iter().zip(targets).map(|(v, t)| (v - t).powi(2)).sum::<f64>() / values.len() as f64
}

pub fn total_loss(policy_l: f64, value_l: f64, budget_l: f64, cfg: &TrainConfig) -> f64 {
    policy_l + cfg.c1 * value_l + cfg.c2 * budget_l
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetLoss {
    /// `max(0, soft count - B)`.
    pub surrogate: f64,
    /// Derivative of the surrogate with respect to every weight (zero on the diagonal).
    pub d_weights: Vec<f64>,
    /// Exact hinge on the indicator count.
    pub exact_penalty: f64,
}

/// Soft link count `sum_{i != j} sigmoid((w_ij - delta) / temperature)`, hinged at the budget.
pub fn soft_budget(weights: &[f64], n: usize, budget: &BudgetConfig, temperature: f64) -> (f64, Vec<f64>) {
    let mut count = 0.0;
    let mut slopes = vec![0.0; weights.len()];
    for (k, &w) in weights.iter().enumerate() {
        if k / n == k % n {
            continue;
        }
        let s = sigmoid_unclamped((w - budget.delta) / temperature);
        count += s;
        slopes[k] = s * (1.0 - s) / temperature;
    }
    let excess = count - budget.budget as f64;
    if excess > 0.0 {
        (excess, slopes)
    } else {
        (0.0, vec![0.0; weights.len()])
    }
}

fn sigmoid_unclamped(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn budget_loss_from_action(w: &WeightMatrix, budget: &BudgetConfig, temperature: f64) -> BudgetLoss {
    let (surrogate, d_weights) = soft_budget(w.as_slice(), w.n(), budget, temperature);
    let exact = budget_penalty(crate::topology::count_active_links(w, budget), budget);
    BudgetLoss { surrogate, d_weights, exact_penalty: exact }
}

/// Loss pieces for one minibatch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub policy: f64,
    pub value: f64,
    pub budget: f64,
    pub total: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
}

/// Prepared minibatch: transitions plus their (normalized) advantages and value targets.
pub struct Minibatch<'a> {
    pub transitions: Vec<&'a Transition>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Full joint loss of a minibatch and its exact gradients for both networks.
pub fn loss_and_gradients(
    controller: &Controller,
    batch: &Minibatch,
    cfg: &TrainConfig,
    budget: &BudgetConfig,
) -> Result<(LossParts, Gradients, Gradients)> {
    let size = batch.transitions.len();
    let bsz = size as f64;
    let n = controller.n();
    let mut actor_grads = controller.actor.gradients();
    let mut critic_grads = controller.critic.gradients();
    let mut tapes = Vec::with_capacity(size);
    let mut params = Vec::with_capacity(size);
    let mut new_log_probs = Vec::with_capacity(size);
    for t in &batch.transitions {
        let mut tape = Tape::new();
        let gp = controller.actor_forward_recorded(&t.obs, &mut tape)?;
        new_log_probs.push(gaussian_log_prob(&gp.mu, &gp.log_sigma, &t.z));
        tapes.push(tape);
        params.push(gp);
    }
    let old: Vec<f64> = batch.transitions.iter().map(|t| t.old_log_prob).collect();
    let (policy_l, d_logp) = policy_loss_and_grad(&new_log_probs, &old, &batch.advantages, cfg.clip_eps);

    let mut budget_sum = 0.0;
    for (k, t) in batch.transitions.iter().enumerate() {
        let gp = &params[k];
        let d = gp.mu.len();
        let mut d_mu = vec![0.0; d];
        let mut d_ls = vec![0.0; d];
        for e in 0..d {
            let sigma = gp.log_sigma[e].exp();
            let u = (t.z[e] - gp.mu[e]) / sigma;
            d_mu[e] = d_logp[k] * u / sigma;
            d_ls[e] = d_logp[k] * (u * u - 1.0);
        }
        // reparameterized weights under the current parameters
        let w: Vec<f64> = (0..d).map(|e| sigmoid(gp.mu[e] + gp.log_sigma[e].exp() * t.noise[e])).collect();
        let (surrogate, d_w) = soft_budget(&w, n, budget, cfg.soft_count_temperature);
        budget_sum += surrogate;
        if surrogate > 0.0 && cfg.c2 > 0.0 {
            for e in 0..d {
                let dz = cfg.c2 / bsz * d_w[e] * w[e] * (1.0 - w[e]);
                d_mu[e] += dz;
                if cfg.budget_sigma_gradient {
                    d_ls[e] += dz * gp.log_sigma[e].exp() * t.noise[e];
                }
            }
        }
        controller.actor_backward(&tapes[k], &d_mu, &d_ls, &mut actor_grads)?;
    }
    let budget_l = budget_sum / bsz;

    let mut values = Vec::with_capacity(size);
    for (k, t) in batch.transitions.iter().enumerate() {
        let mut tape = Tape::new();
        let v = controller.critic_forward_recorded(&t.obs, &mut tape)?;
        values.push(v);
        controller.critic_backward(&tape, cfg.c1 * 2.0 * (v - batch.targets[k]) / bsz, &mut critic_grads)?;
    }
    let value_l = value_loss(&values, &batch.targets);

    let ratios: Vec<f64> = new_log_probs.iter().zip(&old).map(|(n, o)| (n - o).exp()).collect();
    let clipped = ratios.iter().filter(|r| (**r - 1.0).abs() > cfg.clip_eps).count();
    let parts = LossParts {
        policy: policy_l,
        value: value_l,
        budget: budget_l,
        total: total_loss(policy_l, value_l, budget_l, cfg),
        mean_ratio: ratios.iter().sum::<f64>() / bsz,
        clip_fraction: clipped as f64 / bsz,
    };
    Ok((parts, actor_grads, critic_grads))
}

/// Joint loss value only, for finite-difference checks.
pub fn loss_value(controller: &Controller, batch: &Minibatch, cfg: &TrainConfig, budget: &BudgetConfig) -> Result<f64> {
    let bsz = batch.transitions.len() as f64;
    let mut new_log_probs = Vec::new();
    let mut budget_sum = 0.0;
    let mut values = Vec::new();
    for t in &batch.transitions {
        let gp = controller.actor_forward(&t.obs)?;
        new_log_probs.push(gp.log_prob(&t.z));
        let w: Vec<f64> =
            (0..gp.mu.len()).map(|e| sigmoid(gp.mu[e] + gp.log_sigma[e].exp() * t.noise[e])).collect();
        budget_sum += soft_budget(&w, controller.n(), budget, cfg.soft_count_temperature).0;
        values.push(controller.critic_forward(&t.obs)?);
    }
    let old: Vec<f64> = batch.transitions.iter().map(|t| t.old_log_prob).collect();
    let policy_l = policy_loss(&new_log_probs, &old, &batch.advantages, cfg);
    Ok(total_loss(policy_l, value_loss(&values, &batch.targets), budget_sum / bsz, cfg))
}

/// SGD with optional heavy-ball momentum.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub learning_rate: f64,
    pub momentum: f64,
    velocity_actor: Option<Gradients>,
    velocity_critic: Option<Gradients>,
}

impl Optimizer {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self { learning_rate: cfg.learning_rate, momentum: cfg.momentum, velocity_actor: None, velocity_critic: None }
    }

    pub fn apply(&mut self, controller: &mut Controller, actor: &Gradients, critic: &Gradients) {
        let lr = self.learning_rate;
        let momentum = self.momentum;
        let step = |net: &mut crate::nn::Mlp, g: &Gradients, vel: &mut Option<Gradients>| {
            let v = vel.get_or_insert_with(|| net.gradients());
            for (k, layer) in net.layers_mut().iter_mut().enumerate() {
                for (i, p) in layer.weights.iter_mut().enumerate() {
                    v.weights[k][i] = momentum * v.weights[k][i] + g.weights[k][i];
                    *p -= lr * v.weights[k][i];
                }
                for (i, p) in layer.biases.iter_mut().enumerate() {
                    v.biases[k][i] = momentum * v.biases[k][i] + g.biases[k][i];
                    *p -= lr * v.biases[k][i];
                }
            }
        };
        step(&mut controller.actor, actor, &mut self.velocity_actor);
        step(&mut controller.critic, critic, &mut self.velocity_critic);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub budget_loss: f64,
    pub total_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub mean_reward: f64,
    /// Exact link count averaged over the rollout.
    pub mean_active_links: f64,
    /// Exact hinge penalty averaged over the rollout.
    pub mean_penalty: f64,
}

/// One PPO update over `buffer`: E epochs of shuffled minibatches.
pub fn update_step<R: Rng + ?Sized>(
    buffer: &RolloutBuffer,
    controller: &mut Controller,
    optimizer: &mut Optimizer,
    cfg: &TrainConfig,
    budget: &BudgetConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    if buffer.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let (advantages, targets) = compute_gae(buffer, cfg)?;
    let len = buffer.len();
    let mut order: Vec<usize> = (0..len).collect();
    let mut acc = LossParts::default();
    let mut batches = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let raw: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
            let batch = Minibatch {
                transitions: chunk.iter().map(|&i| &buffer.transitions[i]).collect(),
                advantages: normalize_advantages(&raw, cfg.advantage_std_floor),
                targets: chunk.iter().map(|&i| targets[i]).collect(),
            };
            let (parts, mut ga, mut gc) = loss_and_gradients(controller, &batch, cfg, budget)?;
            if !parts.total.is_finite() || !ga.is_finite() || !gc.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "policy={} value={} budget={} ratio={}",
                    parts.policy, parts.value, parts.budget, parts.mean_ratio
                )));
            }
            if cfg.max_grad_norm > 0.0 {
                ga.clip_norm(cfg.max_grad_norm);
                gc.clip_norm(cfg.max_grad_norm);
            }
            optimizer.apply(controller, &ga, &gc);
            acc.policy += parts.policy;
            acc.value += parts.value;
            acc.budget += parts.budget;
            acc.total += parts.total;
            acc.mean_ratio += parts.mean_ratio;
            acc.clip_fraction += parts.clip_fraction;
            batches += 1;
        }
    }
    let nb = batches as f64;
    let lf = len as f64;
    Ok(UpdateStats {
        policy_loss: acc.policy / nb,
        value_loss: acc.value / nb,
        budget_loss: acc.budget / nb,
        total_loss: acc.total / nb,
        mean_ratio: acc.mean_ratio / nb,
        clip_fraction: acc.clip_fraction / nb,
        mean_reward: buffer.transitions.iter().map(|t| t.reward).sum::<f64>() / lf,
        mean_active_links: buffer.transitions.iter().map(|t| t.active_links as f64).sum::<f64>() / lf,
        mean_penalty: buffer.transitions.iter().map(|t| budget_penalty(t.active_links, budget)).sum::<f64>() / lf,
    })
}
