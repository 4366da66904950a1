use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, Metrics};
use crate::controller::{Checkpoint, Controller};
use crate::debate::{run_episode, ControllerPolicy, DebateConfig, DebateTask, Swarm};
use crate::error::{Error, Result};
use crate::ppo::{update_step, Optimizer, RolloutBuffer, TrainConfig, UpdateStats};
use crate::seed::mix_seed;

const EPISODE_STREAM: u64 = 1;
const POLICY_STREAM: u64 = 2;
const TASK_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub mean_tokens: f64,
    pub mean_active_links: f64,
    pub mean_episode_reward: f64,
}

impl From<&Metrics> for EvalSummary {
    fn from(m: &Metrics) -> Self {
        Self {
            accuracy: m.accuracy,
            mean_tokens: m.mean_tokens,
            mean_active_links: m.mean_active_links,
            mean_episode_reward: m.mean_episode_reward,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub episodes: usize,
    pub transitions: usize,
    /// Sum of transition rewards per episode, averaged over the rollout.
    pub mean_episode_return: f64,
    pub rollout_accuracy: f64,
    pub mean_tokens: f64,
    #[serde(flatten)]
    pub stats: UpdateStats,
    /// False when the budget term is ablated; the penalty is still reported.
    pub budget_loss_in_objective: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSummary>,
}

pub struct Trainer {
    seed: u64,
    debate: DebateConfig,
    train: TrainConfig,
    schedule: super::config::Schedule,
    swarm: Swarm,
    tasks: Vec<DebateTask>,
    eval_tasks: Vec<DebateTask>,
    pub controller: Controller,
    optimizer: Optimizer,
    pub step: u64,
    best_eval_reward: Option<f64>,
}

impl Trainer {
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let controller = Controller::new(cfg.n(), cfg.train.hidden_dim, mix_seed(cfg.seed, &[0xC0]))?;
        Self::with_controller(cfg, controller, 0)
    }

    /// Continues from a checkpoint; step numbering picks up at its `train_step`.
    pub fn resume(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.n_agents != cfg.n() {
            return Err(Error::Config(format!("checkpoint is for {} agents, config has {}", ckpt.n_agents, cfg.n())));
        }
        Self::with_controller(cfg, Controller::from_checkpoint(ckpt)?, ckpt.train_step)
    }

    fn with_controller(cfg: &RunConfig, controller: Controller, step: u64) -> Result<Self> {
        cfg.validate()?;
        let train = cfg.effective_train_config();
        Ok(Self {
            seed: cfg.seed,
            debate: cfg.debate_config()?,
            train,
            schedule: cfg.schedule,
            swarm: cfg.build_swarm()?,
            tasks: cfg.training_tasks()?,
            eval_tasks: cfg.evaluation_tasks()?,
            controller,
            optimizer: Optimizer::new(&train),
            step,
            best_eval_reward: None,
        })
    }

    pub fn with_tasks(mut self, tasks: Vec<DebateTask>, eval_tasks: Vec<DebateTask>) -> Result<Self> {
        if tasks.is_empty() || eval_tasks.is_empty() {
            return Err(Error::EmptyDataset("training or evaluation task list".into()));
        }
        self.tasks = tasks;
        self.eval_tasks = eval_tasks;
        Ok(self)
    }

    pub fn debate_config(&self) -> &DebateConfig {
        &self.debate
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.controller.to_checkpoint(self.seed, self.step)
    }

    /// Whole stochastic episodes until the buffer holds at least L transitions.
    fn collect(&self) -> Result<(RolloutBuffer, usize, f64, f64, f64)> {
        let mut buffer = RolloutBuffer::default();
        let (mut episodes, mut correct, mut tokens, mut ret) = (0usize, 0usize, 0u64, 0.0);
        while buffer.len() < self.train.rollout_length {
            let e = episodes as u64;
            let pick = mix_seed(self.seed, &[TASK_STREAM, self.step, e]) % self.tasks.len() as u64;
            let task = &self.tasks[pick as usize];
            let mut policy =
                ControllerPolicy::stochastic(&self.controller, mix_seed(self.seed, &[POLICY_STREAM, self.step, e]));
            let out =
                run_episode(task, &self.swarm, &mut policy, &self.debate, mix_seed(self.seed, &[EPISODE_STREAM, self.step, e]))?;
            if out.transitions.is_empty() {
                return Err(Error::Config("training needs at least two rounds per episode".into()));
            }
            episodes += 1;
            correct += usize::from(out.transcript.correct);
            tokens += out.transcript.total_tokens;
            ret += out.transitions.iter().map(|t| t.reward).sum::<f64>();
            buffer.transitions.extend(out.transitions);
        }
        let k = episodes as f64;
        Ok((buffer, episodes, ret / k, correct as f64 / k, tokens as f64 / k))
    }

    /// Collects a rollout and applies one PPO update.
    pub fn update(&mut self) -> Result<TrainLogEntry> {
        let (buffer, episodes, mean_return, accuracy, mean_tokens) = self.collect()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, &[SHUFFLE_STREAM, self.step]));
        let stats = update_step(&buffer, &mut self.controller, &mut self.optimizer, &self.train, &self.debate.budget, &mut rng)?;
        self.step += 1;
        Ok(TrainLogEntry {
            step: self.step,
            episodes,
            transitions: buffer.len(),
            mean_episode_return: mean_return,
            rollout_accuracy: accuracy,
            mean_tokens,
            stats,
            budget_loss_in_objective: self.train.c2 > 0.0,
            eval: None,
        })
    }

    /// Deterministic-policy evaluation on the held-out tasks.
    pub fn evaluate(&self) -> Result<Metrics> {
        let mut policy = ControllerPolicy::deterministic(&self.controller);
        let (m, _) = evaluate("rumad", &self.eval_tasks, &self.swarm, &mut policy, &self.debate, self.seed)?;
        Ok(m)
    }

    /// Runs until `self.step == target_step`, writing the log and checkpoints under `out_dir`.
    pub fn run(&mut self, target_step: u64, out_dir: Option<&Path>) -> Result<Vec<TrainLogEntry>> {
        let mut log_file = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("checkpoints"))?;
                let f = std::fs::OpenOptions::new().create(true).append(true).open(dir.join("train_log.jsonl"))?;
                Some(std::io::BufWriter::new(f))
            }
            None => None,
        };
        let mut log = Vec::new();
        while self.step < target_step {
            let mut entry = self.update()?;
            let s = self.schedule;
            if s.eval_every > 0 && (entry.step % s.eval_every as u64 == 0 || entry.step == target_step) {
                let m = self.evaluate()?;
                entry.eval = Some(EvalSummary::from(&m));
                if self.best_eval_reward.is_none_or(|b| m.mean_episode_reward > b) {
                    self.best_eval_reward = Some(m.mean_episode_reward);
                    if let Some(dir) = out_dir {
                        self.checkpoint().save(dir.join("checkpoint_best.json"))?;
                    }
                }
            }
            tracing::info!(
                step = entry.step,
                ret = entry.mean_episode_return,
                links = entry.stats.mean_active_links,
                tokens = entry.mean_tokens,
                "update"
            );
            if let Some(dir) = out_dir {
                if s.checkpoint_every > 0 && entry.step % s.checkpoint_every as u64 == 0 {
                    self.checkpoint().save(checkpoint_path(dir, entry.step))?;
                }
            }
            if let Some(f) = log_file.as_mut() {
                serde_json::to_writer(&mut *f, &entry)?;
                f.write_all(b"\n")?;
            }
            log.push(entry);
        }
        if let Some(dir) = out_dir {
            if let Some(f) = log_file.as_mut() {
                f.flush()?;
            }
            self.checkpoint().save(dir.join("checkpoint_final.json"))?;
        }
        Ok(log)
    }
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join("checkpoints").join(format!("step_{step:06}.json"))
}

pub fn read_train_log(path: impl AsRef<Path>) -> Result<Vec<TrainLogEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Exponential moving average of the per-update episode return.
pub fn smoothed_returns(log: &[TrainLogEntry], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(log.len());
    let mut acc: Option<f64> = None;
    for e in log {
        let v = match acc {
            None => e.mean_episode_return,
            Some(a) => alpha * e.mean_episode_return + (1.0 - alpha) * a,
        };
        acc = Some(v);
        out.push(v);
    }
    out
}
