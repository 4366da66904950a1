use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, BackendSpec, EmbeddingSpec, SimAgentModel};
use crate::debate::{load_tasks, synthetic_choice_tasks, Ablations, DebateConfig, DebateTask, PromptTemplates, Swarm, TemplatePaths};
use crate::error::{Error, Result};
use crate::observation::SimilarityConfig;
use crate::ppo::TrainConfig;
use crate::reward::{RewardShaping, RewardWeights};
use crate::topology::BudgetConfig;

/// The annotated default configuration file.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../configs/default.toml");

/// Accuracy and susceptibility of the default six-agent simulated swarm.
pub const DEFAULT_SIM_ACCURACIES: [f64; 6] = [0.9, 0.9, 0.6, 0.6, 0.3, 0.3];
pub const DEFAULT_SIM_SUSCEPTIBILITY: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub updates: usize,
    /// Deterministic evaluation every this many updates; 0 disables.
    pub eval_every: usize,
    pub eval_tasks: usize,
    /// Checkpoint every this many updates; 0 keeps only final and best.
    pub checkpoint_every: usize,
    /// Size of the synthetic task pool used when no dataset is configured.
    pub synthetic_tasks: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { updates: 300, eval_every: 50, eval_tasks: 100, checkpoint_every: 100, synthetic_tasks: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: usize,
    pub dataset: Option<PathBuf>,
    pub eval_dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub similarity: SimilarityConfig,
    pub budget: BudgetConfig,
    pub reward: RewardWeights,
    pub shaping: RewardShaping,
    pub train: TrainConfig,
    pub schedule: Schedule,
    pub ablations: Ablations,
    pub templates: TemplatePaths,
    pub embedding: EmbeddingSpec,
    pub swarm: Vec<AgentSpec>,
}

pub fn simulated_swarm(accuracies: &[f64], susceptibility: f64) -> Vec<AgentSpec> {
    accuracies
        .iter()
        .enumerate()
        .map(|(i, &p)| AgentSpec {
            index: i,
            model: format!("sim-{p}"),
            seed: 100 + i as u64,
            backend: BackendSpec::Simulated(SimAgentModel::with_accuracy(p, susceptibility)),
        })
        .collect()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            rounds: 6,
            dataset: None,
            eval_dataset: None,
            output_dir: PathBuf::from("runs/default"),
            similarity: SimilarityConfig::default(),
            budget: BudgetConfig::default(),
            reward: RewardWeights::default(),
            shaping: RewardShaping::default(),
            train: TrainConfig::default(),
            schedule: Schedule::default(),
            ablations: Ablations::default(),
            templates: TemplatePaths::default(),
            embedding: EmbeddingSpec::default(),
            swarm: simulated_swarm(&DEFAULT_SIM_ACCURACIES, DEFAULT_SIM_SUSCEPTIBILITY),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        // relative paths inside the file are resolved against its directory
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p.as_mut() {
                if q.is_relative() && !q.exists() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut cfg.dataset);
        fix(&mut cfg.eval_dataset);
        fix(&mut cfg.templates.system);
        fix(&mut cfg.templates.starting);
        fix(&mut cfg.templates.debate);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.swarm.len() < 2 {
            return Err(Error::DegenerateSwarm(self.swarm.len()));
        }
        for (k, spec) in self.swarm.iter().enumerate() {
            if spec.index != k {
                return Err(Error::Config(format!("swarm entry {k} has index {}; indices must be 0..n in order", spec.index)));
            }
            if let BackendSpec::Simulated(m) = &spec.backend {
                m.validate().map_err(Error::Config)?;
            }
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.budget.delta > 0.0 && self.budget.delta < 1.0) {
            return Err(Error::Config("budget delta must lie in (0, 1)".into()));
        }
        self.similarity.validate()?;
        self.train.validate()?;
        self.ablations.validate()
    }

    pub fn n(&self) -> usize {
        self.swarm.len()
    }

    pub fn debate_config(&self) -> Result<DebateConfig> {
        Ok(DebateConfig {
            rounds: self.rounds,
            similarity: self.similarity,
            budget: self.budget,
            reward_weights: self.reward,
            shaping: self.shaping,
            ablations: self.ablations,
            templates: PromptTemplates::load(&self.templates)?,
        })
    }

    /// Training settings with ablations applied.
    pub fn effective_train_config(&self) -> TrainConfig {
        let mut t = self.train;
        if self.ablations.no_budget_loss {
            t.c2 = 0.0;
        }
        t
    }

    pub fn build_swarm(&self) -> Result<Swarm> {
        let agents = self.swarm.iter().map(|s| s.build()).collect::<std::result::Result<Vec<_>, _>>()?;
        Swarm::new(agents, self.embedding.build()?)
    }

    /// Training tasks: the dataset, or a seeded synthetic pool.
    pub fn training_tasks(&self) -> Result<Vec<DebateTask>> {
        match &self.dataset {
            Some(p) => load_tasks(p),
            None => Ok(synthetic_choice_tasks(self.schedule.synthetic_tasks, self.seed ^ 0x0074_7261_696e)),
        }
    }

    /// Evaluation tasks: the eval dataset, the training dataset, or a synthetic
    /// pool disjoint in seed from the training pool.
    pub fn evaluation_tasks(&self) -> Result<Vec<DebateTask>> {
        match (&self.eval_dataset, &self.dataset) {
            (Some(p), _) | (None, Some(p)) => load_tasks(p),
            (None, None) => Ok(synthetic_choice_tasks(self.schedule.eval_tasks, self.seed ^ 0x6576_616c)),
        }
    }
}
