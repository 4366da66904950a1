//! End-to-end learning check in the simulated environment: a trained
//! controller must match the fully connected baseline's accuracy on fewer
//! tokens while staying near its link budget.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::eval::{evaluate, Metrics};
use super::train::Trainer;
use crate::baselines::StaticTopology;
use crate::debate::{synthetic_choice_tasks, ControllerPolicy};
use crate::error::Result;
use crate::ppo::TrainConfig;
use crate::seed::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningConfig {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub updates: u64,
    pub train_tasks: usize,
    pub eval_tasks: usize,
    /// Training settings applied on top of the run config.
    pub train: TrainOverrides,
    /// Allowed accuracy shortfall against the full baseline (absolute).
    pub accuracy_margin: f64,
    /// Largest allowed token ratio against the full baseline.
    pub max_token_ratio: f64,
    /// Allowed mean active links as a multiple of the budget.
    pub max_link_ratio: f64,
    /// Seeds that must pass for a budget to pass.
    pub required_passes: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            budgets: vec![12, 18],
            seeds: vec![7, 11, 13],
            updates: 3000,
            train_tasks: 1000,
            eval_tasks: 1000,
            train: TrainOverrides::default(),
            accuracy_margin: 0.02,
            max_token_ratio: 0.60,
            max_link_ratio: 1.20,
            required_passes: 2,
        }
    }
}

/// Optional training overrides; `None` keeps the run config's value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub rollout_length: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_grad_norm: Option<f64>,
}

impl Default for TrainOverrides {
    fn default() -> Self {
        Self {
            learning_rate: Some(1e-3),
            momentum: None,
            c1: Some(1.0),
            c2: None,
            rollout_length: Some(100),
            batch_size: None,
            max_grad_norm: Some(1.0),
        }
    }
}

impl TrainOverrides {
    pub fn apply(&self, t: &mut TrainConfig) {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.momentum, self.momentum);
        set(&mut t.c1, self.c1);
        set(&mut t.c2, self.c2);
        set(&mut t.max_grad_norm, self.max_grad_norm);
        if let Some(l) = self.rollout_length {
            t.rollout_length = l;
        }
        if let Some(b) = self.batch_size {
            t.batch_size = b;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRun {
    pub budget: usize,
    pub seed: u64,
    pub rumad: Metrics,
    pub full: Metrics,
    pub token_ratio: f64,
    pub accuracy_ok: bool,
    pub tokens_ok: bool,
    pub links_ok: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetVerdict {
    pub budget: usize,
    pub passes: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningReport {
    pub config: LearningConfig,
    pub runs: Vec<LearningRun>,
    pub budgets: Vec<BudgetVerdict>,
    pub passed: bool,
}

/// Trains one controller and scores it against the full topology on shared tasks.
pub fn learning_run(base: &RunConfig, lc: &LearningConfig, budget: usize, seed: u64) -> Result<LearningRun> {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.budget.budget = budget;
    lc.train.apply(&mut cfg.train);
    cfg.schedule.eval_every = 0;
    let train_tasks = synthetic_choice_tasks(lc.train_tasks, mix_seed(seed, &[0x7a]));
    let eval_tasks: Vec<_> = synthetic_choice_tasks(lc.eval_tasks, mix_seed(seed, &[0xe7]))
        .into_iter()
        .map(|mut t| {
            t.id = format!("eval-{}", t.id);
            t
        })
        .collect();
    let mut trainer = Trainer::new(&cfg)?.with_tasks(train_tasks, eval_tasks.clone())?;
    trainer.run(lc.updates, None)?;

    let swarm = cfg.build_swarm()?;
    let dcfg = trainer.debate_config().clone();
    let mut rumad_policy = ControllerPolicy::deterministic(&trainer.controller);
    let (rumad, _) = evaluate("rumad", &eval_tasks, &swarm, &mut rumad_policy, &dcfg, seed)?;
    let mut full_policy = StaticTopology::Full.policy(cfg.n())?;
    let (full, _) = evaluate("full", &eval_tasks, &swarm, &mut full_policy, &dcfg, seed)?;

    let token_ratio = rumad.mean_tokens / full.mean_tokens;
    let accuracy_ok = rumad.accuracy >= full.accuracy - lc.accuracy_margin;
    let tokens_ok = token_ratio <= lc.max_token_ratio;
    let links_ok = rumad.mean_active_links <= lc.max_link_ratio * budget as f64;
    tracing::info!(budget, seed, acc = rumad.accuracy, full_acc = full.accuracy, token_ratio, links = rumad.mean_active_links, "learning run");
    Ok(LearningRun {
        budget,
        seed,
        rumad,
        full,
        token_ratio,
        accuracy_ok,
        tokens_ok,
        links_ok,
        passed: accuracy_ok && tokens_ok && links_ok,
    })
}

pub fn oracle_learning(base: &RunConfig, lc: &LearningConfig) -> Result<LearningReport> {
    let mut runs = Vec::new();
    for &b in &lc.budgets {
        for &s in &lc.seeds {
            runs.push(learning_run(base, lc, b, s)?);
        }
    }
    let budgets: Vec<BudgetVerdict> = lc
        .budgets
        .iter()
        .map(|&b| {
            let passes = runs.iter().filter(|r| r.budget == b && r.passed).count();
            BudgetVerdict { budget: b, passes, passed: passes >= lc.required_passes }
        })
        .collect();
    let passed = budgets.iter().all(|v| v.passed);
    Ok(LearningReport { config: lc.clone(), runs, budgets, passed })
}
