//! Configuration, training, evaluation and reporting.

pub mod config;
pub mod eval;
pub mod oracle;
pub mod train;

use std::fmt::Write as _;
use std::str::FromStr;

pub use config::{simulated_swarm, RunConfig, Schedule, DEFAULT_CONFIG_TOML};
pub use eval::{
    compare, dataset_id, evaluate, metrics_from_transcripts, read_transcripts, render_comparison, render_metrics,
    task_dataset_id, write_transcripts, ComparisonRow, Metrics, TranscriptWriter,
};
pub use oracle::{learning_run, oracle_learning, LearningConfig, LearningReport, LearningRun, TrainOverrides};
pub use train::{read_train_log, smoothed_returns, EvalSummary, TrainLogEntry, Trainer};

use crate::baselines::StaticTopology;
use crate::controller::Controller;
use crate::debate::{ControllerPolicy, EpisodeTranscript, StaticPolicy, TopologyPolicy};
use crate::error::{Error, Result};

/// `rumad` (the learned controller) or one of the static baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyChoice {
    Rumad,
    Static(StaticTopology),
}

impl FromStr for TopologyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "rumad" {
            Ok(TopologyChoice::Rumad)
        } else {
            s.parse().map(TopologyChoice::Static)
        }
    }
}

impl std::fmt::Display for TopologyChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TopologyChoice::Rumad => write!(f, "rumad"),
            TopologyChoice::Static(t) => t.fmt(f),
        }
    }
}

/// Owns whatever a [`TopologyChoice`] needs to act.
pub enum PolicyHolder {
    Rumad(Controller),
    Static(StaticPolicy),
}

impl PolicyHolder {
    pub fn new(choice: TopologyChoice, n: usize, controller: Option<Controller>) -> Result<Self> {
        match choice {
            TopologyChoice::Rumad => controller
                .map(PolicyHolder::Rumad)
                .ok_or_else(|| Error::Config("the rumad topology needs --checkpoint".into())),
            TopologyChoice::Static(t) => Ok(PolicyHolder::Static(t.policy(n)?)),
        }
    }

    pub fn policy(&mut self) -> Box<dyn TopologyPolicy + '_> {
        match self {
            PolicyHolder::Rumad(c) => Box::new(ControllerPolicy::deterministic(c)),
            PolicyHolder::Static(p) => Box::new(p.clone()),
        }
    }
}

fn agent_list(agents: &[usize]) -> String {
    if agents.is_empty() {
        "none".into()
    } else {
        agents.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(", ")
    }
}

/// Round-by-round listing of who spoke, who was reused, and the votes.
pub fn render_transcript(t: &EpisodeTranscript) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "task {} (truth {}) under {}", t.task_id, t.ground_truth, t.policy);
    for r in &t.rounds {
        let fresh: Vec<usize> = r.responses.iter().filter(|a| !a.reused && !a.failed).map(|a| a.agent).collect();
        let reused: Vec<usize> = r.responses.iter().filter(|a| a.reused).map(|a| a.agent).collect();
        let failed: Vec<usize> = r.responses.iter().filter(|a| a.failed).map(|a| a.agent).collect();
        let answers: Vec<String> = r.responses.iter().map(|a| a.answer.clone().unwrap_or_else(|| "?".into())).collect();
        let _ = writeln!(out, "Round {}", r.round);
        let _ = writeln!(out, "  generated: {}", agent_list(&fresh));
        let _ = writeln!(out, "  reused:    {}", agent_list(&reused));
        if !failed.is_empty() {
            let _ = writeln!(out, "  failed:    {}", agent_list(&failed));
        }
        let _ = writeln!(
            out,
            "  answers:   ({})  majority {}  tokens {}  links {}",
            answers.join(","),
            r.majority.as_deref().unwrap_or("-"),
            r.tokens,
            r.active_links
        );
    }
    let _ = writeln!(
        out,
        "final answer {} ({}), {} tokens",
        t.final_answer.as_deref().unwrap_or("-"),
        if t.correct { "correct" } else { "wrong" },
        t.total_tokens
    );
    out
}
