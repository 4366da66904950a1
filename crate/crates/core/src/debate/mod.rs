//! Debate tasks, prompts, answer handling and the episode pipeline.

pub mod answer;
pub mod env;
pub mod prompt;
pub mod task;

pub use answer::{canonical_numeric, extract_answer, majority_vote};
pub use env::{
    run_episode, run_stage1, Ablations, ActionRecord, AgentResponse, ControllerPolicy, DebateConfig, DebateState,
    EpisodeOutcome, EpisodeTranscript, PolicyDecision, RoundRecord, ScriptedPolicy, StaticPolicy, Swarm, TopologyPolicy,
};
pub use prompt::{build_prompt, output_format_clause, PromptTemplates, TemplatePaths};
pub use task::{load_tasks, synthetic_choice_tasks, write_tasks, AnswerFormat, DebateTask};
