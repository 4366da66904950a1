//! Prompt templates and tiered neighbor blocks.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnswerFormat;
use crate::error::Result;
use crate::topology::{Tier, TierMatrix};

pub const QUESTION_SLOT: &str = "<Question>";
pub const FORMAT_SLOT: &str = "<Output Format>";
pub const RESPONSES_SLOT: &str = "<other agent responses>";

pub const DEFAULT_SYSTEM: &str = "Welcome to the debate! You are a seasoned debater with expertise in succinctly and persuasively expressing your viewpoints. You will be assigned to debate groups, where you will engage in discussions with fellow participants. The outcomes of each group's deliberations will be shared among all members. It is crucial for you to leverage this information effectively in order to critically analyze the question at hand and ultimately arrive at the correct answer. Best of luck!";
pub const DEFAULT_STARTING: &str =
    "Can you answer the following question as accurately as possible? <Question> Explain your answer. <Output Format>.";
pub const DEFAULT_DEBATE: &str = "These are the solutions from other agents: <other agent responses>. Based on the above responses with their indicated importance, can you provide an updated answer? Examine all solutions step by step. <Output Format>.";

pub const CHOICE_FORMAT: &str = "Put your final choice in the form \\boxed{{answer}} at the end of your response.";
pub const NUMERIC_FORMAT: &str =
    "Your final answer should be a single numerical number, in the Form \\boxed{{answer}}, at the end of your response.";

pub fn output_format_clause(format: AnswerFormat) -> &'static str {
    match format {
        AnswerFormat::Choice => CHOICE_FORMAT,
        AnswerFormat::Numeric => NUMERIC_FORMAT,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub system: String,
    pub starting: String,
    pub debate: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self { system: DEFAULT_SYSTEM.into(), starting: DEFAULT_STARTING.into(), debate: DEFAULT_DEBATE.into() }
    }
}

/// Optional override files; a missing entry keeps the default template.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    pub system: Option<std::path::PathBuf>,
    pub starting: Option<std::path::PathBuf>,
    pub debate: Option<std::path::PathBuf>,
}

fn read_template(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.trim_end_matches(['\n', '\r']).to_string())
}

impl PromptTemplates {
    pub fn load(paths: &TemplatePaths) -> Result<Self> {
        let mut t = Self::default();
        if let Some(p) = &paths.system {
            t.system = read_template(p)?;
        }
        if let Some(p) = &paths.starting {
            t.starting = read_template(p)?;
        }
        if let Some(p) = &paths.debate {
            t.debate = read_template(p)?;
        }
        Ok(t)
    }

    pub fn render_starting(&self, question: &str, format: AnswerFormat) -> String {
        self.starting.replace(FORMAT_SLOT, output_format_clause(format)).replace(QUESTION_SLOT, question)
    }

    pub fn render_debate(&self, blocks: &str, format: AnswerFormat) -> String {
        self.debate.replace(FORMAT_SLOT, output_format_clause(format)).replace(RESPONSES_SLOT, blocks)
    }
}

/// Visible neighbors of `agent` as `(tier, neighbor)`, Critical first and by
/// ascending index within a tier.
pub fn visible_neighbors(agent: usize, tiers: &TierMatrix) -> Vec<(Tier, usize)> {
    let mut out: Vec<(Tier, usize)> =
        (0..tiers.n()).filter(|&j| j != agent).map(|j| (tiers.get(agent, j), j)).filter(|(t, _)| t.is_visible()).collect();
    out.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    out
}

/// `"[Critical] Agent 3: ..."` blocks separated by blank lines.
pub fn neighbor_blocks(agent: usize, responses: &[&str], tiers: &TierMatrix) -> String {
    visible_neighbors(agent, tiers)
        .into_iter()
        .map(|(tier, j)| format!("{} Agent {j}: {}", tier.tag().expect("visible tier has a tag"), responses[j]))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// User prompt for a debate round. `responses[j]` is agent j's latest text.
pub fn build_prompt(
    templates: &PromptTemplates,
    agent: usize,
    responses: &[&str],
    tiers: &TierMatrix,
    format: AnswerFormat,
) -> String {
    templates.render_debate(&neighbor_blocks(agent, responses, tiers), format)
}
