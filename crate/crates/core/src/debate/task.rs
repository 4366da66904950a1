use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::answer::canonical_numeric;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerFormat {
    Choice,
    Numeric,
}

/// One question with its ground truth. Task files are JSONL, one task per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateTask {
    pub id: String,
    pub question: String,
    pub format: AnswerFormat,
    /// Choice labels; defaults to A-D for choice tasks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(alias = "correct")]
    pub answer: String,
}

const DEFAULT_CHOICES: [&str; 4] = ["A", "B", "C", "D"];

impl DebateTask {
    pub fn choice_labels(&self) -> Vec<String> {
        match &self.choices {
            Some(c) => c.clone(),
            None => DEFAULT_CHOICES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Canonicalizes the stored answer and checks it against the format.
    pub fn validate(&mut self) -> Result<()> {
        match self.format {
            AnswerFormat::Choice => {
                let labels = self.choice_labels();
                let answer = self.answer.trim().to_ascii_uppercase();
                if !labels.contains(&answer) {
                    return Err(Error::Config(format!("task {}: answer {:?} not among choices", self.id, self.answer)));
                }
                self.answer = answer;
            }
            AnswerFormat::Numeric => {
                self.answer = canonical_numeric(&self.answer)
                    .ok_or_else(|| Error::Config(format!("task {}: answer {:?} is not numeric", self.id, self.answer)))?;
            }
        }
        Ok(())
    }

    /// Candidate labels a simulated agent can produce: the choices, or the
    /// truth plus `distractors` nearby integers for numeric tasks.
    pub fn answer_space(&self, distractors: usize) -> Vec<String> {
        match self.format {
            AnswerFormat::Choice => self.choice_labels(),
            AnswerFormat::Numeric => {
                let truth: f64 = self.answer.parse().unwrap_or(0.0);
                let mut out = vec![self.answer.clone()];
                let mut k = 1.0;
                while out.len() < distractors + 1 {
                    for cand in [truth + k, truth - k] {
                        if out.len() < distractors + 1 {
                            out.push(canonical_numeric(&cand.to_string()).expect("finite"));
                        }
                    }
                    k += 1.0;
                }
                out
            }
        }
    }
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<DebateTask>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut tasks = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut task: DebateTask = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        task.validate()?;
        tasks.push(task);
    }
    if tasks.is_empty() {
        return Err(Error::EmptyDataset(path.display().to_string()));
    }
    Ok(tasks)
}

pub fn write_tasks(path: impl AsRef<Path>, tasks: &[DebateTask]) -> Result<()> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Seeded synthetic multiple-choice tasks for simulator runs.
pub fn synthetic_choice_tasks(count: usize, seed: u64) -> Vec<DebateTask> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| DebateTask {
            id: format!("sim-{k:05}"),
            question: format!("Synthetic multiple-choice question #{k}."),
            format: AnswerFormat::Choice,
            choices: None,
            answer: DEFAULT_CHOICES[rng.random_range(0..4)].to_string(),
        })
        .collect()
}
