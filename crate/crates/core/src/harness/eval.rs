use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::debate::{run_episode, DebateConfig, DebateTask, EpisodeTranscript, Swarm, TopologyPolicy};
use crate::error::{Error, Result};
use crate::seed::mix_seed;

/// Seed stream for evaluation episodes, shared by every topology so runs are paired.
const EVAL_STREAM: u64 = 0x45_56_41_4c;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRun {
    pub path: String,
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub run: String,
    /// Hash of the ordered `(task id, ground truth)` pairs.
    pub dataset_id: String,
    pub tasks: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Generated tokens per task, averaged over tasks.
    pub mean_tokens: f64,
    pub tokens_k_per_task: f64,
    /// Exact active links averaged over controlled rounds.
    pub mean_active_links: f64,
    pub mean_episode_reward: f64,
    pub vote_failures: usize,
    pub reference: Option<ReferenceRun>,
    /// `1 - mean_tokens / reference.mean_tokens`.
    pub cost_saving: Option<f64>,
}

pub fn dataset_id<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut h = Sha256::new();
    for (id, truth) in pairs {
        h.update(id.as_bytes());
        h.update([0x1f]);
        h.update(truth.as_bytes());
        h.update([0x1e]);
    }
    h.finalize().iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn task_dataset_id(tasks: &[DebateTask]) -> String {
    dataset_id(tasks.iter().map(|t| (t.id.as_str(), t.answer.as_str())))
}

/// Metrics computed from transcripts alone, so they can be recomputed from disk.
pub fn metrics_from_transcripts(run: &str, transcripts: &[EpisodeTranscript]) -> Result<Metrics> {
    if transcripts.is_empty() {
        return Err(Error::EmptyDataset(format!("no transcripts for run {run}")));
    }
    let tasks = transcripts.len();
    let correct = transcripts.iter().filter(|t| t.correct).count();
    let tokens: u64 = transcripts.iter().map(|t| t.total_tokens).sum();
    let mean_tokens = tokens as f64 / tasks as f64;
    let (links, controlled) = transcripts
        .iter()
        .flat_map(|t| t.rounds.iter().filter(|r| r.round > 0))
        .fold((0usize, 0usize), |(l, c), r| (l + r.active_links, c + 1));
    let reward: f64 = transcripts.iter().map(|t| t.episode_reward.map_or(0.0, |r| r.total)).sum();
    Ok(Metrics {
        run: run.to_string(),
        dataset_id: dataset_id(transcripts.iter().map(|t| (t.task_id.as_str(), t.ground_truth.as_str()))),
        tasks,
        correct,
        accuracy: correct as f64 / tasks as f64,
        mean_tokens,
        tokens_k_per_task: mean_tokens / 1000.0,
        mean_active_links: if controlled == 0 { 0.0 } else { links as f64 / controlled as f64 },
        mean_episode_reward: reward / tasks as f64,
        vote_failures: transcripts.iter().filter(|t| t.final_answer.is_none()).count(),
        reference: None,
        cost_saving: None,
    })
}

impl Metrics {
    /// Attaches a cost saving against `reference`; datasets must match.
    pub fn with_reference(mut self, reference: &Metrics, path: &str) -> Result<Self> {
        if reference.dataset_id != self.dataset_id {
            return Err(Error::Config(format!(
                "reference run {path} used dataset {} but this run used {}",
                reference.dataset_id, self.dataset_id
            )));
        }
        self.cost_saving = Some(1.0 - self.mean_tokens / reference.mean_tokens);
        self.reference = Some(ReferenceRun { path: path.to_string(), mean_tokens: reference.mean_tokens });
        Ok(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Runs one episode per task with `policy`. Episode seeds depend only on the
/// global seed and the task position.
pub fn evaluate(
    run: &str,
    tasks: &[DebateTask],
    swarm: &Swarm,
    policy: &mut dyn TopologyPolicy,
    cfg: &DebateConfig,
    seed: u64,
) -> Result<(Metrics, Vec<EpisodeTranscript>)> {
    if tasks.is_empty() {
        return Err(Error::EmptyDataset(format!("no evaluation tasks for run {run}")));
    }
    let mut transcripts = Vec::with_capacity(tasks.len());
    for (k, task) in tasks.iter().enumerate() {
        let out = run_episode(task, swarm, policy, cfg, mix_seed(seed, &[EVAL_STREAM, k as u64]))?;
        transcripts.push(out.transcript);
    }
    Ok((metrics_from_transcripts(run, &transcripts)?, transcripts))
}

/// Append-only JSONL writer for episode transcripts.
pub struct TranscriptWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl TranscriptWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: std::io::BufWriter::new(file) })
    }

    pub fn append(&mut self, t: &EpisodeTranscript) -> Result<()> {
        serde_json::to_writer(&mut self.file, t)?;
        self.file.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

pub fn write_transcripts(path: impl AsRef<Path>, transcripts: &[EpisodeTranscript]) -> Result<()> {
    let path = path.as_ref();
    if path.exists() {
        std::fs::remove_file(path)?;
    }
    let mut w = TranscriptWriter::create(path)?;
    for t in transcripts {
        w.append(t)?;
    }
    w.finish()
}

pub fn read_transcripts(path: impl AsRef<Path>) -> Result<Vec<EpisodeTranscript>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub accuracy: f64,
    pub tokens_k_per_task: f64,
    /// Relative to the first run; `None` for the first row.
    pub cost_saving: Option<f64>,
}

/// Side-by-side rows, savings relative to the first run.
pub fn compare(runs: &[Metrics]) -> Result<Vec<ComparisonRow>> {
    let first = runs.first().ok_or_else(|| Error::Config("compare needs at least one run".into()))?;
    if let Some(bad) = runs.iter().find(|m| m.dataset_id != first.dataset_id) {
        return Err(Error::Config(format!(
            "run {} used dataset {} but {} used {}",
            bad.run, bad.dataset_id, first.run, first.dataset_id
        )));
    }
    Ok(runs
        .iter()
        .enumerate()
        .map(|(k, m)| ComparisonRow {
            run: m.run.clone(),
            accuracy: m.accuracy,
            tokens_k_per_task: m.tokens_k_per_task,
            cost_saving: (k > 0).then(|| 1.0 - m.mean_tokens / first.mean_tokens),
        })
        .collect())
}

pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let width = rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
    let mut out = format!("{:<width$}  {:>7}  {:>12}  {:>11}\n", "run", "ACC", "tokens k/task", "cost saving");
    for r in rows {
        let saving = r.cost_saving.map_or("N/A".to_string(), |s| format!("{:.1}%", 100.0 * s));
        let _ = writeln!(out, "{:<width$}  {:>6.1}%  {:>13.3}  {:>11}", r.run, 100.0 * r.accuracy, r.tokens_k_per_task, saving);
    }
    out
}

pub fn render_metrics(m: &Metrics) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run             {}", m.run);
    let _ = writeln!(out, "dataset         {} ({} tasks)", m.dataset_id, m.tasks);
    let _ = writeln!(out, "accuracy        {:.2}% ({}/{})", 100.0 * m.accuracy, m.correct, m.tasks);
    let _ = writeln!(out, "tokens/task     {:.1} ({:.3}k)", m.mean_tokens, m.tokens_k_per_task);
    let _ = writeln!(out, "active links    {:.2}", m.mean_active_links);
    let _ = writeln!(out, "episode reward  {:.4}", m.mean_episode_reward);
    if let (Some(r), Some(s)) = (&m.reference, m.cost_saving) {
        let _ = writeln!(out, "cost saving     {:.1}% vs {}", 100.0 * s, r.path);
    }
    out
}
