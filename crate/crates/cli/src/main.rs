use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::filter::LevelFilter;
use topodebate::controller::{Checkpoint, Controller};
use topodebate::debate::{load_tasks, run_episode, DebateTask};
use topodebate::harness::{
    compare, evaluate, metrics_from_transcripts, oracle_learning, read_transcripts, render_comparison, render_metrics,
    render_transcript, write_transcripts, LearningConfig, Metrics, PolicyHolder, RunConfig,
    TopologyChoice, Trainer,
};

#[derive(Parser)]
#[command(name = "topodebate", version, about = "Multi-agent debate with a learned communication topology")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Link budget B.
    #[arg(long)]
    budget: Option<usize>,
    /// Task file (JSONL); overrides the config.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Ablation switch: no_episode_reward, no_round_reward, no_activation or no_budget_loss. Repeatable.
    #[arg(long = "ablate", value_name = "NAME")]
    ablate: Vec<String>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the topology controller.
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of updates (overrides the config schedule).
        #[arg(long)]
        updates: Option<u64>,
    },
    /// Evaluate a topology over a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// rumad, full, ring, star[:hub] or group:<size>.
        #[arg(long, default_value = "rumad")]
        topology: String,
        /// Metrics file of the run that cost savings are measured against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Compare metrics files side by side; savings are relative to the first.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run and print one debate.
    Debate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "rumad")]
        topology: String,
        #[arg(long)]
        task: String,
        /// Emit the raw transcript as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Recompute metrics from a transcript file and compare with a metrics file.
    Recompute {
        transcripts: PathBuf,
        /// Metrics file to check against.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Train and score controllers in the simulator against the full topology.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Learning check settings (TOML).
        #[arg(long)]
        learning: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(b) = c.budget {
        cfg.budget.budget = b;
    }
    if let Some(d) = &c.dataset {
        cfg.dataset = Some(d.clone());
        cfg.eval_dataset = None;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = o.clone();
    }
    for a in &c.ablate {
        match a.as_str() {
            "no_episode_reward" => cfg.ablations.no_episode_reward = true,
            "no_round_reward" => cfg.ablations.no_round_reward = true,
            "no_activation" => cfg.ablations.no_activation = true,
            "no_budget_loss" => cfg.ablations.no_budget_loss = true,
            other => bail!("unknown ablation {other:?}"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_controller(path: Option<&Path>) -> Result<Option<Controller>> {
    path.map(|p| {
        let ckpt = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
        Ok(Controller::from_checkpoint(&ckpt)?)
    })
    .transpose()
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn train(common: &Common, checkpoint: Option<&Path>, updates: Option<u64>) -> Result<()> {
    let cfg = load_config(common)?;
    let mut trainer = match checkpoint {
        Some(p) => Trainer::resume(&cfg, &Checkpoint::load(p)?)?,
        None => Trainer::new(&cfg)?,
    };
    let target = trainer.step + updates.unwrap_or(cfg.schedule.updates as u64);
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.toml"), toml::to_string(&cfg)?)?;
    let log = trainer.run(target, Some(&cfg.output_dir))?;
    if let Some(last) = log.last() {
        eprintln!(
            "step {}: return {:.4}, links {:.2}, tokens {:.0}",
            last.step, last.mean_episode_return, last.stats.mean_active_links, last.mean_tokens
        );
    }
    eprintln!("checkpoint written to {}", cfg.output_dir.join("checkpoint_final.json").display());
    Ok(())
}

fn eval(common: &Common, checkpoint: Option<&Path>, topology: &str, reference: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let choice: TopologyChoice = topology.parse()?;
    let tasks = cfg.evaluation_tasks()?;
    let swarm = cfg.build_swarm()?;
    let dcfg = cfg.debate_config()?;
    let mut holder = PolicyHolder::new(choice, cfg.n(), load_controller(checkpoint)?)?;
    let mut policy = holder.policy();
    let (mut metrics, transcripts) = evaluate(&choice.to_string(), &tasks, &swarm, policy.as_mut(), &dcfg, cfg.seed)?;
    if let Some(r) = reference {
        metrics = metrics.with_reference(&Metrics::load(r)?, &r.display().to_string())?;
    }
    let dir = cfg.output_dir.join(format!("eval_{choice}").replace(':', "_"));
    std::fs::create_dir_all(&dir)?;
    write_transcripts(dir.join("transcripts.jsonl"), &transcripts)?;
    metrics.save(dir.join("metrics.json"))?;
    print!("{}", render_metrics(&metrics));
    eprintln!("metrics and transcripts written to {}", dir.display());
    Ok(())
}

fn find_task(tasks: Vec<DebateTask>, id: &str) -> Result<DebateTask> {
    tasks
        .into_iter()
        .find(|t| t.id == id)
        .ok_or_else(|| topodebate::Error::UnknownTask(id.to_string()).into())
}

fn debate(common: &Common, checkpoint: Option<&Path>, topology: &str, task_id: &str, json: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let choice: TopologyChoice = topology.parse()?;
    let tasks = match &cfg.dataset {
        Some(p) => load_tasks(p)?,
        None => cfg.evaluation_tasks()?,
    };
    let task = find_task(tasks, task_id)?;
    let swarm = cfg.build_swarm()?;
    let mut holder = PolicyHolder::new(choice, cfg.n(), load_controller(checkpoint)?)?;
    let mut policy = holder.policy();
    let out = run_episode(&task, &swarm, policy.as_mut(), &cfg.debate_config()?, cfg.seed)?;
    if json {
        print_json(&out.transcript)
    } else {
        print!("{}", render_transcript(&out.transcript));
        Ok(())
    }
}

fn recompute(transcripts: &Path, metrics: Option<&Path>, reference: Option<&Path>) -> Result<()> {
    let ts = read_transcripts(transcripts)?;
    let stored = metrics.map(Metrics::load).transpose()?;
    let run = stored.as_ref().map_or_else(|| "recomputed".to_string(), |m| m.run.clone());
    let mut m = metrics_from_transcripts(&run, &ts)?;
    let reference = reference.map(|p| p.to_path_buf()).or_else(|| stored.as_ref().and_then(|s| s.reference.as_ref()).map(|r| PathBuf::from(&r.path)));
    if let Some(r) = reference {
        m = m.with_reference(&Metrics::load(&r)?, &r.display().to_string())?;
    }
    print_json(&m)?;
    if let Some(s) = stored {
        if s != m {
            bail!("recomputed metrics differ from {}", metrics.expect("stored implies path").display());
        }
        eprintln!("metrics reproduced exactly");
    }
    Ok(())
}

fn oracle(common: &Common, learning: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let lc: LearningConfig = match learning {
        Some(p) => toml::from_str(&std::fs::read_to_string(p)?)?,
        None => LearningConfig::default(),
    };
    let report = oracle_learning(&cfg, &lc)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("learning_report.json"), serde_json::to_string_pretty(&report)?)?;
    for r in &report.runs {
        println!(
            "B={:>2} seed={:>2}  acc {:.3} vs full {:.3}  tokens {:.1}%  links {:.2}  {}",
            r.budget,
            r.seed,
            r.rumad.accuracy,
            r.full.accuracy,
            100.0 * r.token_ratio,
            r.rumad.mean_active_links,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    println!("overall: {}", if report.passed { "PASS" } else { "FAIL" });
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { LevelFilter::INFO } else { LevelFilter::WARN };
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(level).init();
    match &cli.command {
        Command::Train { common, checkpoint, updates } => train(common, checkpoint.as_deref(), *updates),
        Command::Eval { common, checkpoint, topology, reference } => {
            eval(common, checkpoint.as_deref(), topology, reference.as_deref())
        }
        Command::Compare { runs, json } => {
            let metrics = runs.iter().map(Metrics::load).collect::<Result<Vec<_>, _>>()?;
            let rows = compare(&metrics)?;
            if *json {
                print_json(&rows)
            } else {
                print!("{}", render_comparison(&rows));
                Ok(())
            }
        }
        Command::Debate { common, checkpoint, topology, task, json } => {
            debate(common, checkpoint.as_deref(), topology, task, *json)
        }
        Command::Recompute { transcripts, metrics, reference } => {
            recompute(transcripts, metrics.as_deref(), reference.as_deref())
        }
        Command::Oracle { common, learning } => oracle(common, learning.as_deref()),
    }
}
