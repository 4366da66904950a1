//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topodebate::agents::{AgentBackend, AttachedEmbedder, BackendError, Generation, GenerationRequest};
use topodebate::controller::{sample_weights, sigmoid, Controller};
use topodebate::debate::{AnswerFormat, DebateTask, Swarm};
use topodebate::observation::Observation;
use topodebate::ppo::{update_step, Optimizer, RolloutBuffer, TrainConfig, Transition};
use topodebate::topology::{BudgetConfig, WeightMatrix};

/// Brute-force GAE: `A_t = sum_l (gamma lambda)^l delta_{t+l}`, truncated at
/// episode ends, with `bootstrap` after the last step when it is not terminal.
pub fn oracle_gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let len = rewards.len();
    let next_value = |t: usize| -> f64 {
        if dones[t] {
            0.0
        } else if t + 1 == len {
            bootstrap
        } else {
            values[t + 1]
        }
    };
    (0..len)
        .map(|t| {
            let mut total = 0.0;
            let mut k = t;
            loop {
                let delta = rewards[k] + gamma * next_value(k) - values[k];
                total += (gamma * lambda).powi((k - t) as i32) * delta;
                if dones[k] || k + 1 == len {
                    break;
                }
                k += 1;
            }
            total
        })
        .collect()
}

/// Exhaustive tally. Ties go to the label whose first holder has the lowest index.
pub fn oracle_vote(answers: &[Option<String>]) -> Option<String> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, a) in answers.iter().enumerate() {
        if let Some(a) = a {
            let e = counts.entry(a.as_str()).or_insert((0, i));
            e.0 += 1;
        }
    }
    let best = counts.values().map(|c| c.0).max()?;
    counts.into_iter().filter(|(_, c)| c.0 == best).min_by_key(|(_, c)| c.1).map(|(label, _)| label.to_string())
}

pub fn choice_task(id: &str, answer: &str) -> DebateTask {
    DebateTask {
        id: id.into(),
        question: "Which instrument is used to measure air pressure?".into(),
        format: AnswerFormat::Choice,
        choices: Some(vec!["A) thermometer".into(), "B) hygrometer".into(), "C) anemometer".into(), "D) barometer".into()]),
        answer: answer.into(),
    }
}

/// Agent that answers from a fixed per-round script and attaches a one-hot embedding.
pub struct ScriptedAgent {
    /// `answers[round]`; the last entry repeats.
    pub answers: Vec<&'static str>,
    pub tokens: u64,
}

impl AgentBackend for ScriptedAgent {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, BackendError> {
        let label = self.answers[req.round.min(self.answers.len() - 1)];
        let name = match label {
            "A" => "thermometer",
            "B" => "hygrometer",
            "C" => "anemometer",
            _ => "barometer",
        };
        let text = if req.round == 0 {
            format!("Pressure readings come from a dedicated instrument, so I pick \\boxed{{{label}) {name}.}}")
        } else {
            format!(
                "Having read {} other solution(s), my answer is \\boxed{{{label}) {name}.}}",
                req.visible.len()
            )
        };
        let embedding = ["A", "B", "C", "D"].iter().map(|l| if *l == label { 1.0 } else { 0.0 }).collect();
        Ok(Generation { text, completion_tokens: self.tokens, prompt_tokens: 0, usage_estimated: false, embedding: Some(embedding) })
    }
}

pub fn scripted_swarm(scripts: Vec<Vec<&'static str>>, tokens: u64) -> Swarm {
    let agents: Vec<Arc<dyn AgentBackend>> =
        scripts.into_iter().map(|answers| Arc::new(ScriptedAgent { answers, tokens }) as Arc<dyn AgentBackend>).collect();
    Swarm::new(agents, Arc::new(AttachedEmbedder)).unwrap()
}

/// Weights that activate exactly the agents in `active`.
pub fn activation_weights(n: usize, active: &[usize]) -> WeightMatrix {
    WeightMatrix::from_fn(n, |i, j| match (i == j, active.contains(&i)) {
        (true, true) => 0.05,
        (true, false) => 0.9,
        (false, _) => 0.5,
    })
    .unwrap()
}

/// One-step bandit on two agents: reward 1 when the sampled `w[0][1]` exceeds
/// 0.5, else 0. Returns the deterministic `w[0][1]` before and after training.
pub fn run_bandit(updates: usize, cfg: &TrainConfig, seed: u64) -> (f64, f64) {
    let mut controller = Controller::new(2, cfg.hidden_dim, seed).unwrap();
    let mut optimizer = Optimizer::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb4);
    let obs = Observation(vec![1.0, 0.5, 0.5, 1.0]);
    let budget = BudgetConfig::new(2);
    let weight = |c: &Controller| sigmoid(c.actor_forward(&obs).unwrap().mu[1]);
    let before = weight(&controller);
    for _ in 0..updates {
        let mut buffer = RolloutBuffer::default();
        while buffer.len() < cfg.rollout_length {
            let gp = controller.actor_forward(&obs).unwrap();
            let a = sample_weights(&gp, &mut rng).unwrap();
            buffer.transitions.push(Transition {
                obs: obs.clone(),
                reward: if a.w.get(0, 1) > 0.5 { 1.0 } else { 0.0 },
                value: controller.critic_forward(&obs).unwrap(),
                z: a.z,
                noise: a.noise,
                old_log_prob: a.log_prob,
                done: true,
                active_links: 0,
            });
        }
        update_step(&buffer, &mut controller, &mut optimizer, cfg, &budget, &mut rng).unwrap();
    }
    (before, weight(&controller))
}

#[derive(Debug, Clone)]
pub struct RecordedRequest {
    pub path: String,
    pub headers: BTreeMap<String, String>,
    pub body: serde_json::Value,
}

/// Minimal HTTP/1.1 server answering one request per connection from `script`
/// (status, JSON body). Returns the base URL and a handle yielding the requests.
pub fn stub_server(script: Vec<(u16, String)>) -> (String, JoinHandle<Vec<RecordedRequest>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in script {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut headers = BTreeMap::new();
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
                }
            }
            let len: usize = headers.get("content-length").and_then(|v| v.parse().ok()).unwrap_or(0);
            let mut raw = vec![0u8; len];
            reader.read_exact(&mut raw).unwrap();
            let reason = if status == 200 { "OK" } else { "Error" };
            let reply = format!(
                "HTTP/1.1 {status} {reason}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
            stream.flush().unwrap();
            seen.push(RecordedRequest { path, headers, body: serde_json::from_slice(&raw).unwrap_or(serde_json::Value::Null) });
        }
        seen
    });
    (base, handle)
}

/// Gradients whose magnitude is below this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

/// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over
/// every actor and critic parameter, using central differences of the joint loss.
pub fn gradient_check(
    controller: &Controller,
    transitions: &[Transition],
    cfg: &TrainConfig,
    budget: &BudgetConfig,
    step: f64,
) -> f64 {
    use topodebate::ppo::{compute_gae, loss_and_gradients, loss_value, normalize_advantages, Minibatch};
    let buffer = RolloutBuffer { transitions: transitions.to_vec(), bootstrap_value: 0.0 };
    let (adv, targets) = compute_gae(&buffer, cfg).unwrap();
    let batch = Minibatch {
        transitions: buffer.transitions.iter().collect(),
        advantages: normalize_advantages(&adv, cfg.advantage_std_floor),
        targets,
    };
    let (_, ga, gc) = loss_and_gradients(controller, &batch, cfg, budget).unwrap();
    let mut worst: f64 = 0.0;
    for (critic, analytic) in [(false, ga.flat()), (true, gc.flat())] {
        for (k, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut c = controller.clone();
                let net = if critic { &mut c.critic } else { &mut c.actor };
                *net.param_mut(k) += delta;
                loss_value(&c, &batch, cfg, budget).unwrap()
            };
            let numeric = (eval(step) - eval(-step)) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}
