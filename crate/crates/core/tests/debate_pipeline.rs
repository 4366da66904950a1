mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{activation_weights, choice_task, scripted_swarm, ScriptedAgent};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topodebate::agents::{AgentBackend, AttachedEmbedder, BackendError, Generation, GenerationRequest};
use topodebate::controller::Controller;
use topodebate::debate::{
    run_episode, synthetic_choice_tasks, ControllerPolicy, DebateConfig, PolicyDecision, ScriptedPolicy, Swarm,
    TopologyPolicy,
};
use topodebate::harness::RunConfig;
use topodebate::observation::Observation;
use topodebate::topology::WeightMatrix;

fn sim_swarm() -> Swarm {
    RunConfig::default().build_swarm().unwrap()
}

/// Fresh uniform weights every round.
struct RandomPolicy(ChaCha8Rng);

impl TopologyPolicy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, _round: usize, obs: &Observation) -> topodebate::Result<PolicyDecision> {
        let n = (obs.len() as f64).sqrt() as usize;
        let rng = &mut self.0;
        let w = WeightMatrix::from_fn(n, |_, _| rng.random_range(0.01..0.99))?;
        Ok(PolicyDecision { weights: w, action: None })
    }
}

#[test]
fn confident_swarm_spends_nothing_after_initialization() {
    let swarm = sim_swarm();
    let cfg = DebateConfig::default();
    let w = WeightMatrix::uniform(6, 0.1, 0.9).unwrap();
    let mut policy = ScriptedPolicy { schedule: vec![w; 5] };
    let task = &synthetic_choice_tasks(1, 3)[0];
    let t = run_episode(task, &swarm, &mut policy, &cfg, 11).unwrap().transcript;
    assert_eq!(t.rounds[0].tokens, 1200);
    for r in &t.rounds[1..] {
        assert_eq!(r.tokens, 0);
        assert!(r.responses.iter().all(|a| a.reused));
        assert_eq!(r.activation.count_active(), 0);
    }
    assert_eq!(t.total_tokens, 1200);
    assert_eq!(t.final_answer, t.rounds[0].majority);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn token_accounting_is_conserved(seed in any::<u64>(), task_seed in any::<u64>()) {
        let swarm = sim_swarm();
        let cfg = DebateConfig::default();
        let task = &synthetic_choice_tasks(1, task_seed)[0];
        let mut policy = RandomPolicy(ChaCha8Rng::seed_from_u64(seed));
        let t = run_episode(task, &swarm, &mut policy, &cfg, seed).unwrap().transcript;
        let mut sum = 0;
        for r in &t.rounds {
            let fresh = r.responses.iter().filter(|a| !a.reused).count() as u64;
            prop_assert_eq!(r.tokens, 200 * fresh);
            prop_assert_eq!(r.tokens, r.responses.iter().map(|a| a.tokens_generated).sum::<u64>());
            prop_assert_eq!(fresh as usize, r.activation.count_active());
            sum += r.tokens;
        }
        prop_assert_eq!(t.total_tokens, sum);
    }
}

/// Fails every call from `fail_from_round` on.
struct Flaky {
    inner: ScriptedAgent,
    fail_from_round: usize,
    calls: AtomicUsize,
}

impl AgentBackend for Flaky {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Generation, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if req.round >= self.fail_from_round {
            return Err(BackendError::Status { code: 503, body: "down".into() });
        }
        self.inner.generate(req)
    }
}

#[test]
fn failing_agent_is_absorbed_and_later_reuses_last_good_text() {
    let flaky = Arc::new(Flaky {
        inner: ScriptedAgent { answers: vec!["C"], tokens: 10 },
        fail_from_round: 1,
        calls: AtomicUsize::new(0),
    });
    let mut agents: Vec<Arc<dyn AgentBackend>> = vec![flaky.clone()];
    for _ in 0..3 {
        agents.push(Arc::new(ScriptedAgent { answers: vec!["D"], tokens: 10 }));
    }
    let swarm = Swarm::new(agents, Arc::new(AttachedEmbedder)).unwrap();
    let cfg = DebateConfig { rounds: 3, ..DebateConfig::default() };
    let mut policy = ScriptedPolicy { schedule: vec![activation_weights(4, &[0, 1]), activation_weights(4, &[1])] };
    let t = run_episode(&choice_task("f", "D"), &swarm, &mut policy, &cfg, 1).unwrap().transcript;

    let r1 = &t.rounds[1].responses[0];
    assert!(r1.failed && !r1.reused);
    assert_eq!(r1.answer, None);
    assert_eq!(r1.tokens_generated, 0);
    // round 2: agent 0 is pruned and carries its round-0 text forward
    let r2 = &t.rounds[2].responses[0];
    assert!(r2.reused);
    assert_eq!(r2.answer.as_deref(), Some("C"));
    assert_eq!(t.regeneration_pattern(), vec![vec![0, 1, 2, 3], vec![1], vec![1]]);
    assert_eq!(t.rounds[1].tokens, 10);
    assert_eq!(t.final_answer.as_deref(), Some("D"));
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 2);
}

#[test]
fn no_activation_ablation_regenerates_everyone() {
    let swarm = scripted_swarm(vec![vec!["A"], vec!["B"], vec!["B"]], 5);
    let mut cfg = DebateConfig { rounds: 3, ..DebateConfig::default() };
    cfg.ablations.no_activation = true;
    let w = WeightMatrix::uniform(3, 0.1, 0.9).unwrap();
    let mut policy = ScriptedPolicy { schedule: vec![w; 2] };
    let t = run_episode(&choice_task("a", "B"), &swarm, &mut policy, &cfg, 0).unwrap().transcript;
    assert_eq!(t.regeneration_pattern(), vec![vec![0, 1, 2]; 3]);
    assert_eq!(t.total_tokens, 45);
}

fn rewards_under(ablate: impl Fn(&mut DebateConfig)) -> (Vec<f64>, Vec<f64>, f64, Vec<bool>) {
    let swarm = sim_swarm();
    let mut cfg = DebateConfig::default();
    ablate(&mut cfg);
    let controller = Controller::new(6, 16, 5).unwrap();
    let mut policy = ControllerPolicy::stochastic(&controller, 9);
    let task = &synthetic_choice_tasks(1, 8)[0];
    let out = run_episode(task, &swarm, &mut policy, &cfg, 4).unwrap();
    let round: Vec<f64> = out.transcript.rounds[1..].iter().map(|r| r.reward.unwrap().total).collect();
    let got: Vec<f64> = out.transitions.iter().map(|t| t.reward).collect();
    let dones = out.transitions.iter().map(|t| t.done).collect();
    (round, got, out.transcript.episode_reward.unwrap().total, dones)
}

#[test]
fn episode_reward_lands_on_the_terminal_step() {
    let (round, got, ep, dones) = rewards_under(|_| {});
    assert_eq!(got.len(), 5);
    assert_eq!(dones, vec![false, false, false, false, true]);
    assert_eq!(&got[..4], &round[..4]);
    assert_eq!(got[4], round[4] + ep);
}

#[test]
fn reward_ablations() {
    let (round, got, _, _) = rewards_under(|c| c.ablations.no_episode_reward = true);
    assert_eq!(got, round);
    let (_, got, ep, _) = rewards_under(|c| c.ablations.no_round_reward = true);
    assert!(got.iter().all(|&r| r == ep));
}

#[test]
fn controller_actions_are_recorded_for_training_only() {
    let swarm = sim_swarm();
    let cfg = DebateConfig::default();
    let controller = Controller::new(6, 16, 5).unwrap();
    let task = &synthetic_choice_tasks(1, 2)[0];
    let mut det = ControllerPolicy::deterministic(&controller);
    let a = run_episode(task, &swarm, &mut det, &cfg, 3).unwrap();
    let b = run_episode(task, &swarm, &mut det, &cfg, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.transitions.iter().all(|t| t.noise.iter().all(|&e| e == 0.0)));
    let mut scripted = ScriptedPolicy { schedule: vec![WeightMatrix::uniform(6, 0.5, 0.5).unwrap(); 5] };
    assert!(run_episode(task, &swarm, &mut scripted, &cfg, 3).unwrap().transitions.is_empty());
}

#[test]
fn short_script_aborts_with_partial_transcript() {
    let swarm = sim_swarm();
    let cfg = DebateConfig::default();
    let mut policy = ScriptedPolicy { schedule: vec![WeightMatrix::uniform(6, 0.5, 0.5).unwrap(); 2] };
    let task = &synthetic_choice_tasks(1, 2)[0];
    match run_episode(task, &swarm, &mut policy, &cfg, 3) {
        Err(topodebate::Error::EpisodeAborted { partial, .. }) => {
            assert_eq!(partial.rounds.len(), 3);
            assert!(partial.error.is_some());
        }
        other => panic!("expected an aborted episode, got {other:?}"),
    }
}

#[test]
fn same_seed_pairs_rounds_across_topologies() {
    // stage 1 depends only on the episode seed, so every topology starts from the same answers
    let swarm = sim_swarm();
    let cfg = DebateConfig::default();
    let task = &synthetic_choice_tasks(1, 6)[0];
    let mut full = ScriptedPolicy { schedule: vec![WeightMatrix::uniform(6, 0.5, 0.05).unwrap(); 5] };
    let mut none = ScriptedPolicy { schedule: vec![WeightMatrix::uniform(6, 0.05, 0.9).unwrap(); 5] };
    let a = run_episode(task, &swarm, &mut full, &cfg, 21).unwrap().transcript;
    let b = run_episode(task, &swarm, &mut none, &cfg, 21).unwrap().transcript;
    assert_eq!(a.rounds[0], b.rounds[0]);
}
