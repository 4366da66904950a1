mod common;

use common::{gradient_check, oracle_gae, oracle_vote, run_bandit};
use proptest::prelude::*;
use topodebate::controller::Controller;
use topodebate::debate::{majority_vote, synthetic_choice_tasks, run_episode, ControllerPolicy};
use topodebate::harness::RunConfig;
use topodebate::ppo::{gae, TrainConfig};

proptest! {
    #[test]
    fn gae_matches_brute_force(
        steps in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0, any::<bool>()), 1..=10),
        bootstrap in -5.0f64..5.0,
        gamma in 0.0f64..=1.0,
        lambda in 0.0f64..=1.0,
    ) {
        let rewards: Vec<f64> = steps.iter().map(|s| s.0).collect();
        let values: Vec<f64> = steps.iter().map(|s| s.1).collect();
        let dones: Vec<bool> = steps.iter().map(|s| s.2).collect();
        let (adv, targets) = gae(&rewards, &values, &dones, bootstrap, gamma, lambda).unwrap();
        let expected = oracle_gae(&rewards, &values, &dones, bootstrap, gamma, lambda);
        for t in 0..rewards.len() {
            prop_assert!((adv[t] - expected[t]).abs() < 1e-12);
            prop_assert!((targets[t] - adv[t] - values[t]).abs() < 1e-12);
        }
    }
}

#[test]
fn gamma_zero_gives_one_step_td_errors() {
    let (adv, _) = gae(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5], &[false, false, false], 9.0, 0.0, 0.95).unwrap();
    assert_eq!(adv, vec![0.5, 1.5, 2.5]);
}

#[test]
fn majority_vote_matches_exhaustive_tally() {
    let alphabet = [None, Some("A"), Some("B"), Some("C"), Some("D")];
    for len in 0..=6u32 {
        for code in 0..alphabet.len().pow(len) {
            let mut c = code;
            let answers: Vec<Option<String>> = (0..len)
                .map(|_| {
                    let a = alphabet[c % alphabet.len()];
                    c /= alphabet.len();
                    a.map(String::from)
                })
                .collect();
            assert_eq!(majority_vote(&answers).ok(), oracle_vote(&answers), "{answers:?}");
        }
    }
}

#[test]
fn bandit_moves_toward_the_rewarded_side() {
    let cfg = TrainConfig { learning_rate: 1e-3, hidden_dim: 32, ..TrainConfig::default() };
    let (before, after) = run_bandit(200, &cfg, 2);
    assert_eq!(before, 0.5);
    assert!(after > 0.6, "w went from {before} to {after}");
}

#[test]
fn small_network_gradients_match_finite_differences() {
    let cfg = RunConfig::default();
    let swarm = cfg.build_swarm().unwrap();
    let dcfg = cfg.debate_config().unwrap();
    let train = TrainConfig { hidden_dim: 8, budget_sigma_gradient: true, ..TrainConfig::default() };
    let mut controller = Controller::new(6, 8, 3).unwrap();
    // non-zero output layers so every path carries gradient
    for net in [&mut controller.actor, &mut controller.critic] {
        for k in 0..net.num_params() {
            *net.param_mut(k) += 0.05 * ((k * 7919 % 13) as f64 - 6.0) / 6.0;
        }
    }
    let task = &synthetic_choice_tasks(1, 4)[0];
    let mut policy = ControllerPolicy::stochastic(&controller, 6);
    let transitions = run_episode(task, &swarm, &mut policy, &dcfg, 1).unwrap().transitions;
    let worst = gradient_check(&controller, &transitions[..3], &train, &dcfg.budget, 1e-5);
    assert!(worst < 1e-4, "max relative error {worst}");
}
