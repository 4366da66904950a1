//! Round and episode rewards.
//!
//! Round reward: `a1 Acc + a2 Cons + a3 Prog + a4 Eff + a5 Impr - a6 Spar`.
//! Episode reward: `b1 Acc + b2 Cons + b3 Eff + b4 Impr`.

use serde::{Deserialize, Serialize};

use crate::observation::SimilarityMatrix;
use crate::topology::{Tier, TierMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// accuracy, consensus, progress, efficiency, improvement, sparsity
    pub alpha: [f64; 6],
    /// accuracy, consensus, efficiency, improvement
    pub beta: [f64; 4],
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { alpha: [1.0, 0.3, 0.1, 0.2, 1.0, 0.1], beta: [2.0, 0.5, 0.3, 0.2] }
    }
}

/// Shaping choices that the reward formulas leave open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardShaping {
    /// Geometric decay of the progress bonus per round after the first.
    pub progress_decay: f64,
    /// Weight of answer agreement in consensus; the rest goes to mean similarity.
    pub consensus_agreement_share: f64,
    /// Expected generated tokens per agent answer; baseline is `n * this` per round.
    pub expected_answer_tokens: u64,
    /// Expense of a Critical, Reference and Background edge.
    pub sparsity_costs: [f64; 3],
}

impl Default for RewardShaping {
    fn default() -> Self {
        Self { progress_decay: 0.5, consensus_agreement_share: 0.5, expected_answer_tokens: 256, sparsity_costs: [1.0, 0.6, 0.3] }
    }
}

impl RewardShaping {
    pub fn tier_cost(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Critical => self.sparsity_costs[0],
            Tier::Reference => self.sparsity_costs[1],
            Tier::Background => self.sparsity_costs[2],
            Tier::Invisible => 0.0,
        }
    }
}

/// Everything the reward terms need about one finished round.
#[derive(Debug, Clone)]
pub struct RoundOutcome<'a> {
    pub round: usize,
    pub majority: Option<&'a str>,
    pub previous_majority: Option<&'a str>,
    pub ground_truth: &'a str,
    pub answers: &'a [Option<String>],
    pub similarity: &'a SimilarityMatrix,
    pub tokens: u64,
    pub tiers: Option<&'a TierMatrix>,
}

impl RoundOutcome<'_> {
    pub fn n(&self) -> usize {
        self.answers.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub accuracy: f64,
    pub consensus: f64,
    pub progress: f64,
    pub efficiency: f64,
    pub improvement: f64,
    pub sparsity: f64,
    pub total: f64,
}

fn correct(answer: Option<&str>, truth: &str) -> bool {
    answer == Some(truth)
}

pub fn accuracy_term(out: &RoundOutcome) -> f64 {
    if correct(out.majority, out.ground_truth) {
        1.0
    } else {
        0.0
    }
}

pub fn consensus_term(out: &RoundOutcome, shaping: &RewardShaping) -> f64 {
    let n = out.n();
    let agreeing = match out.majority {
        Some(m) => out.answers.iter().filter(|a| a.as_deref() == Some(m)).count(),
        None => 0,
    };
    let share = shaping.consensus_agreement_share;
    share * agreeing as f64 / n as f64 + (1.0 - share) * out.similarity.mean_pairwise()
}

pub fn progress_term(out: &RoundOutcome, shaping: &RewardShaping) -> f64 {
    if out.round == 0 {
        return 0.0;
    }
    accuracy_term(out) * shaping.progress_decay.powi(out.round as i32 - 1)
}

pub fn efficiency_term(tokens: u64, baseline_tokens: u64) -> f64 {
    assert!(baseline_tokens > 0, "efficiency baseline must be positive");
    (1.0 - tokens as f64 / baseline_tokens as f64).clamp(0.0, 1.0)
}

/// 1 for a wrong-to-correct transition of the majority answer.
pub fn improvement_term(previous: Option<&str>, current: Option<&str>, truth: &str) -> f64 {
    if !correct(previous, truth) && correct(current, truth) {
        1.0
    } else {
        0.0
    }
}

/// Tier-weighted edge expense normalized by the `n (n - 1)` possible edges.
pub fn sparsity_term(tiers: &TierMatrix, shaping: &RewardShaping) -> f64 {
    let n = tiers.n();
    let expense: f64 = [Tier::Critical, Tier::Reference, Tier::Background]
        .iter()
        .map(|&t| shaping.tier_cost(t) * tiers.count(t) as f64)
        .sum();
    expense / (n * (n - 1)) as f64
}

pub fn combine_round(c: [f64; 6], weights: &RewardWeights) -> RewardBreakdown {
    let a = weights.alpha;
    let [accuracy, consensus, progress, efficiency, improvement, sparsity] = c;
    RewardBreakdown {
        accuracy,
        consensus,
        progress,
        efficiency,
        improvement,
        sparsity,
        total: a[0] * accuracy + a[1] * consensus + a[2] * progress + a[3] * efficiency + a[4] * improvement
            - a[5] * sparsity,
    }
}

pub fn combine_episode(c: [f64; 4], weights: &RewardWeights) -> RewardBreakdown {
    let b = weights.beta;
    let [accuracy, consensus, efficiency, improvement] = c;
    RewardBreakdown {
        accuracy,
        consensus,
        progress: 0.0,
        efficiency,
        improvement,
        sparsity: 0.0,
        total: b[0] * accuracy + b[1] * consensus + b[2] * efficiency + b[3] * improvement,
    }
}

pub fn round_reward(out: &RoundOutcome, weights: &RewardWeights, shaping: &RewardShaping) -> RewardBreakdown {
    let baseline = out.n() as u64 * shaping.expected_answer_tokens;
    combine_round(
        [
            accuracy_term(out),
            consensus_term(out, shaping),
            progress_term(out, shaping),
            efficiency_term(out.tokens, baseline),
            improvement_term(out.previous_majority, out.majority, out.ground_truth),
            out.tiers.map_or(0.0, |t| sparsity_term(t, shaping)),
        ],
        weights,
    )
}

/// Terminal reward. `final_out.previous_majority` must hold the round-0
/// majority; `episode_tokens` covers every round including initialization.
pub fn episode_reward(
    final_out: &RoundOutcome,
    rounds: usize,
    episode_tokens: u64,
    weights: &RewardWeights,
    shaping: &RewardShaping,
) -> RewardBreakdown {
    let baseline = rounds as u64 * final_out.n() as u64 * shaping.expected_answer_tokens;
    combine_episode(
        [
            accuracy_term(final_out),
            consensus_term(final_out, shaping),
            efficiency_term(episode_tokens, baseline),
            improvement_term(final_out.previous_majority, final_out.majority, final_out.ground_truth),
        ],
        weights,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{pairwise_similarity, ReasoningEmbedding, SimilarityConfig};
    use crate::topology::{quantize_tiers, WeightMatrix};

    fn labels(s: &str) -> Vec<Option<String>> {
        s.chars().map(|c| Some(c.to_string())).collect()
    }

    fn one_hot(k: usize, d: usize) -> ReasoningEmbedding {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        ReasoningEmbedding::new(v)
    }

    fn outcome<'a>(answers: &'a [Option<String>], sim: &'a SimilarityMatrix, majority: &'a str, truth: &'a str, round: usize) -> RoundOutcome<'a> {
        RoundOutcome { round, majority: Some(majority), previous_majority: None, ground_truth: truth, answers, similarity: sim, tokens: 0, tiers: None }
    }

    #[test]
    fn accuracy_examples() {
        let a = labels("DDDCCA");
        let sim = pairwise_similarity(&vec![one_hot(0, 2); 6], &a, &SimilarityConfig::default()).unwrap();
        assert_eq!(accuracy_term(&outcome(&a, &sim, "D", "D", 1)), 1.0);
        assert_eq!(accuracy_term(&outcome(&a, &sim, "C", "D", 1)), 0.0);
        // three of six is a plurality here
        let a = labels("DDDCBA");
        assert_eq!(accuracy_term(&outcome(&a, &sim, "D", "D", 1)), 1.0);
    }

    #[test]
    fn consensus_examples() {
        let shaping = RewardShaping::default();
        let a = labels("AAAA");
        let sim = pairwise_similarity(&vec![one_hot(0, 3); 4], &a, &SimilarityConfig::default()).unwrap();
        assert_eq!(consensus_term(&outcome(&a, &sim, "A", "A", 1), &shaping), 1.0);

        // 3/3 split, orthogonal groups, lambda = 0
        let a = labels("AAABBB");
        let emb: Vec<_> = (0..6).map(|i| one_hot(i / 3, 2)).collect();
        let sim = pairwise_similarity(&emb, &a, &SimilarityConfig { lambda: 0.0 }).unwrap();
        let mut same = 0.0;
        let mut pairs = 0.0;
        for i in 0..6 {
            for j in i + 1..6 {
                pairs += 1.0;
                if a[i] == a[j] {
                    same += 1.0;
                }
            }
        }
        let expect = 0.5 * 0.5 + 0.5 * same / pairs;
        assert!((consensus_term(&outcome(&a, &sim, "A", "A", 1), &shaping) - expect).abs() < 1e-15);
        assert!((expect - (0.25 + 0.5 * 6.0 / 15.0)).abs() < 1e-15);

        let a = labels("AB");
        let sim = pairwise_similarity(&[one_hot(0, 2), one_hot(1, 2)], &a, &SimilarityConfig { lambda: 1.0 }).unwrap();
        assert_eq!(consensus_term(&outcome(&a, &sim, "A", "A", 1), &shaping), 0.25);
    }

    #[test]
    fn progress_examples() {
        let shaping = RewardShaping::default();
        let a = labels("AA");
        let sim = pairwise_similarity(&vec![one_hot(0, 2); 2], &a, &SimilarityConfig::default()).unwrap();
        assert_eq!(progress_term(&outcome(&a, &sim, "A", "B", 2), &shaping), 0.0);
        assert_eq!(progress_term(&outcome(&a, &sim, "A", "A", 1), &shaping), 1.0);
        assert_eq!(progress_term(&outcome(&a, &sim, "A", "A", 3), &shaping), 0.25);
    }

    #[test]
    fn efficiency_examples() {
        assert_eq!(efficiency_term(0, 1200), 1.0);
        assert_eq!(efficiency_term(1200, 1200), 0.0);
        assert_eq!(efficiency_term(600, 1200), 0.5);
        assert_eq!(efficiency_term(5000, 1200), 0.0);
    }

    #[test]
    fn improvement_examples() {
        assert_eq!(improvement_term(Some("C"), Some("D"), "D"), 1.0);
        assert_eq!(improvement_term(None, Some("D"), "D"), 1.0);
        assert_eq!(improvement_term(Some("D"), Some("D"), "D"), 0.0);
        assert_eq!(improvement_term(Some("D"), Some("C"), "D"), 0.0);
    }

    #[test]
    fn sparsity_examples() {
        let shaping = RewardShaping::default();
        let w = WeightMatrix::uniform(3, 0.05, 0.5).unwrap();
        assert_eq!(sparsity_term(&quantize_tiers(&w), &shaping), 0.0);
        let w = WeightMatrix::uniform(5, 0.9, 0.5).unwrap();
        assert_eq!(sparsity_term(&quantize_tiers(&w), &shaping), 1.0);
        let w = WeightMatrix::from_fn(3, |i, j| match (i, j) {
            (0, 1) => 0.6,
            (2, 1) => 0.2,
            _ => 0.05,
        })
        .unwrap();
        assert!((sparsity_term(&quantize_tiers(&w), &shaping) - 1.3 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn weighted_sums() {
        let w = RewardWeights::default();
        assert_eq!(combine_round([0.0; 6], &w).total, 0.0);
        assert!((combine_round([1.0, 1.0, 1.0, 1.0, 1.0, 0.0], &w).total - 2.6).abs() < 1e-12);
        assert!((combine_round([0.0, 0.0, 0.0, 0.0, 0.0, 1.0], &w).total + 0.1).abs() < 1e-12);
        assert_eq!(combine_episode([0.0; 4], &w).total, 0.0);
        assert!((combine_episode([1.0; 4], &w).total - 3.0).abs() < 1e-12);
        assert_eq!(combine_episode([1.0, 0.0, 0.0, 0.0], &w).total, 2.0);
    }

    #[test]
    fn zero_token_stable_correct_round_closed_form() {
        let weights = RewardWeights::default();
        let shaping = RewardShaping::default();
        let a = labels("DDDDDC");
        let emb: Vec<_> = (0..6).map(|i| one_hot(usize::from(i == 5), 2)).collect();
        let sim = pairwise_similarity(&emb, &a, &SimilarityConfig::default()).unwrap();
        let w = WeightMatrix::uniform(6, 0.05, 0.9).unwrap();
        let tiers = quantize_tiers(&w);
        let out = RoundOutcome {
            round: 2,
            majority: Some("D"),
            previous_majority: Some("D"),
            ground_truth: "D",
            answers: &a,
            similarity: &sim,
            tokens: 0,
            tiers: Some(&tiers),
        };
        let r = round_reward(&out, &weights, &shaping);
        let cons = consensus_term(&out, &shaping);
        let expect = weights.alpha[0] + weights.alpha[1] * cons + weights.alpha[2] * 0.5 + weights.alpha[3];
        assert!((r.total - expect).abs() < 1e-15);
        assert_eq!(r.improvement, 0.0);
        assert_eq!(r.sparsity, 0.0);
    }

    #[test]
    fn episode_reward_excludes_in_progress_terms() {
        let weights = RewardWeights::default();
        let shaping = RewardShaping::default();
        let a = labels("DDDDDD");
        let sim = pairwise_similarity(&vec![one_hot(0, 2); 6], &a, &SimilarityConfig::default()).unwrap();
        let tiers = quantize_tiers(&WeightMatrix::uniform(6, 0.9, 0.1).unwrap());
        let out = RoundOutcome {
            round: 5,
            majority: Some("D"),
            previous_majority: Some("C"),
            ground_truth: "D",
            answers: &a,
            similarity: &sim,
            tokens: 1200,
            tiers: Some(&tiers),
        };
        let r = episode_reward(&out, 6, 7200, &weights, &shaping);
        assert_eq!(r.progress, 0.0);
        assert_eq!(r.sparsity, 0.0);
        let eff = 1.0 - 7200.0 / (6.0 * 6.0 * 256.0);
        assert_eq!(r.efficiency, eff);
        assert_eq!(r.total, 2.0 * 1.0 + 0.5 * 1.0 + 0.3 * eff + 0.2 * 1.0);
    }
}
