//! Actor-critic topology controller.
//!
//! The actor maps an [`Observation`] to a diagonal Gaussian over pre-squash
//! edge logits `z`; weights are `sigmoid(z)`. Log-probabilities are taken on
//! `z`, so the squashing Jacobian never enters the PPO ratio. The critic is a
//! separate network with its own input layer.

use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Dense, Gradients, Mlp, Tape};
use crate::observation::Observation;
use crate::topology::WeightMatrix;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const DEFAULT_HIDDEN: usize = 128;

/// Bounds on the actor's log standard deviation; gradients vanish outside.
pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 2.0;

/// Weights are kept this far from 0 and 1 so the open-interval invariant survives saturation.
const WEIGHT_EPS: f64 = 1e-12;

pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(WEIGHT_EPS, 1.0 - WEIGHT_EPS)
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Per-edge Gaussian parameters, row-major `n × n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEdgeParams {
    pub n: usize,
    pub mu: Vec<f64>,
    pub log_sigma: Vec<f64>,
}

impl GaussianEdgeParams {
    pub fn new(n: usize, mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != n * n || sigma.len() != n * n {
            return Err(Error::Shape { expected: n * n, actual: mu.len().min(sigma.len()) });
        }
        if sigma.iter().any(|&s| s.is_nan() || s <= 0.0) {
            return Err(Error::Config("sigma must be strictly positive".into()));
        }
        Ok(Self { n, mu, log_sigma: sigma.iter().map(|s| s.ln()).collect() })
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.log_sigma.iter().map(|s| s.exp()).collect()
    }

    /// Joint log-density of pre-squash logits `z`.
    pub fn log_prob(&self, z: &[f64]) -> f64 {
        gaussian_log_prob(&self.mu, &self.log_sigma, z)
    }
}

pub fn gaussian_log_prob(mu: &[f64], log_sigma: &[f64], z: &[f64]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * PI).ln();
    mu.iter()
        .zip(log_sigma)
        .zip(z)
        .map(|((&m, &ls), &x)| {
            let u = (x - m) / ls.exp();
            -0.5 * u * u - ls - half_log_2pi
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    /// Pre-squash Gaussian samples.
    pub z: Vec<f64>,
    /// Standardized noise, `(z - mu) / sigma`.
    pub noise: Vec<f64>,
    pub w: WeightMatrix,
    pub log_prob: f64,
}

pub fn sample_weights<R: Rng + ?Sized>(gp: &GaussianEdgeParams, rng: &mut R) -> Result<SampledAction> {
    let noise: Vec<f64> = (0..gp.mu.len()).map(|_| rng.sample(StandardNormal)).collect();
    let z: Vec<f64> =
        gp.mu.iter().zip(&gp.log_sigma).zip(&noise).map(|((m, ls), e)| m + ls.exp() * e).collect();
    let w = WeightMatrix::new(gp.n, z.iter().map(|&v| sigmoid(v)).collect())?;
    let log_prob = gp.log_prob(&z);
    Ok(SampledAction { z, noise, w, log_prob })
}

/// The action taken at deployment: `sigmoid(mu)`.
pub fn deterministic_weights(gp: &GaussianEdgeParams) -> Result<WeightMatrix> {
    WeightMatrix::new(gp.n, gp.mu.iter().map(|&m| sigmoid(m)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    n: usize,
    pub actor: Mlp,
    pub critic: Mlp,
}

impl Controller {
    pub fn new(n: usize, hidden: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::DegenerateSwarm(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = n * n;
        let mut actor = Mlp::new(&[d, hidden, hidden, 2 * d], &mut rng);
        let mut critic = Mlp::new(&[d, hidden, hidden, 1], &mut rng);
        actor.zero_output_layer();
        critic.zero_output_layer();
        Ok(Self { n, actor, critic })
    }

    pub fn from_parts(n: usize, actor: Mlp, critic: Mlp) -> Result<Self> {
        let d = n * n;
        for (net, out) in [(&actor, 2 * d), (&critic, 1)] {
            if net.input_dim() != d {
                return Err(Error::Shape { expected: d, actual: net.input_dim() });
            }
            if net.output_dim() != out {
                return Err(Error::Shape { expected: out, actual: net.output_dim() });
            }
        }
        Ok(Self { n, actor, critic })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.len() != self.n * self.n {
            return Err(Error::Shape { expected: self.n * self.n, actual: obs.len() });
        }
        Ok(())
    }

    pub fn actor_forward(&self, obs: &Observation) -> Result<GaussianEdgeParams> {
        let mut tape = Tape::new();
        self.actor_forward_recorded(obs, &mut tape)
    }

    pub fn actor_forward_recorded(&self, obs: &Observation, tape: &mut Tape) -> Result<GaussianEdgeParams> {
        self.check_obs(obs)?;
        self.actor.forward_recorded(obs.as_slice(), tape)?;
        let d = self.n * self.n;
        let out = tape.output();
        let log_sigma = out[d..].iter().map(|v| v.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX)).collect();
        Ok(GaussianEdgeParams { n: self.n, mu: out[..d].to_vec(), log_sigma })
    }

    pub fn critic_forward(&self, obs: &Observation) -> Result<f64> {
        let mut tape = Tape::new();
        self.critic_forward_recorded(obs, &mut tape)
    }

    pub fn critic_forward_recorded(&self, obs: &Observation, tape: &mut Tape) -> Result<f64> {
        self.check_obs(obs)?;
        self.critic.forward_recorded(obs.as_slice(), tape)?;
        Ok(tape.output()[0])
    }

    /// Accumulates actor gradients from upstream `d/d mu` and `d/d log_sigma`.
    pub fn actor_backward(&self, tape: &Tape, d_mu: &[f64], d_log_sigma: &[f64], grads: &mut Gradients) -> Result<()> {
        if !tape.is_recorded() {
            return Err(Error::BackwardBeforeForward);
        }
        let raw = &tape.output()[d_mu.len()..];
        let mut d_out = Vec::with_capacity(d_mu.len() + d_log_sigma.len());
        d_out.extend_from_slice(d_mu);
        d_out.extend(d_log_sigma.iter().zip(raw).map(|(g, r)| if (LOG_SIGMA_MIN..=LOG_SIGMA_MAX).contains(r) { *g } else { 0.0 }));
        self.actor.backward(tape, &d_out, grads).map(|_| ())
    }

    pub fn critic_backward(&self, tape: &Tape, d_value: f64, grads: &mut Gradients) -> Result<()> {
        self.critic.backward(tape, &[d_value], grads).map(|_| ())
    }

    pub fn to_checkpoint(&self, rng_seed: u64, train_step: u64) -> Checkpoint {
        let dump = |m: &Mlp| m.layers().iter().map(|l| LayerParams { weights: l.weights.clone(), biases: l.biases.clone() }).collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            n_agents: self.n,
            layer_shapes: LayerShapes { actor: self.actor.shapes(), critic: self.critic.shapes() },
            actor: dump(&self.actor),
            critic: dump(&self.critic),
            rng_seed,
            train_step,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        let load = |shapes: &[[usize; 2]], params: &[LayerParams]| -> Result<Mlp> {
            if shapes.len() != params.len() {
                return Err(Error::Shape { expected: shapes.len(), actual: params.len() });
            }
            let layers = shapes
                .iter()
                .zip(params)
                .map(|(&[in_dim, out_dim], p)| Dense { in_dim, out_dim, weights: p.weights.clone(), biases: p.biases.clone() })
                .collect();
            Mlp::from_layers(layers)
        };
        let actor = load(&ckpt.layer_shapes.actor, &ckpt.actor)?;
        let critic = load(&ckpt.layer_shapes.critic, &ckpt.critic)?;
        Self::from_parts(ckpt.n_agents, actor, critic)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShapes {
    pub actor: Vec<[usize; 2]>,
    pub critic: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// On-disk controller state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub n_agents: usize,
    pub layer_shapes: LayerShapes,
    pub actor: Vec<LayerParams>,
    pub critic: Vec<LayerParams>,
    pub rng_seed: u64,
    pub train_step: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        if let Some(dir) = path.as_ref().parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{quantize_tiers, Tier};

    fn obs(n: usize, seed: u64) -> Observation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Observation((0..n * n).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn zero_heads_give_unit_gaussian_and_zero_value() {
        let c = Controller::new(4, 16, 1).unwrap();
        for s in 0..3 {
            let gp = c.actor_forward(&obs(4, s)).unwrap();
            assert!(gp.mu.iter().all(|&m| m == 0.0));
            assert!(gp.sigma().iter().all(|&s| s == 1.0));
            assert_eq!(c.critic_forward(&obs(4, s)).unwrap(), 0.0);
        }
    }

    #[test]
    fn forward_is_reproducible_for_a_seed() {
        let mut a = Controller::new(3, 16, 42).unwrap();
        let mut b = Controller::new(3, 16, 42).unwrap();
        // give the heads non-zero weights so the check is not vacuous
        for c in [&mut a, &mut b] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for l in c.actor.layers_mut().iter_mut().chain(c.critic.layers_mut()) {
                l.weights.iter_mut().for_each(|w| *w += rng.random_range(-0.1..0.1));
            }
        }
        let o = obs(3, 9);
        assert_eq!(a.actor_forward(&o).unwrap(), b.actor_forward(&o).unwrap());
        assert_eq!(a.critic_forward(&o).unwrap().to_bits(), b.critic_forward(&o).unwrap().to_bits());
    }

    #[test]
    fn wrong_observation_length_rejected() {
        let c = Controller::new(3, 8, 0).unwrap();
        assert!(matches!(c.actor_forward(&Observation(vec![0.0; 4])), Err(Error::Shape { expected: 9, actual: 4 })));
        assert!(c.critic_forward(&Observation(vec![0.0; 10])).is_err());
    }

    fn randomized(n: usize, seed: u64) -> Controller {
        let mut c = Controller::new(n, 12, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for l in c.actor.layers_mut().iter_mut().chain(c.critic.layers_mut()) {
            l.weights.iter_mut().for_each(|w| *w += rng.random_range(-0.3..0.3));
            l.biases.iter_mut().for_each(|b| *b += rng.random_range(-0.1..0.1));
        }
        c
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let c = randomized(3, 2);
        let o = obs(3, 4);
        let h = 1e-5;
        let d_out_actor: Vec<f64> = (0..18).map(|k| ((k * 7) % 5) as f64 - 2.0).collect();
        let mut tape = Tape::new();
        c.actor.forward_recorded(o.as_slice(), &mut tape).unwrap();
        let mut g = c.actor.gradients();
        let analytic = c.actor.backward(&tape, &d_out_actor, &mut g).unwrap();
        let mut tape_c = Tape::new();
        c.critic.forward_recorded(o.as_slice(), &mut tape_c).unwrap();
        let mut gc = c.critic.gradients();
        let analytic_c = c.critic.backward(&tape_c, &[1.0], &mut gc).unwrap();
        for k in 0..9 {
            let mut up = o.clone();
            up.0[k] += h;
            let mut down = o.clone();
            down.0[k] -= h;
            let proj = |x: &Observation| -> f64 {
                let gp = c.actor_forward(x).unwrap();
                gp.mu.iter().chain(&gp.log_sigma).zip(&d_out_actor).map(|(a, b)| a * b).sum()
            };
            let numeric = (proj(&up) - proj(&down)) / (2.0 * h);
            assert!((numeric - analytic[k]).abs() <= 1e-6 * analytic[k].abs().max(1.0));
            let numeric_c = (c.critic_forward(&up).unwrap() - c.critic_forward(&down).unwrap()) / (2.0 * h);
            assert!((numeric_c - analytic_c[k]).abs() <= 1e-6 * analytic_c[k].abs().max(1.0));
        }
    }

    #[test]
    fn tiny_sigma_sampling_matches_deterministic_weights() {
        let mu: Vec<f64> = (0..9).map(|k| k as f64 * 0.5 - 2.0).collect();
        let gp = GaussianEdgeParams::new(3, mu, vec![1e-8; 9]).unwrap();
        let det = deterministic_weights(&gp).unwrap();
        let sample = sample_weights(&gp, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for (a, b) in sample.w.as_slice().iter().zip(det.as_slice()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn unit_gaussian_weights_average_one_half() {
        let gp = GaussianEdgeParams::new(2, vec![0.0; 4], vec![1.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sum = 0.0;
        let draws = 25_000;
        for _ in 0..draws {
            sum += sample_weights(&gp, &mut rng).unwrap().w.as_slice().iter().sum::<f64>();
        }
        let mean = sum / (4 * draws) as f64;
        assert!((mean - 0.5).abs() < 0.01, "{mean}");
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn log_prob_matches_closed_form_density() {
        let gp = GaussianEdgeParams::new(2, vec![0.3, -1.0, 2.0, 0.0], vec![0.5, 1.5, 1.0, 2.0]).unwrap();
        let s = sample_weights(&gp, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let sigma = gp.sigma();
        let mut expect = 0.0;
        for k in 0..4 {
            let pdf = (-(s.z[k] - gp.mu[k]).powi(2) / (2.0 * sigma[k] * sigma[k])).exp() / (sigma[k] * (2.0 * PI).sqrt());
            expect += pdf.ln();
        }
        assert!((s.log_prob - expect).abs() < 1e-10);
    }

    #[test]
    fn log_prob_peaks_at_mean() {
        let gp = GaussianEdgeParams::new(2, vec![0.3, -1.0, 2.0, 0.0], vec![0.5, 1.5, 1.0, 2.0]).unwrap();
        let at_mean = gp.log_prob(&gp.mu);
        for k in 0..4 {
            for d in [-0.1, 0.1, 1.0] {
                let mut z = gp.mu.clone();
                z[k] += d;
                assert!(gp.log_prob(&z) < at_mean);
            }
        }
    }

    #[test]
    fn deterministic_weight_examples() {
        let gp = GaussianEdgeParams::new(2, vec![0.0; 4], vec![1.0; 4]).unwrap();
        assert!(deterministic_weights(&gp).unwrap().as_slice().iter().all(|&w| w == 0.5));
        let gp = GaussianEdgeParams::new(2, vec![30.0; 4], vec![1.0; 4]).unwrap();
        assert!(deterministic_weights(&gp).unwrap().as_slice().iter().all(|&w| (1.0 - w) < 1e-9));
        let gp = GaussianEdgeParams::new(2, vec![logit(0.40); 4], vec![1.0; 4]).unwrap();
        let w = deterministic_weights(&gp).unwrap();
        assert!((w.get(0, 1) - 0.40).abs() < 1e-15);
        assert_eq!(quantize_tiers(&w).get(0, 1), Tier::from_weight(w.get(0, 1)));
        assert!(matches!(quantize_tiers(&w).get(0, 1), Tier::Reference | Tier::Critical));
    }

    #[test]
    fn sigmoid_stays_in_open_interval() {
        for z in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
            let s = sigmoid(z);
            assert!(s > 0.0 && s < 1.0);
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let c = randomized(3, 8);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        c.to_checkpoint(8, 17).save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.train_step, 17);
        let back = Controller::from_checkpoint(&loaded).unwrap();
        let bits = |c: &Controller| -> Vec<u64> {
            c.actor.flat_params().iter().chain(&c.critic.flat_params()).map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&c), bits(&back));
    }
}
