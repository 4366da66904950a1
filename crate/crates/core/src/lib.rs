//! Multi-agent debate under a learned communication topology.
//!
//! Each round a PPO-trained controller reads a similarity matrix of the
//! agents' answers, emits per-edge influence weights, prunes agents whose
//! self-weight exceeds their incoming influence, and sorts the remaining
//! messages into prompt tiers. The final answer is a majority vote.

pub mod agents;
pub mod baselines;
pub mod controller;
pub mod debate;
pub mod error;
pub mod harness;
pub mod nn;
pub mod observation;
pub mod ppo;
pub mod reward;
pub mod seed;
pub mod topology;

pub use error::{Error, Result};
