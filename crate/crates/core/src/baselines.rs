//! Fixed communication topologies used as comparison baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::debate::StaticPolicy;
use crate::error::{Error, Result};
use crate::topology::WeightMatrix;

pub const VISIBLE_WEIGHT: f64 = 0.5;
pub const HIDDEN_WEIGHT: f64 = 0.05;
/// Low enough that every agent is active every round.
pub const BASELINE_DIAGONAL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StaticTopology {
    /// Everyone sees everyone.
    Full,
    /// Each agent sees its two cyclic neighbors.
    Ring,
    /// Spokes see the hub; the hub sees every spoke.
    Star { hub: usize },
    /// Contiguous groups of `size` agents; the last group takes the remainder.
    Group { size: usize },
}

impl StaticTopology {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 2 {
            return Err(Error::DegenerateSwarm(n));
        }
        match *self {
            StaticTopology::Star { hub } if hub >= n => Err(Error::Config(format!("star hub {hub} out of range for {n} agents"))),
            StaticTopology::Group { size } if size < 2 || size > n => {
                Err(Error::Config(format!("group size {size} must lie in [2, {n}]")))
            }
            _ => Ok(()),
        }
    }

    /// Whether agent `i` sees agent `j` (off-diagonal only).
    pub fn visible(&self, n: usize, i: usize, j: usize) -> bool {
        if i == j {
            return false;
        }
        match *self {
            StaticTopology::Full => true,
            StaticTopology::Ring => (i + 1) % n == j || (j + 1) % n == i,
            StaticTopology::Star { hub } => i == hub || j == hub,
            StaticTopology::Group { size } => {
                let groups = n / size;
                let g = |k: usize| (k / size).min(groups.saturating_sub(1));
                g(i) == g(j)
            }
        }
    }

    pub fn policy(&self, n: usize) -> Result<StaticPolicy> {
        Ok(StaticPolicy { name: self.to_string(), weights: static_weights(self, n)? })
    }
}

pub fn static_weights(topo: &StaticTopology, n: usize) -> Result<WeightMatrix> {
    topo.validate(n)?;
    WeightMatrix::from_fn(n, |i, j| {
        if i == j {
            BASELINE_DIAGONAL
        } else if topo.visible(n, i, j) {
            VISIBLE_WEIGHT
        } else {
            HIDDEN_WEIGHT
        }
    })
}

impl fmt::Display for StaticTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StaticTopology::Full => write!(f, "full"),
            StaticTopology::Ring => write!(f, "ring"),
            StaticTopology::Star { hub } if *hub == 0 => write!(f, "star"),
            StaticTopology::Star { hub } => write!(f, "star:{hub}"),
            StaticTopology::Group { size } => write!(f, "group:{size}"),
        }
    }
}

impl FromStr for StaticTopology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<usize> {
            a.ok_or_else(|| Error::Config(format!("topology {s:?} needs a numeric parameter")))?
                .parse()
                .map_err(|_| Error::Config(format!("bad topology parameter in {s:?}")))
        };
        match kind {
            "full" => Ok(StaticTopology::Full),
            "ring" => Ok(StaticTopology::Ring),
            "star" => Ok(StaticTopology::Star { hub: if arg.is_some() { num(arg)? } else { 0 } }),
            "group" => Ok(StaticTopology::Group { size: num(arg)? }),
            _ => Err(Error::Config(format!("unknown topology {s:?}"))),
        }
    }
}
