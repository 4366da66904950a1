//! Edge weights, agent activation, prompt tiers and link-budget accounting.
//!
//! Everything here is a pure function of a [`WeightMatrix`]. Entry `w[i][j]`
//! is the influence of agent `j`'s response on agent `i`; the diagonal
//! `w[i][i]` doubles as agent `i`'s activation threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of the Critical tier (exclusive).
pub const CRITICAL_ABOVE: f64 = 0.40;
/// Lower bound of the Reference tier (exclusive).
pub const REFERENCE_ABOVE: f64 = 0.25;
/// Lower bound of the Background tier (exclusive); also the default link threshold.
pub const BACKGROUND_ABOVE: f64 = 0.10;

/// Square matrix of edge weights, every entry strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct WeightMatrix {
    n: usize,
    w: Vec<f64>,
}

impl WeightMatrix {
    /// Builds a matrix from row-major data, validating the open-interval invariant.
    pub fn new(n: usize, w: Vec<f64>) -> Result<Self> {
        if w.len() != n * n {
            return Err(Error::Shape { expected: n * n, actual: w.len() });
        }
        for (k, &value) in w.iter().enumerate() {
            if !(value > 0.0 && value < 1.0) {
                return Err(Error::InvalidWeight { row: k / n, col: k % n, value });
            }
        }
        Ok(Self { n, w })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut w = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                w.push(f(i, j));
            }
        }
        Self::new(n, w)
    }

    /// Uniform off-diagonal weight `external` with diagonal `diag`.
    pub fn uniform(n: usize, external: f64, diag: f64) -> Result<Self> {
        Self::from_fn(n, |i, j| if i == j { diag } else { external })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Applies the same permutation to rows and columns: `out[p[i]][p[j]] = w[i][j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::Shape { expected: self.n, actual: perm.len() });
        }
        let mut w = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for j in 0..self.n {
                w[perm[i] * self.n + perm[j]] = self.get(i, j);
            }
        }
        Self::new(self.n, w)
    }
}

impl TryFrom<Vec<Vec<f64>>> for WeightMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut w = Vec::with_capacity(n * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::Shape { expected: n, actual: row.len() });
            }
            w.extend(row);
        }
        Self::new(n, w)
    }
}

impl From<WeightMatrix> for Vec<Vec<f64>> {
    fn from(m: WeightMatrix) -> Self {
        m.w.chunks(m.n.max(1)).map(<[f64]>::to_vec).collect()
    }
}

/// Prompt priority class of one directed edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Invisible,
    Background,
    Reference,
    Critical,
}

impl Tier {
    /// Quantizes one weight; ties fall to the lower tier.
    pub fn from_weight(w: f64) -> Self {
        if w > CRITICAL_ABOVE {
            Tier::Critical
        } else if w > REFERENCE_ABOVE {
            Tier::Reference
        } else if w > BACKGROUND_ABOVE {
            Tier::Background
        } else {
            Tier::Invisible
        }
    }

    /// Prompt tag, or `None` for edges that are left out of the prompt.
    pub fn tag(self) -> Option<&'static str> {
        match self {
            Tier::Critical => Some("[Critical]"),
            Tier::Reference => Some("[Reference]"),
            Tier::Background => Some("[Background]"),
            Tier::Invisible => None,
        }
    }

    pub fn is_visible(self) -> bool {
        self != Tier::Invisible
    }
}

/// Per-edge tiers; the diagonal is always [`Tier::Invisible`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierMatrix {
    n: usize,
    tiers: Vec<Tier>,
}

impl TierMatrix {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Tier {
        self.tiers[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[Tier] {
        &self.tiers[i * self.n..(i + 1) * self.n]
    }

    /// Number of off-diagonal edges in `tier`.
    pub fn count(&self, tier: Tier) -> usize {
        self.tiers.iter().filter(|&&t| t == tier).count()
            - if tier == Tier::Invisible { self.n } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetConfig {
    /// Soft cap on visible links per round.
    pub budget: usize,
    /// A link is active when its weight strictly exceeds this.
    pub delta: f64,
}

impl BudgetConfig {
    pub fn new(budget: usize) -> Self {
        Self { budget, delta: BACKGROUND_ABOVE }
    }
}

impl Default for BudgetConfig {
    fn default() -> Self {
        Self::new(12)
    }
}

/// Which agents regenerate this round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivationMask {
    pub active: Vec<bool>,
}

impl ActivationMask {
    pub fn all(n: usize, value: bool) -> Self {
        Self { active: vec![value; n] }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn count_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.active.len()).filter(|&i| self.active[i]).collect()
    }
}

/// Average weight agent `i` places on the other agents (its in-degree).
pub fn mean_external_influence(w: &WeightMatrix, i: usize) -> Result<f64> {
    let n = w.n();
    if n < 2 {
        return Err(Error::DegenerateSwarm(n));
    }
    if i >= n {
        return Err(Error::Shape { expected: n, actual: i });
    }
    let sum: f64 = w.row(i).iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).sum();
    Ok(sum / (n - 1) as f64)
}

/// An agent stays active unless its external influence falls strictly below its own diagonal weight.
pub fn compute_activation(w: &WeightMatrix) -> Result<ActivationMask> {
    let n = w.n();
    if n < 2 {
        return Err(Error::DegenerateSwarm(n));
    }
    let active = (0..n)
        .map(|i| mean_external_influence(w, i).map(|m| m >= w.get(i, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationMask { active })
}

pub fn quantize_tiers(w: &WeightMatrix) -> TierMatrix {
    let n = w.n();
    let tiers = (0..n * n)
        .map(|k| if k / n == k % n { Tier::Invisible } else { Tier::from_weight(w.as_slice()[k]) })
        .collect();
    TierMatrix { n, tiers }
}

/// Off-diagonal entries strictly above `cfg.delta`.
pub fn count_active_links(w: &WeightMatrix, cfg: &BudgetConfig) -> usize {
    let n = w.n();
    w.as_slice()
        .iter()
        .enumerate()
        .filter(|&(k, &v)| k / n != k % n && v > cfg.delta)
        .count()
}

pub fn budget_penalty(active_links: usize, cfg: &BudgetConfig) -> f64 {
    active_links.saturating_sub(cfg.budget) as f64
}
