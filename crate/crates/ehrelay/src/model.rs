//! System parameters, energy-arrival distributions, relay states, and
//! time-switching policies. Everything downstream consumes these types,
//! so all input validation lives here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

/// Distribution of the number of energy units harvested in one EH slot.
///
/// `probs[m]` is the probability of harvesting exactly `m` units,
/// `m = 0..=b_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EnergyDistribution {
    probs: Vec<f64>,
}

impl EnergyDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidParams(
                "energy distribution needs b_max >= 1 (at least two probabilities)".into(),
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParams(
                "energy probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidParams(format!(
                "energy probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Discrete uniform distribution on `{0, 1, ..., b_max}`.
    pub fn uniform(b_max: usize) -> Result<Self> {
        if b_max < 1 {
            return Err(Error::InvalidParams("uniform energy needs b_max >= 1".into()));
        }
        let p = 1.0 / (b_max + 1) as f64;
        Self::new(vec![p; b_max + 1])
    }

    /// Largest number of units that can arrive in one slot.
    pub fn b_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of harvesting exactly `m` units (zero beyond `b_max`).
    pub fn prob(&self, m: usize) -> f64 {
        self.probs.get(m).copied().unwrap_or(0.0)
    }

    /// Average units harvested per EH slot.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(m, p)| m as f64 * p)
            .sum()
    }
}

impl TryFrom<Vec<f64>> for EnergyDistribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<EnergyDistribution> for Vec<f64> {
    fn from(d: EnergyDistribution) -> Self {
        d.probs
    }
}

/// Fixed parameters of the three-node relay system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Detection probability of the direct S-D link.
    pub p_det_s: f64,
    /// Detection probability of the R-D link.
    pub p_det_r: f64,
    /// Energy units consumed per transmission attempt at the relay.
    pub k_cost: usize,
    /// Energy buffer capacity in units.
    pub n_cap: usize,
    /// Per-slot energy arrival distribution in EH mode.
    pub energy: EnergyDistribution,
}

impl SystemParams {
    pub fn new(
        p_det_s: f64,
        p_det_r: f64,
        k_cost: usize,
        n_cap: usize,
        energy: EnergyDistribution,
    ) -> Result<Self> {
        let params = Self {
            p_det_s,
            p_det_r,
            k_cost,
            n_cap,
            energy,
        };
        params.validate()?;
        Ok(params)
    }

    /// Checks every structural constraint; call after deserializing.
    pub fn validate(&self) -> Result<()> {
        if !self.p_det_s.is_finite() || self.p_det_s <= 0.0 || self.p_det_s >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "p_det_s = {} must lie strictly inside (0, 1)",
                self.p_det_s
            )));
        }
        if !self.p_det_r.is_finite() || self.p_det_r <= 0.0 || self.p_det_r > 1.0 {
            return Err(Error::InvalidParams(format!(
                "p_det_r = {} must lie in (0, 1]",
                self.p_det_r
            )));
        }
        if self.k_cost == 0 {
            return Err(Error::InvalidParams("k_cost must be at least 1".into()));
        }
        if self.energy.b_max() > self.k_cost {
            return Err(Error::InvalidParams(format!(
                "b_max = {} exceeds k_cost = {} (harvest per slot cannot exceed one transmission)",
                self.energy.b_max(),
                self.k_cost
            )));
        }
        if self.n_cap < 2 * self.k_cost {
            return Err(Error::InvalidParams(format!(
                "n_cap = {} is below 2 * k_cost = {} (buffer must hold two transmissions)",
                self.n_cap,
                2 * self.k_cost
            )));
        }
        Ok(())
    }

    /// Number of energy phases, `n_cap + 1`.
    pub fn phases(&self) -> usize {
        self.n_cap + 1
    }
}

/// Relay state at the start of a slot: backlogged packets and energy units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct State {
    pub q_d: usize,
    pub q_e: usize,
}

impl State {
    pub fn new(q_d: usize, q_e: usize) -> Self {
        Self { q_d, q_e }
    }
}

/// One entry of a tabular policy; states not listed decode with
/// probability zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularEntry {
    pub q_d: usize,
    pub q_e: usize,
    pub alpha: f64,
}

/// A time-switching rule: the probability of choosing the DD mode in each
/// state.
///
/// `Threshold` uses the convention of the dynamic-policy family: decode
/// surely for `q_e > e_th`, with probability `beta` at `q_e == e_th`, and
/// never below the threshold or while a packet is already backlogged.
/// The hard-threshold family (decode surely for `q_e >= t`, used by the
/// throughput-optimal construction) is the special case `beta = 1`,
/// `e_th = t`; with `beta = 0` the same map is `e_th = t - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Static(f64),
    Threshold { e_th: usize, beta: f64 },
    Tabular(Vec<TabularEntry>),
}

impl Policy {
    /// Probability of switching to the DD mode in state `s`.
    pub fn dd_probability(&self, s: State) -> f64 {
        match self {
            Policy::Static(alpha) => *alpha,
            Policy::Threshold { e_th, beta } => {
                if s.q_d >= 1 {
                    0.0
                } else if s.q_e > *e_th {
                    1.0
                } else if s.q_e == *e_th {
                    *beta
                } else {
                    0.0
                }
            }
            Policy::Tabular(entries) => entries
                .iter()
                .find(|e| e.q_d == s.q_d && e.q_e == s.q_e)
                .map(|e| e.alpha)
                .unwrap_or(0.0),
        }
    }

    /// Checks probability ranges and state bounds against `params`.
    pub fn validate(&self, params: &SystemParams) -> Result<()> {
        let prob_ok = |p: f64| p.is_finite() && (0.0..=1.0).contains(&p);
        match self {
            Policy::Static(alpha) => {
                if !prob_ok(*alpha) {
                    return Err(Error::InvalidParams(format!(
                        "static DD probability {alpha} outside [0, 1]"
                    )));
                }
            }
            Policy::Threshold { e_th, beta } => {
                if *e_th > params.n_cap {
                    return Err(Error::InvalidParams(format!(
                        "threshold e_th = {e_th} exceeds the buffer capacity {}",
                        params.n_cap
                    )));
                }
                if !prob_ok(*beta) {
                    return Err(Error::InvalidParams(format!(
                        "threshold beta {beta} outside [0, 1]"
                    )));
                }
            }
            Policy::Tabular(entries) => {
                for e in entries {
                    if !prob_ok(e.alpha) {
                        return Err(Error::InvalidParams(format!(
                            "tabular alpha {} at ({}, {}) outside [0, 1]",
                            e.alpha, e.q_d, e.q_e
                        )));
                    }
                    if e.q_e > params.n_cap {
                        return Err(Error::InvalidParams(format!(
                            "tabular state ({}, {}) exceeds the buffer capacity {}",
                            e.q_d, e.q_e, params.n_cap
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Largest `q_d` with a possibly non-zero decode probability.
    pub fn max_decode_qd(&self) -> Option<usize> {
        match self {
            Policy::Static(_) => None,
            Policy::Threshold { .. } => Some(0),
            Policy::Tabular(entries) => entries.iter().map(|e| e.q_d).max(),
        }
    }
}
