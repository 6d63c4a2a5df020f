//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "p_det_s": 0.3, "p_det_r": 0.9, "k_cost": 10, "n_cap": 100,
//!   "energy": {"uniform": 5},
//!   "policy": {"threshold": {"e_th": 96, "beta": 1.0}},
//!   "alpha_grid": [0.0, 0.05, 0.1],
//!   "sim": {"slots": 1000000, "warmup": 10000, "seed": 1, "replications": 8}
//! }
//! ```
//!
//! `energy` is either `{"uniform": b_max}` or `{"probs": [...]}`. A policy
//! is `{"static": a}`, `{"threshold": {"e_th": n, "beta": b}}`, or
//! `{"tabular": [{"q_d": 0, "q_e": 90, "alpha": 0.5}, ...]}`.

use std::fs;
use std::path::Path;

use ehrelay::model::{EnergyDistribution, Policy, SystemParams};
use ehrelay::simulator::SimConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergySpec {
    Uniform(usize),
    Probs(Vec<f64>),
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(default)]
pub struct SimSection {
    pub slots: u64,
    pub warmup: u64,
    pub seed: u64,
    pub replications: u32,
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            slots: d.slots,
            warmup: d.warmup,
            seed: d.seed,
            replications: d.replications,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConfigFile {
    pub p_det_s: f64,
    pub p_det_r: f64,
    pub k_cost: usize,
    pub n_cap: usize,
    pub energy: EnergySpec,
    #[serde(default)]
    pub policy: Option<Policy>,
    #[serde(default)]
    pub policies: Option<Vec<Policy>>,
    #[serde(default)]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub sim: Option<SimSection>,
}

/// A fully validated experiment setup.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub params: SystemParams,
    pub policies: Vec<Policy>,
    pub alpha_grid: Option<Vec<f64>>,
    pub sim: SimConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))
    }

    /// Validates everything and applies command-line overrides for the
    /// seed and slot budget.
    pub fn build(self, seed: Option<u64>, slots: Option<u64>) -> Result<Experiment, CliError> {
        let energy = match self.energy {
            EnergySpec::Uniform(b_max) => EnergyDistribution::uniform(b_max),
            EnergySpec::Probs(probs) => EnergyDistribution::new(probs),
        }
        .map_err(CliError::Core)?;
        let params = SystemParams::new(
            self.p_det_s,
            self.p_det_r,
            self.k_cost,
            self.n_cap,
            energy,
        )
        .map_err(CliError::Core)?;

        let mut policies = Vec::new();
        if let Some(p) = self.policy {
            policies.push(p);
        }
        if let Some(ps) = self.policies {
            policies.extend(ps);
        }
        for policy in &policies {
            policy.validate(&params).map_err(CliError::Core)?;
        }

        if let Some(grid) = &self.alpha_grid {
            if grid.is_empty() {
                return Err(CliError::Config("alpha_grid must not be empty".into()));
            }
            if grid.iter().any(|a| !a.is_finite() || *a < 0.0 || *a >= 1.0) {
                return Err(CliError::Config(
                    "alpha_grid values must lie in [0, 1)".into(),
                ));
            }
        }

        let section = self.sim.unwrap_or_default();
        let sim = SimConfig {
            slots: slots.unwrap_or(section.slots),
            warmup: section.warmup,
            seed: seed.unwrap_or(section.seed),
            replications: section.replications,
        };
        sim.validate().map_err(CliError::Core)?;

        Ok(Experiment {
            params,
            policies,
            alpha_grid: self.alpha_grid,
            sim,
        })
    }
}
