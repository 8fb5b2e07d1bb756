//! Scenario files: one JSON document describing a reproducible run — cost
//! function, either an offline workload or stochastic parameters, policy
//! sweeps, and simulation controls. All randomness is declared in the file.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::offline_preemptive::{BalanceConfig, SweepOrder};
use crate::sim::{PolicySpec, SimConfig, SimError, SwitchingCurve};
use crate::stochastic::{PowerClass, StochasticError, StochasticParams};
use crate::task_model::{CostFunction, DemandTask, ModelError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse scenario {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid scenario: {reason}")]
    Invalid { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub cost: CostFunction,
    #[serde(default)]
    pub offline: Option<OfflineSection>,
    #[serde(default)]
    pub stochastic: Option<StochasticSection>,
    #[serde(default)]
    pub policies: Vec<PolicySweep>,
    #[serde(default)]
    pub sim: Option<SimControls>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let scenario: Scenario =
            serde_json::from_str(&text).map_err(|source| ScenarioError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        match (&self.offline, &self.stochastic) {
            (Some(_), Some(_)) => Err(ScenarioError::Invalid {
                reason: "scenario must have either an offline or a stochastic section, not both"
                    .into(),
            }),
            (None, None) => Err(ScenarioError::Invalid {
                reason: "scenario needs an offline or a stochastic section".into(),
            }),
            _ => Ok(()),
        }?;
        for sweep in &self.policies {
            sweep.expand()?;
        }
        Ok(())
    }

    pub fn offline(&self) -> Result<&OfflineSection, ScenarioError> {
        self.offline.as_ref().ok_or_else(|| ScenarioError::Invalid {
            reason: "this command needs an offline scenario".into(),
        })
    }

    pub fn stochastic(&self) -> Result<&StochasticSection, ScenarioError> {
        self.stochastic
            .as_ref()
            .ok_or_else(|| ScenarioError::Invalid {
                reason: "this command needs a stochastic scenario".into(),
            })
    }

    pub fn sim_controls(&self) -> Result<&SimControls, ScenarioError> {
        self.sim.as_ref().ok_or_else(|| ScenarioError::Invalid {
            reason: "this command needs a `sim` section".into(),
        })
    }

    /// Flattens the policy sweeps into concrete policies, in file order.
    pub fn expanded_policies(&self) -> Result<Vec<PolicySpec>, ScenarioError> {
        let mut out = Vec::new();
        for sweep in &self.policies {
            out.extend(sweep.expand()?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OfflineSection {
    pub horizon: f64,
    #[serde(default)]
    pub tasks: Vec<DemandTask>,
    /// Uniform-instance convenience input for the packing solvers.
    #[serde(default)]
    pub packing: Option<PackingSpec>,
    #[serde(default)]
    pub balance: Option<BalanceOverrides>,
}

impl OfflineSection {
    pub fn balance_config(&self) -> BalanceConfig {
        let mut config = BalanceConfig::default();
        if let Some(overrides) = &self.balance {
            if let Some(v) = overrides.objective_tolerance {
                config.objective_tolerance = v;
            }
            if let Some(v) = overrides.max_rounds {
                config.max_rounds = v;
            }
            if let Some(v) = overrides.waterlevel_tolerance {
                config.waterlevel_tolerance = v;
            }
            if let Some(seed) = overrides.random_order_seed {
                config.sweep_order = SweepOrder::RandomPermutationPerRound { seed };
            }
        }
        config
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackingSpec {
    pub sizes: Vec<f64>,
    #[serde(rename = "D")]
    pub capacity: f64,
    #[serde(rename = "p")]
    pub power_step: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalanceOverrides {
    #[serde(default)]
    pub objective_tolerance: Option<f64>,
    #[serde(default)]
    pub max_rounds: Option<usize>,
    #[serde(default)]
    pub waterlevel_tolerance: Option<f64>,
    #[serde(default)]
    pub random_order_seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSection {
    pub lambda: f64,
    pub s: f64,
    pub d: f64,
    #[serde(default)]
    pub power_dist: Option<Vec<PowerClass>>,
    /// Deadline expiry rates to sweep; defaults to `[d]`.
    #[serde(default)]
    pub d_values: Option<Vec<f64>>,
    /// Threshold offsets for the asymptotics table.
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
}

impl StochasticSection {
    pub fn params(&self) -> Result<StochasticParams, StochasticError> {
        match &self.power_dist {
            Some(dist) => StochasticParams::new(self.lambda, self.s, self.d, dist.clone()),
            None => StochasticParams::unit(self.lambda, self.s, self.d),
        }
    }

    pub fn expiry_rates(&self) -> Vec<f64> {
        match &self.d_values {
            Some(values) if !values.is_empty() => values.clone(),
            _ => vec![self.d],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PolicySweep {
    Default,
    Cr { thresholds: Vec<f64> },
    Tp {
        #[serde(default)]
        thresholds: Vec<f64>,
        #[serde(default)]
        curves: Vec<CurveSpec>,
    },
    Etp { thresholds: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSpec {
    pub base: f64,
    #[serde(default)]
    pub steps: Vec<(u64, f64)>,
}

impl PolicySweep {
    pub fn expand(&self) -> Result<Vec<PolicySpec>, ScenarioError> {
        let nonempty = |n: usize, what: &str| {
            if n == 0 {
                Err(ScenarioError::Invalid {
                    reason: format!("{what} sweep grid must be non-empty"),
                })
            } else {
                Ok(())
            }
        };
        Ok(match self {
            PolicySweep::Default => vec![PolicySpec::Default],
            PolicySweep::Cr { thresholds } => {
                nonempty(thresholds.len(), "cr")?;
                thresholds.iter().map(|&t| PolicySpec::cr(t)).collect()
            }
            PolicySweep::Tp { thresholds, curves } => {
                nonempty(thresholds.len() + curves.len(), "tp")?;
                let mut out = Vec::new();
                for &t in thresholds {
                    out.push(PolicySpec::tp_constant(t)?);
                }
                for c in curves {
                    out.push(PolicySpec::ThresholdPostponement {
                        curve: SwitchingCurve::new(c.base, c.steps.clone())?,
                    });
                }
                out
            }
            PolicySweep::Etp { thresholds } => {
                nonempty(thresholds.len(), "etp")?;
                thresholds.iter().map(|&t| PolicySpec::etp(t)).collect()
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimControls {
    pub horizon: f64,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    pub seed: u64,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub cr_single_release: bool,
}

fn default_warmup() -> f64 {
    0.1
}
fn default_batches() -> usize {
    20
}
fn default_replications() -> usize {
    1
}

impl SimControls {
    pub fn to_config(
        &self,
        params: StochasticParams,
        cost: CostFunction,
        policy: PolicySpec,
        seed_override: Option<u64>,
    ) -> SimConfig {
        let mut config = SimConfig::new(
            params,
            cost,
            policy,
            self.horizon,
            seed_override.unwrap_or(self.seed),
        );
        config.warmup_fraction = self.warmup_fraction;
        config.batches = self.batches;
        config.replications = self.replications;
        config.cr_single_release = self.cr_single_release;
        config
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_requires_exactly_one_section() {
        let json = r#"{
            "name": "x",
            "cost": {"type": "quadratic", "c2": 1.0, "c1": 0.0, "c0": 0.0}
        }"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        assert!(s.validate().is_err());

        let json = r#"{
            "name": "x",
            "cost": {"type": "quadratic", "c2": 1.0, "c1": 0.0, "c0": 0.0},
            "offline": {"horizon": 4.0, "tasks": []},
            "stochastic": {"lambda": 1.0, "s": 1.0, "d": 1.0}
        }"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn stochastic_scenario_parses() {
        let json = r#"{
            "name": "stoch",
            "cost": {"type": "quadratic", "c2": 1.0, "c1": 0.0, "c0": 0.0},
            "stochastic": {"lambda": 4.0, "s": 1.0, "d": 1.0, "d_values": [1.0, 0.1]},
            "policies": [
                {"type": "default"},
                {"type": "cr", "thresholds": [5.0, 6.0]},
                {"type": "tp", "curves": [{"base": 4.0, "steps": [[3, 6.0]]}]},
                {"type": "etp", "thresholds": [4.0]}
            ],
            "sim": {"horizon": 1000.0, "seed": 7}
        }"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        s.validate().unwrap();
        let policies = s.expanded_policies().unwrap();
        assert_eq!(policies.len(), 5);
        assert_eq!(s.stochastic().unwrap().expiry_rates(), vec![1.0, 0.1]);
        let controls = s.sim_controls().unwrap();
        assert_eq!(controls.batches, 20);
        assert_eq!(controls.replications, 1);
    }

    #[test]
    fn empty_sweep_grid_rejected() {
        let json = r#"{
            "name": "stoch",
            "cost": {"type": "quadratic", "c2": 1.0, "c1": 0.0, "c0": 0.0},
            "stochastic": {"lambda": 4.0, "s": 1.0, "d": 1.0},
            "policies": [{"type": "cr", "thresholds": []}]
        }"#;
        let s: Scenario = serde_json::from_str(json).unwrap();
        assert!(s.validate().is_err());
    }
}
