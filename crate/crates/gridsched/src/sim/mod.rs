//! Discrete-event simulator of the online system: Poisson arrivals,
//! exponential durations and deadline timers, pluggable threshold control
//! policies, and batch-means steady-state output analysis.
//!
//! A single replication is strictly single-threaded and deterministic given
//! the configuration; replications use independent seed streams derived from
//! `(seed, replication index, stream role)`, so reordering events in one
//! stream never perturbs the others.

mod audit;
mod engine;
mod policy;
mod stats;
mod trace;

pub use audit::{
    ctmc_rate_audit, ExcludedState, RateAudit, RateAuditEntry, TransitionChannel,
};
pub use engine::{run, run_replication, Replication, SimResult, SimState};
pub use policy::{policy_on_arrival, ArrivalDecision, PolicySpec, SwitchingCurve};
pub use trace::{read_trace, write_trace, TraceEventKind, TraceRecord};

use serde::Serialize;
use thiserror::Error;

use crate::stochastic::{StochasticError, StochasticParams};
use crate::task_model::{CostFunction, ModelError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {reason}")]
    InvalidConfig { reason: String },
    #[error("invalid policy: {reason}")]
    InvalidPolicy { reason: String },
    #[error("rate audit unsupported: {reason}")]
    AuditUnsupported { reason: String },
    #[error("malformed trace: {reason}")]
    BadTrace { reason: String },
    #[error(transparent)]
    Stochastic(#[from] StochasticError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Full description of one simulation run.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub params: StochasticParams,
    pub cost: CostFunction,
    pub policy: PolicySpec,
    /// Simulated time horizon per replication.
    pub horizon: f64,
    /// Leading fraction of the horizon discarded before statistics start.
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Batch count for the batch-means confidence interval.
    pub batches: usize,
    pub replications: usize,
    /// Limit controlled-release to one activation per completion instead of
    /// draining greedily while below the threshold.
    pub cr_single_release: bool,
    /// Record a `(time, event, P, Q)` trace for the rate audit.
    pub record_trace: bool,
}

impl SimConfig {
    pub fn new(
        params: StochasticParams,
        cost: CostFunction,
        policy: PolicySpec,
        horizon: f64,
        seed: u64,
    ) -> Self {
        Self {
            params,
            cost,
            policy,
            horizon,
            warmup_fraction: 0.1,
            seed,
            batches: 20,
            replications: 1,
            cr_single_release: false,
            record_trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let invalid = |reason: String| SimError::InvalidConfig { reason };
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(invalid(format!(
                "warmup fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.batches < 10 {
            return Err(invalid(format!("need at least 10 batches, got {}", self.batches)));
        }
        if self.replications < 1 {
            return Err(invalid("need at least one replication".into()));
        }
        self.policy.validate()?;
        Ok(())
    }
}
