//! Demand-load scheduling toolkit.
//!
//! Consumers file power demands (arrival, duration, power draw, deadline);
//! the operator schedules them to minimize an increasing convex cost of total
//! instantaneous power. The crate covers:
//!
//! - [`task_model`]: tasks, cost functions, load profiles, schedules.
//! - [`offline_preemptive`]: the continuous relaxation solved by iterative
//!   water-filling load balancing.
//! - [`offline_nonpreemptive`]: the bin-packing correspondence for the
//!   uniform instance (exact and heuristic), power quantization, and a
//!   small-scale exact start-time search.
//! - [`stochastic`]: analytic stationary results (uncontrolled cost, the
//!   universal lower bound, M/M/c analysis, threshold asymptotics).
//! - [`sim`]: a discrete-event simulator of the online system under the
//!   uncontrolled, controlled-release, postponement, and enhanced
//!   postponement policies, with batch-means output analysis and a
//!   transition-rate audit.
//! - [`scenario`] and [`cli`]: reproducible scenario files and the
//!   command-line frontend.

pub mod cli;
pub mod offline_nonpreemptive;
pub mod offline_preemptive;
pub mod scenario;
pub mod sim;
pub mod stochastic;
pub mod task_model;

pub use task_model::{CostFunction, DemandTask, LoadProfile, Schedule, TaskId};
