//! Core domain types shared by the solvers and the simulator: demand tasks,
//! convex cost functions, piecewise-constant load profiles, and schedules.
//!
//! All types are immutable after construction and validated on construction,
//! so they can be shared freely across threads.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance used by feasibility checks throughout the crate.
pub const REL_TOL: f64 = 1e-9;

/// Identifier of a demand task. Unique within a workload.
pub type TaskId = u64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("task {id}: {reason}")]
    InvalidTask { id: TaskId, reason: String },
    #[error("invalid cost function: {reason}")]
    InvalidCostFunction { reason: String },
    #[error("invalid load profile: {reason}")]
    InvalidProfile { reason: String },
    #[error("cost function evaluated at negative power {value}")]
    NegativePower { value: f64 },
    #[error("profile horizons differ: {left} vs {right}")]
    HorizonMismatch { left: f64, right: f64 },
    #[error("duplicate task id {id}")]
    DuplicateTaskId { id: TaskId },
    #[error("task {id} window [{arrival}, {deadline}] extends outside [0, {horizon}]")]
    WindowOutsideHorizon {
        id: TaskId,
        arrival: f64,
        deadline: f64,
        horizon: f64,
    },
    #[error("schedule has no entry for task {id}")]
    MissingScheduleEntry { id: TaskId },
    #[error("schedule entry for unknown task {id}")]
    UnknownScheduleEntry { id: TaskId },
    #[error("task {id}: infeasible allocation: {reason}")]
    InfeasibleAllocation { id: TaskId, reason: String },
    #[error("task {id}: start {start} outside [{earliest}, {latest}]")]
    InfeasibleStart {
        id: TaskId,
        start: f64,
        earliest: f64,
        latest: f64,
    },
}

// ---------------------------------------------------------------------------
// Demand tasks
// ---------------------------------------------------------------------------

/// One power demand: arrives at `arrival`, needs `duration` time units of
/// service at `power` Watts, and must be completed by `deadline`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDemandTask")]
pub struct DemandTask {
    id: TaskId,
    arrival: f64,
    duration: f64,
    power: f64,
    deadline: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDemandTask {
    id: TaskId,
    arrival: f64,
    duration: f64,
    power: f64,
    deadline: f64,
}

impl TryFrom<RawDemandTask> for DemandTask {
    type Error = ModelError;
    fn try_from(raw: RawDemandTask) -> Result<Self, ModelError> {
        DemandTask::new(raw.id, raw.arrival, raw.duration, raw.power, raw.deadline)
    }
}

impl DemandTask {
    pub fn new(
        id: TaskId,
        arrival: f64,
        duration: f64,
        power: f64,
        deadline: f64,
    ) -> Result<Self, ModelError> {
        let invalid = |reason: String| ModelError::InvalidTask { id, reason };
        for (name, v) in [
            ("arrival", arrival),
            ("duration", duration),
            ("power", power),
            ("deadline", deadline),
        ] {
            if !v.is_finite() {
                return Err(invalid(format!("field `{name}` must be finite, got {v}")));
            }
        }
        if arrival < 0.0 {
            return Err(invalid(format!("arrival must be nonnegative, got {arrival}")));
        }
        if duration <= 0.0 {
            return Err(invalid(format!("duration must be positive, got {duration}")));
        }
        if power <= 0.0 {
            return Err(invalid(format!("power must be positive, got {power}")));
        }
        let scale = duration.max(deadline.abs()).max(1.0);
        if deadline - arrival - duration < -REL_TOL * scale {
            return Err(invalid(format!(
                "deadline {deadline} precedes earliest completion {}",
                arrival + duration
            )));
        }
        Ok(Self {
            id,
            arrival,
            duration,
            power,
            deadline,
        })
    }

    pub fn id(&self) -> TaskId {
        self.id
    }
    pub fn arrival(&self) -> f64 {
        self.arrival
    }
    pub fn duration(&self) -> f64 {
        self.duration
    }
    pub fn power(&self) -> f64 {
        self.power
    }
    pub fn deadline(&self) -> f64 {
        self.deadline
    }

    /// Latest admissible start delay for non-preemptive service,
    /// `deadline - duration - arrival`. Nonnegative up to rounding.
    pub fn slack(&self) -> f64 {
        self.deadline - self.duration - self.arrival
    }

    /// The `[arrival, deadline]` interval the task may be served in.
    pub fn window(&self) -> (f64, f64) {
        (self.arrival, self.deadline)
    }
}

// ---------------------------------------------------------------------------
// Cost functions
// ---------------------------------------------------------------------------

/// Increasing convex instantaneous cost of total power consumption.
///
/// `Piecewise` is a max of lines `k*x + b` with nondecreasing, nonnegative
/// slopes; `Quadratic` is `c2*x^2 + c1*x + c0` with `c2, c1 >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", try_from = "RawCostFunction")]
pub enum CostFunction {
    #[serde(rename = "piecewise")]
    Piecewise { segments: Vec<(f64, f64)> },
    #[serde(rename = "quadratic")]
    Quadratic { c2: f64, c1: f64, c0: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "type", deny_unknown_fields)]
enum RawCostFunction {
    #[serde(rename = "piecewise")]
    Piecewise { segments: Vec<(f64, f64)> },
    #[serde(rename = "quadratic")]
    Quadratic { c2: f64, c1: f64, c0: f64 },
}

impl TryFrom<RawCostFunction> for CostFunction {
    type Error = ModelError;
    fn try_from(raw: RawCostFunction) -> Result<Self, ModelError> {
        match raw {
            RawCostFunction::Piecewise { segments } => CostFunction::piecewise(segments),
            RawCostFunction::Quadratic { c2, c1, c0 } => CostFunction::quadratic(c2, c1, c0),
        }
    }
}

impl CostFunction {
    pub fn piecewise(segments: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        let invalid = |reason: String| ModelError::InvalidCostFunction { reason };
        if segments.is_empty() {
            return Err(invalid("piecewise cost needs at least one segment".into()));
        }
        let mut prev_slope = f64::NEG_INFINITY;
        for &(k, b) in &segments {
            if !k.is_finite() || !b.is_finite() {
                return Err(invalid(format!("non-finite segment ({k}, {b})")));
            }
            if k < 0.0 {
                return Err(invalid(format!("negative slope {k}")));
            }
            if k < prev_slope {
                return Err(invalid("slopes must be nondecreasing".into()));
            }
            prev_slope = k;
        }
        Ok(CostFunction::Piecewise { segments })
    }

    pub fn quadratic(c2: f64, c1: f64, c0: f64) -> Result<Self, ModelError> {
        let invalid = |reason: String| ModelError::InvalidCostFunction { reason };
        if !c2.is_finite() || !c1.is_finite() || !c0.is_finite() {
            return Err(invalid(format!("non-finite coefficients ({c2}, {c1}, {c0})")));
        }
        if c2 < 0.0 || c1 < 0.0 {
            return Err(invalid(format!(
                "quadratic and linear coefficients must be nonnegative, got ({c2}, {c1})"
            )));
        }
        Ok(CostFunction::Quadratic { c2, c1, c0 })
    }

    /// Instantaneous cost per unit time at power level `x >= 0`.
    pub fn eval(&self, x: f64) -> Result<f64, ModelError> {
        if !x.is_finite() || x < 0.0 {
            return Err(ModelError::NegativePower { value: x });
        }
        Ok(self.eval_nonneg(x))
    }

    /// Fast path for callers that guarantee `x >= 0` (load profiles do).
    pub(crate) fn eval_nonneg(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        match self {
            CostFunction::Piecewise { segments } => segments
                .iter()
                .map(|&(k, b)| k * x + b)
                .fold(f64::NEG_INFINITY, f64::max),
            CostFunction::Quadratic { c2, c1, c0 } => (c2 * x + c1) * x + c0,
        }
    }

    /// Right derivative at `x`: the subgradient choice the water-filling
    /// solver relies on. At a kink of a piecewise cost this is the slope of
    /// the steeper adjacent segment.
    pub fn derivative(&self, x: f64) -> Result<f64, ModelError> {
        if !x.is_finite() || x < 0.0 {
            return Err(ModelError::NegativePower { value: x });
        }
        Ok(match self {
            CostFunction::Piecewise { segments } => {
                let mut best = f64::NEG_INFINITY;
                let mut slope = 0.0;
                // Segments are sorted by slope, so `>=` keeps the steepest
                // maximizer.
                for &(k, b) in segments {
                    let v = k * x + b;
                    if v >= best {
                        best = v;
                        slope = k;
                    }
                }
                slope
            }
            CostFunction::Quadratic { c2, c1, .. } => 2.0 * c2 * x + c1,
        })
    }
}

// ---------------------------------------------------------------------------
// Load profiles
// ---------------------------------------------------------------------------

/// Piecewise-constant nonnegative function of time on `[0, T]`, with
/// right-open segments `[t_i, t_{i+1})`. Used both for total power load
/// (values in Watts) and for fractional per-task allocations (values in
/// `[0, 1]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLoadProfile")]
pub struct LoadProfile {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoadProfile {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawLoadProfile> for LoadProfile {
    type Error = ModelError;
    fn try_from(raw: RawLoadProfile) -> Result<Self, ModelError> {
        LoadProfile::from_parts(raw.breakpoints, raw.values)
    }
}

impl LoadProfile {
    /// The all-zero profile on `[0, horizon]`.
    pub fn zero(horizon: f64) -> Result<Self, ModelError> {
        Self::constant(horizon, 0.0)
    }

    pub fn constant(horizon: f64, value: f64) -> Result<Self, ModelError> {
        Self::from_parts(vec![0.0, horizon], vec![value])
    }

    /// `value` on `[from, to)`, zero elsewhere on `[0, horizon]`.
    pub fn rectangle(horizon: f64, from: f64, to: f64, value: f64) -> Result<Self, ModelError> {
        let invalid = |reason: String| ModelError::InvalidProfile { reason };
        if !(from.is_finite() && to.is_finite()) || from < 0.0 || to > horizon || from >= to {
            return Err(invalid(format!(
                "rectangle [{from}, {to}) not inside [0, {horizon}]"
            )));
        }
        let mut breakpoints = vec![0.0];
        let mut values = Vec::new();
        if from > 0.0 {
            breakpoints.push(from);
            values.push(0.0);
        }
        breakpoints.push(to);
        values.push(value);
        if to < horizon {
            breakpoints.push(horizon);
            values.push(0.0);
        }
        Self::from_parts(breakpoints, values)
    }

    pub fn from_parts(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self, ModelError> {
        let invalid = |reason: String| ModelError::InvalidProfile { reason };
        if breakpoints.len() < 2 {
            return Err(invalid("need at least two breakpoints".into()));
        }
        if values.len() != breakpoints.len() - 1 {
            return Err(invalid(format!(
                "{} values for {} breakpoints",
                values.len(),
                breakpoints.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(invalid(format!("first breakpoint must be 0, got {}", breakpoints[0])));
        }
        for w in breakpoints.windows(2) {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(invalid("breakpoints must be finite and strictly increasing".into()));
            }
        }
        for &v in &values {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("values must be finite and nonnegative, got {v}")));
            }
        }
        let mut profile = Self { breakpoints, values };
        profile.canonicalize();
        Ok(profile)
    }

    /// Merges adjacent segments with bit-identical values; keeps breakpoint
    /// counts bounded under repeated arithmetic.
    fn canonicalize(&mut self) {
        let mut write = 0usize;
        for read in 0..self.values.len() {
            if write > 0 && self.values[read] == self.values[write - 1] {
                self.breakpoints[write] = self.breakpoints[read + 1];
            } else {
                self.values[write] = self.values[read];
                self.breakpoints[write + 1] = self.breakpoints[read + 1];
                write += 1;
            }
        }
        self.values.truncate(write);
        self.breakpoints.truncate(write + 1);
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().expect("validated nonempty")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Segments as `(start, end, value)` triples.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.values)
            .map(|(w, &v)| (w[0], w[1], v))
    }

    /// Value at time `t` for `0 <= t <= horizon`; the right endpoint maps to
    /// the last segment.
    pub fn value_at(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0 && t <= self.horizon());
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        let idx = idx.clamp(1, self.values.len());
        self.values[idx - 1]
    }

    pub fn integral(&self) -> f64 {
        self.segments().map(|(t0, t1, v)| (t1 - t0) * v).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Segment lengths and values restricted to `[from, to]`.
    pub(crate) fn restricted(&self, from: f64, to: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (t0, t1, v) in self.segments() {
            let lo = t0.max(from);
            let hi = t1.min(to);
            if hi > lo {
                out.push((hi - lo, v));
            }
        }
        out
    }

    fn merge_with(
        &self,
        other: &Self,
        op: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, ModelError> {
        if self.horizon() != other.horizon() {
            return Err(ModelError::HorizonMismatch {
                left: self.horizon(),
                right: other.horizon(),
            });
        }
        let (a, b) = (&self.breakpoints, &other.breakpoints);
        let mut breakpoints = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0usize, 0usize);
        while i < a.len() || j < b.len() {
            let next = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) if x == y => {
                    i += 1;
                    j += 1;
                    x
                }
                (Some(&x), Some(&y)) if x < y => {
                    i += 1;
                    x
                }
                (Some(_), Some(&y)) => {
                    j += 1;
                    y
                }
                (Some(&x), None) => {
                    i += 1;
                    x
                }
                (None, Some(&y)) => {
                    j += 1;
                    y
                }
                (None, None) => unreachable!(),
            };
            breakpoints.push(next);
        }
        let mut values = Vec::with_capacity(breakpoints.len() - 1);
        let (mut ia, mut ib) = (0usize, 0usize);
        for w in breakpoints.windows(2) {
            let t = w[0];
            while ia + 1 < a.len() && a[ia + 1] <= t {
                ia += 1;
            }
            while ib + 1 < b.len() && b[ib + 1] <= t {
                ib += 1;
            }
            let va = self.values[ia.min(self.values.len() - 1)];
            let vb = other.values[ib.min(other.values.len() - 1)];
            values.push(op(va, vb));
        }
        let mut profile = Self { breakpoints, values };
        profile.canonicalize();
        Ok(profile)
    }

    /// `self + weight * other`, with `weight >= 0`.
    pub fn add_scaled(&self, other: &Self, weight: f64) -> Result<Self, ModelError> {
        debug_assert!(weight >= 0.0);
        self.merge_with(other, |a, b| a + weight * b)
    }

    /// `max(self - weight * other, 0)`; clamping absorbs rounding residue
    /// when a contribution is subtracted back out.
    pub fn sub_scaled_clamped(&self, other: &Self, weight: f64) -> Result<Self, ModelError> {
        self.merge_with(other, |a, b| (a - weight * b).max(0.0))
    }
}

// ---------------------------------------------------------------------------
// Schedules
// ---------------------------------------------------------------------------

/// Either fractional allocations per task (preemptive service) or one start
/// time per task (non-preemptive service).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Schedule {
    Preemptive {
        /// Per-task allocation `x_n(t)` with values in `[0, 1]`, zero outside
        /// the task window, integrating to the task duration.
        allocations: BTreeMap<TaskId, LoadProfile>,
    },
    NonPreemptive {
        /// Per-task contiguous start time in `[arrival, deadline - duration]`.
        starts: BTreeMap<TaskId, f64>,
    },
}

fn check_unique_ids(tasks: &[DemandTask]) -> Result<(), ModelError> {
    let mut seen = BTreeSet::new();
    for t in tasks {
        if !seen.insert(t.id()) {
            return Err(ModelError::DuplicateTaskId { id: t.id() });
        }
    }
    Ok(())
}

fn check_window(task: &DemandTask, horizon: f64) -> Result<(), ModelError> {
    let tol = REL_TOL * horizon.max(1.0);
    if task.arrival() < -tol || task.deadline() > horizon + tol {
        return Err(ModelError::WindowOutsideHorizon {
            id: task.id(),
            arrival: task.arrival(),
            deadline: task.deadline(),
            horizon,
        });
    }
    Ok(())
}

/// Total power load `sum_n p_n x_n(t)` of a schedule, validating feasibility
/// along the way. Violations are reported with the offending task id.
pub fn total_load(
    tasks: &[DemandTask],
    schedule: &Schedule,
    horizon: f64,
) -> Result<LoadProfile, ModelError> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(ModelError::InvalidProfile {
            reason: format!("horizon must be positive, got {horizon}"),
        });
    }
    check_unique_ids(tasks)?;
    for task in tasks {
        check_window(task, horizon)?;
    }
    let ids: BTreeSet<TaskId> = tasks.iter().map(|t| t.id()).collect();
    let mut total = LoadProfile::zero(horizon)?;
    match schedule {
        Schedule::Preemptive { allocations } => {
            for id in allocations.keys() {
                if !ids.contains(id) {
                    return Err(ModelError::UnknownScheduleEntry { id: *id });
                }
            }
            for task in tasks {
                let alloc = allocations
                    .get(&task.id())
                    .ok_or(ModelError::MissingScheduleEntry { id: task.id() })?;
                validate_allocation(task, alloc, horizon)?;
                total = total.add_scaled(alloc, task.power())?;
            }
        }
        Schedule::NonPreemptive { starts } => {
            for id in starts.keys() {
                if !ids.contains(id) {
                    return Err(ModelError::UnknownScheduleEntry { id: *id });
                }
            }
            for task in tasks {
                let &start = starts
                    .get(&task.id())
                    .ok_or(ModelError::MissingScheduleEntry { id: task.id() })?;
                let earliest = task.arrival();
                let latest = task.deadline() - task.duration();
                let tol = REL_TOL * horizon.max(1.0);
                if start < earliest - tol || start > latest + tol {
                    return Err(ModelError::InfeasibleStart {
                        id: task.id(),
                        start,
                        earliest,
                        latest,
                    });
                }
                let from = start.max(0.0);
                let to = (start + task.duration()).min(horizon);
                let rect = LoadProfile::rectangle(horizon, from, to, 1.0)?;
                total = total.add_scaled(&rect, task.power())?;
            }
        }
    }
    Ok(total)
}

fn validate_allocation(
    task: &DemandTask,
    alloc: &LoadProfile,
    horizon: f64,
) -> Result<(), ModelError> {
    let infeasible = |reason: String| ModelError::InfeasibleAllocation {
        id: task.id(),
        reason,
    };
    if alloc.horizon() != horizon {
        return Err(ModelError::HorizonMismatch {
            left: alloc.horizon(),
            right: horizon,
        });
    }
    let tol = REL_TOL * horizon.max(1.0);
    let (a, d) = task.window();
    for (t0, t1, v) in alloc.segments() {
        if v > 1.0 + REL_TOL {
            return Err(infeasible(format!("allocation value {v} exceeds 1")));
        }
        if v > 1e-12 && (t1 > d + tol || t0 < a - tol) {
            return Err(infeasible(format!(
                "support [{t0}, {t1}) outside window [{a}, {d}]"
            )));
        }
    }
    let mass = alloc.integral();
    if (mass - task.duration()).abs() > REL_TOL * task.duration() {
        return Err(infeasible(format!(
            "allocation mass {mass} differs from duration {}",
            task.duration()
        )));
    }
    Ok(())
}

/// Total cost of a load profile: exact sum of `segment length * C(value)`.
pub fn schedule_cost(cost: &CostFunction, load: &LoadProfile) -> f64 {
    load.segments()
        .map(|(t0, t1, v)| (t1 - t0) * cost.eval_nonneg(v))
        .sum()
}
