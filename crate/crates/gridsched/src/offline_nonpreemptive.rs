//! Offline non-preemptive scheduling via its bin-packing correspondence.
//!
//! For the uniform instance (common release time, common deadline `D`, common
//! power step `p`) minimizing peak power is one-dimensional bin packing:
//! items are task durations, bins have capacity `D`, and each bin is one
//! power level of step `p`. This module provides an exact branch-and-bound
//! solver, the first-fit-decreasing heuristic, the decision-version check,
//! the power-quantization expansion, and a small-scale exact scheduler over
//! discretized start times for general instances.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task_model::{
    schedule_cost, CostFunction, DemandTask, LoadProfile, ModelError, Schedule, TaskId, REL_TOL,
};

#[derive(Debug, Error)]
pub enum PackingError {
    #[error("item {index} of size {size} exceeds bin capacity {capacity}")]
    OversizedItem { index: usize, size: f64, capacity: f64 },
    #[error("invalid packing instance: {reason}")]
    InvalidInstance { reason: String },
    #[error("search budget of {budget} nodes exceeded; best known uses {} bins", best_known.bin_count)]
    BudgetExceeded { budget: u64, best_known: PackingResult },
    #[error("task {id}: power {power} is not an integer multiple of the quantum {quantum}")]
    NonMultiplePower { id: TaskId, power: f64, quantum: f64 },
    #[error("start-time search budget of {budget} nodes exceeded")]
    GridBudgetExceeded { budget: u64, best_known: Option<GridSchedule> },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Node budget for the exact searches. NP-hardness surfaces as a typed
/// error instead of a hang.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchBudget(pub u64);

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget(10_000_000)
    }
}

/// The uniform scheduling instance viewed as bin packing: durations are item
/// sizes, the common deadline is the bin capacity, and each bin is one power
/// level of step `power_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingInstance {
    pub item_sizes: Vec<f64>,
    pub capacity: f64,
    pub power_step: f64,
}

impl PackingInstance {
    pub fn new(item_sizes: Vec<f64>, capacity: f64, power_step: f64) -> Result<Self, PackingError> {
        let invalid = |reason: String| PackingError::InvalidInstance { reason };
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(invalid(format!("capacity must be positive, got {capacity}")));
        }
        if !(power_step.is_finite() && power_step > 0.0) {
            return Err(invalid(format!("power step must be positive, got {power_step}")));
        }
        for (i, &s) in item_sizes.iter().enumerate() {
            if !(s.is_finite() && s > 0.0) {
                return Err(invalid(format!("item {i} must have positive size, got {s}")));
            }
        }
        Ok(Self {
            item_sizes,
            capacity,
            power_step,
        })
    }

    fn fits(&self, load: f64, size: f64) -> bool {
        load + size <= self.capacity * (1.0 + REL_TOL)
    }

    fn oversized(&self) -> Option<(usize, f64)> {
        self.item_sizes
            .iter()
            .enumerate()
            .find(|&(_, &s)| s > self.capacity * (1.0 + REL_TOL))
            .map(|(i, &s)| (i, s))
    }
}

/// A partition of the items into bins of capacity `D`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PackingResult {
    /// Item indices per bin; bins partition the items.
    pub bins: Vec<Vec<usize>>,
    pub bin_count: usize,
    /// `bin_count * power_step`.
    pub peak_power: f64,
}

impl PackingResult {
    fn new(bins: Vec<Vec<usize>>, power_step: f64) -> Self {
        let bin_count = bins.len();
        Self {
            bins,
            bin_count,
            peak_power: bin_count as f64 * power_step,
        }
    }

    /// Checks that the bins partition the items and respect the capacity.
    pub fn validate(&self, instance: &PackingInstance) -> Result<(), PackingError> {
        let invalid = |reason: String| PackingError::InvalidInstance { reason };
        let mut seen = vec![false; instance.item_sizes.len()];
        for bin in &self.bins {
            let mut load = 0.0;
            for &item in bin {
                if item >= seen.len() || seen[item] {
                    return Err(invalid(format!("item {item} missing or repeated")));
                }
                seen[item] = true;
                load += instance.item_sizes[item];
            }
            if load > instance.capacity * (1.0 + REL_TOL) {
                return Err(invalid(format!(
                    "bin load {load} exceeds capacity {}",
                    instance.capacity
                )));
            }
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            return Err(invalid(format!("item {missing} not packed")));
        }
        Ok(())
    }
}

/// Decision version: can the items be partitioned into at most `m` bins?
/// Exact; an item larger than the capacity makes the answer `false` for
/// every `m`.
pub fn decide_packing(
    instance: &PackingInstance,
    m: usize,
    budget: SearchBudget,
) -> Result<bool, PackingError> {
    assert!(m >= 1, "m must be at least 1");
    if instance.oversized().is_some() {
        return Ok(false);
    }
    let mut nodes = 0u64;
    match try_pack(instance, m, budget, &mut nodes) {
        Ok(witness) => Ok(witness.is_some()),
        Err(e) => Err(e),
    }
}

/// Provably minimal number of bins by branch-and-bound, seeded with the
/// `ceil(total/capacity)` lower bound and the first-fit-decreasing upper
/// bound. Intended for desk-scale instances.
pub fn exact_min_bins(
    instance: &PackingInstance,
    budget: SearchBudget,
) -> Result<PackingResult, PackingError> {
    if instance.item_sizes.is_empty() {
        return Ok(PackingResult::new(Vec::new(), instance.power_step));
    }
    if let Some((index, size)) = instance.oversized() {
        return Err(PackingError::OversizedItem {
            index,
            size,
            capacity: instance.capacity,
        });
    }
    let ffd = first_fit_decreasing(instance)?;
    let total: f64 = instance.item_sizes.iter().sum();
    let lower = ((total / instance.capacity) - REL_TOL).ceil().max(1.0) as usize;
    let mut nodes = 0u64;
    for m in lower..ffd.bin_count {
        match try_pack(instance, m, budget, &mut nodes) {
            Ok(Some(bins)) => {
                let result = PackingResult::new(bins, instance.power_step);
                result.validate(instance)?;
                return Ok(result);
            }
            Ok(None) => continue,
            Err(PackingError::BudgetExceeded { budget, .. }) => {
                return Err(PackingError::BudgetExceeded {
                    budget,
                    best_known: ffd,
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ffd)
}

/// Branch-and-bound feasibility search for a packing into `m` bins.
///
/// Items are placed in descending size order; identical residual capacities
/// are only branched once per node, and failed `(item, residuals)` states are
/// memoized.
fn try_pack(
    instance: &PackingInstance,
    m: usize,
    budget: SearchBudget,
    nodes: &mut u64,
) -> Result<Option<Vec<Vec<usize>>>, PackingError> {
    let mut order: Vec<usize> = (0..instance.item_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        instance.item_sizes[b]
            .total_cmp(&instance.item_sizes[a])
            .then(a.cmp(&b))
    });
    let remaining: f64 = instance.item_sizes.iter().sum();
    let mut search = PackSearch {
        instance,
        order,
        m,
        budget: budget.0,
        nodes,
        bins: Vec::new(),
        failed: HashSet::new(),
    };
    if search.recurse(0, remaining)? {
        Ok(Some(search.bins.into_iter().map(|(_, items)| items).collect()))
    } else {
        Ok(None)
    }
}

struct PackSearch<'a> {
    instance: &'a PackingInstance,
    order: Vec<usize>,
    m: usize,
    budget: u64,
    nodes: &'a mut u64,
    bins: Vec<(f64, Vec<usize>)>,
    failed: HashSet<(usize, Vec<u64>)>,
}

impl PackSearch<'_> {
    fn state_key(&self, depth: usize) -> (usize, Vec<u64>) {
        let mut residuals: Vec<u64> = self
            .bins
            .iter()
            .map(|(load, _)| (self.instance.capacity - load).to_bits())
            .collect();
        residuals.sort_unstable();
        (depth, residuals)
    }

    fn recurse(&mut self, depth: usize, remaining: f64) -> Result<bool, PackingError> {
        if depth == self.order.len() {
            return Ok(true);
        }
        *self.nodes += 1;
        if *self.nodes > self.budget {
            return Err(PackingError::BudgetExceeded {
                budget: self.budget,
                best_known: PackingResult::new(Vec::new(), self.instance.power_step),
            });
        }
        // Aggregate capacity bound: the unplaced mass must fit in the open
        // residuals plus the bins still allowed to open.
        let open_residual: f64 = self
            .bins
            .iter()
            .map(|(load, _)| self.instance.capacity - load)
            .sum();
        let can_open = (self.m - self.bins.len()) as f64 * self.instance.capacity;
        if remaining > (open_residual + can_open) * (1.0 + REL_TOL) {
            return Ok(false);
        }
        if self.failed.contains(&self.state_key(depth)) {
            return Ok(false);
        }
        let item = self.order[depth];
        let size = self.instance.item_sizes[item];
        let mut tried: Vec<u64> = Vec::new();
        for b in 0..self.bins.len() {
            let load = self.bins[b].0;
            if !self.instance.fits(load, size) {
                continue;
            }
            // symmetry break: bins with equal residual are interchangeable
            if tried.contains(&load.to_bits()) {
                continue;
            }
            tried.push(load.to_bits());
            self.bins[b].0 += size;
            self.bins[b].1.push(item);
            if self.recurse(depth + 1, remaining - size)? {
                // keep the whole witness, including deeper placements
                return Ok(true);
            }
            self.bins[b].1.pop();
            self.bins[b].0 = load;
        }
        if self.bins.len() < self.m {
            self.bins.push((size, vec![item]));
            if self.recurse(depth + 1, remaining - size)? {
                return Ok(true);
            }
            self.bins.pop();
        }
        let key = self.state_key(depth);
        self.failed.insert(key);
        Ok(false)
    }
}

/// Deterministic first-fit-decreasing heuristic. Never beats the exact
/// solver; classical guarantee is at most `(11/9) * OPT + 1` bins.
pub fn first_fit_decreasing(instance: &PackingInstance) -> Result<PackingResult, PackingError> {
    if let Some((index, size)) = instance.oversized() {
        return Err(PackingError::OversizedItem {
            index,
            size,
            capacity: instance.capacity,
        });
    }
    let mut order: Vec<usize> = (0..instance.item_sizes.len()).collect();
    order.sort_by(|&a, &b| {
        instance.item_sizes[b]
            .total_cmp(&instance.item_sizes[a])
            .then(a.cmp(&b))
    });
    let mut bins: Vec<(f64, Vec<usize>)> = Vec::new();
    for item in order {
        let size = instance.item_sizes[item];
        match bins.iter_mut().find(|(load, _)| instance.fits(*load, size)) {
            Some((load, items)) => {
                *load += size;
                items.push(item);
            }
            None => bins.push((size, vec![item])),
        }
    }
    Ok(PackingResult::new(
        bins.into_iter().map(|(_, items)| items).collect(),
        instance.power_step,
    ))
}

/// Lays the items of each bin head-to-tail from time zero; every task then
/// finishes by the common deadline and the peak load is exactly
/// `bin_count * power_step`.
pub fn schedule_from_packing(
    instance: &PackingInstance,
    result: &PackingResult,
) -> Result<(Schedule, LoadProfile), PackingError> {
    let mut starts: BTreeMap<TaskId, f64> = BTreeMap::new();
    let mut load = LoadProfile::zero(instance.capacity)?;
    for bin in &result.bins {
        let mut t = 0.0;
        for &item in bin {
            starts.insert(item as TaskId, t);
            t += instance.item_sizes[item];
        }
        if t > instance.capacity * (1.0 + REL_TOL) {
            return Err(PackingError::InvalidInstance {
                reason: format!("bin overflows capacity: {t} > {}", instance.capacity),
            });
        }
        if t > 0.0 {
            let rect =
                LoadProfile::rectangle(instance.capacity, 0.0, t.min(instance.capacity), 1.0)?;
            load = load.add_scaled(&rect, instance.power_step)?;
        }
    }
    Ok((Schedule::NonPreemptive { starts }, load))
}

/// Expands tasks whose power is an integer multiple of `quantum` into that
/// many unit tasks of power `quantum` with identical timing, preserving the
/// total power-time mass. Replica ids are assigned sequentially.
pub fn quantize_powers(
    tasks: &[DemandTask],
    quantum: f64,
) -> Result<Vec<DemandTask>, PackingError> {
    if !(quantum.is_finite() && quantum > 0.0) {
        return Err(PackingError::InvalidInstance {
            reason: format!("quantum must be positive, got {quantum}"),
        });
    }
    let mut out = Vec::new();
    let mut next_id: TaskId = 0;
    for task in tasks {
        let ratio = task.power() / quantum;
        let multiple = ratio.round();
        if multiple < 1.0 || (ratio - multiple).abs() > REL_TOL * ratio.max(1.0) {
            return Err(PackingError::NonMultiplePower {
                id: task.id(),
                power: task.power(),
                quantum,
            });
        }
        for _ in 0..multiple as u64 {
            out.push(DemandTask::new(
                next_id,
                task.arrival(),
                task.duration(),
                quantum,
                task.deadline(),
            )?);
            next_id += 1;
        }
    }
    Ok(out)
}

/// A start-time vector found by the grid search, with its objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSchedule {
    pub schedule: Schedule,
    pub objective: f64,
    /// Nodes explored by the branch-and-bound.
    pub explored: u64,
}

/// Exhaustive minimum-cost search over start times on the grid
/// `{arrival, arrival + step, ...}` capped by `deadline - duration` (the
/// window endpoint is included even when it is off-grid). Branch-and-bound
/// on partial cost; ties resolve to the lexicographically smallest start
/// vector in task order. Small instances only.
pub fn exact_nonpreemptive_min_cost(
    tasks: &[DemandTask],
    cost: &CostFunction,
    horizon: f64,
    grid_step: f64,
    budget: SearchBudget,
) -> Result<GridSchedule, PackingError> {
    if !(grid_step.is_finite() && grid_step > 0.0) {
        return Err(PackingError::InvalidInstance {
            reason: format!("grid step must be positive, got {grid_step}"),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for task in tasks {
        if !seen.insert(task.id()) {
            return Err(ModelError::DuplicateTaskId { id: task.id() }.into());
        }
        let tol = REL_TOL * horizon.max(1.0);
        if task.arrival() < -tol || task.deadline() > horizon + tol {
            return Err(ModelError::WindowOutsideHorizon {
                id: task.id(),
                arrival: task.arrival(),
                deadline: task.deadline(),
                horizon,
            }
            .into());
        }
    }
    // Candidate starts per task, ascending.
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(tasks.len());
    for task in tasks {
        let latest = task.deadline() - task.duration();
        let mut c = Vec::new();
        let mut k = 0u64;
        loop {
            let t = task.arrival() + k as f64 * grid_step;
            if t > latest + REL_TOL * horizon.max(1.0) {
                break;
            }
            c.push(t.min(latest));
            k += 1;
        }
        if c.is_empty() {
            c.push(task.arrival());
        }
        let last = *c.last().expect("nonempty");
        if latest - last > REL_TOL * horizon.max(1.0) {
            c.push(latest);
        }
        candidates.push(c);
    }

    struct Search<'a> {
        tasks: &'a [DemandTask],
        candidates: &'a [Vec<f64>],
        cost: &'a CostFunction,
        budget: u64,
        nodes: u64,
        best_objective: f64,
        best_starts: Option<Vec<f64>>,
        chosen: Vec<f64>,
    }

    impl Search<'_> {
        fn run(&mut self, depth: usize, partial: &LoadProfile) -> Result<(), PackingError> {
            if depth == self.tasks.len() {
                let objective = schedule_cost(self.cost, partial);
                if objective < self.best_objective {
                    self.best_objective = objective;
                    self.best_starts = Some(self.chosen.clone());
                }
                return Ok(());
            }
            let task = &self.tasks[depth];
            for &start in &self.candidates[depth] {
                self.nodes += 1;
                if self.nodes > self.budget {
                    return Err(PackingError::GridBudgetExceeded {
                        budget: self.budget,
                        best_known: None,
                    });
                }
                let from = start.max(0.0);
                let to = (start + task.duration()).min(partial.horizon());
                let rect = LoadProfile::rectangle(partial.horizon(), from, to, 1.0)?;
                let with = partial.add_scaled(&rect, task.power())?;
                // Additional tasks only raise the load, and the cost is
                // nondecreasing, so the partial cost is a lower bound.
                if schedule_cost(self.cost, &with) >= self.best_objective {
                    continue;
                }
                self.chosen.push(start);
                self.run(depth + 1, &with)?;
                self.chosen.pop();
            }
            Ok(())
        }
    }

    let zero = LoadProfile::zero(horizon)?;
    let mut search = Search {
        tasks,
        candidates: &candidates,
        cost,
        budget: budget.0,
        nodes: 0,
        best_objective: f64::INFINITY,
        best_starts: None,
        chosen: Vec::new(),
    };
    let outcome = search.run(0, &zero);
    let to_schedule = |starts: &[f64], objective: f64, explored: u64| GridSchedule {
        schedule: Schedule::NonPreemptive {
            starts: tasks
                .iter()
                .map(|t| t.id())
                .zip(starts.iter().copied())
                .collect(),
        },
        objective,
        explored,
    };
    match outcome {
        Ok(()) => {
            let starts = search.best_starts.unwrap_or_default();
            if tasks.is_empty() {
                return Ok(GridSchedule {
                    schedule: Schedule::NonPreemptive { starts: BTreeMap::new() },
                    objective: schedule_cost(cost, &zero),
                    explored: search.nodes,
                });
            }
            Ok(to_schedule(&starts, search.best_objective, search.nodes))
        }
        Err(PackingError::GridBudgetExceeded { budget, .. }) => {
            Err(PackingError::GridBudgetExceeded {
                budget,
                best_known: search
                    .best_starts
                    .as_ref()
                    .map(|s| to_schedule(s, search.best_objective, search.nodes)),
            })
        }
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(sizes: &[f64], capacity: f64, step: f64) -> PackingInstance {
        PackingInstance::new(sizes.to_vec(), capacity, step).unwrap()
    }

    #[test]
    fn decide_packing_examples() {
        let i = inst(&[3.0, 3.0, 2.0, 2.0], 5.0, 1.0);
        assert!(decide_packing(&i, 2, SearchBudget::default()).unwrap());
        assert!(!decide_packing(&i, 1, SearchBudget::default()).unwrap());
        let empty = inst(&[], 4.0, 1.0);
        assert!(decide_packing(&empty, 1, SearchBudget::default()).unwrap());
        // oversized item: infeasible for any m
        let big = inst(&[6.0], 5.0, 1.0);
        assert!(!decide_packing(&big, 3, SearchBudget::default()).unwrap());
    }

    #[test]
    fn exact_min_bins_examples() {
        let i = inst(&[3.0, 3.0, 2.0, 2.0], 5.0, 1.0);
        let r = exact_min_bins(&i, SearchBudget::default()).unwrap();
        assert_eq!(r.bin_count, 2);
        r.validate(&i).unwrap();
        let i = inst(&[4.0, 3.0, 3.0, 2.0, 2.0, 2.0], 8.0, 1.0);
        let r = exact_min_bins(&i, SearchBudget::default()).unwrap();
        assert_eq!(r.bin_count, 2);
        r.validate(&i).unwrap();
        let r = exact_min_bins(&inst(&[5.0, 5.0, 5.0], 5.0, 2.0), SearchBudget::default()).unwrap();
        assert_eq!(r.bin_count, 3);
        assert_eq!(r.peak_power, 6.0);
        // bins partition the items
        let mut all: Vec<usize> = r.bins.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn ffd_examples() {
        // FFD suboptimality: 3 bins where the optimum is 2
        let r = first_fit_decreasing(&inst(&[4.0, 3.0, 3.0, 2.0, 2.0, 2.0], 8.0, 1.0)).unwrap();
        assert_eq!(r.bin_count, 3);
        let r = first_fit_decreasing(&inst(&[3.0, 3.0, 2.0, 2.0], 5.0, 1.0)).unwrap();
        assert_eq!(r.bin_count, 2);
        let r = first_fit_decreasing(&inst(&[], 5.0, 1.0)).unwrap();
        assert_eq!(r.bin_count, 0);
        assert!(first_fit_decreasing(&inst(&[7.0], 5.0, 1.0)).is_err());
    }

    #[test]
    fn schedule_from_packing_examples() {
        let i = inst(&[3.0, 2.0], 5.0, 1.0);
        let packing = PackingResult::new(vec![vec![0, 1]], 1.0);
        let (schedule, load) = schedule_from_packing(&i, &packing).unwrap();
        match &schedule {
            Schedule::NonPreemptive { starts } => {
                assert_eq!(starts[&0], 0.0);
                assert_eq!(starts[&1], 3.0);
            }
            _ => panic!("expected non-preemptive schedule"),
        }
        assert_eq!(load.values(), &[1.0]);
        assert_eq!(load.max_value(), 1.0);

        let i = inst(&[3.0, 3.0, 2.0, 2.0], 5.0, 2.0);
        let packing = exact_min_bins(&i, SearchBudget::default()).unwrap();
        let (_, load) = schedule_from_packing(&i, &packing).unwrap();
        assert_eq!(load.max_value(), 4.0);

        let empty = inst(&[], 5.0, 1.0);
        let packing = PackingResult::new(vec![], 1.0);
        let (_, load) = schedule_from_packing(&empty, &packing).unwrap();
        assert_eq!(load.values(), &[0.0]);
    }

    #[test]
    fn quantize_powers_examples() {
        let t = DemandTask::new(5, 1.0, 2.0, 3.0, 4.0).unwrap();
        let out = quantize_powers(&[t], 1.0).unwrap();
        assert_eq!(out.len(), 3);
        for r in &out {
            assert_eq!(r.power(), 1.0);
            assert_eq!(r.arrival(), 1.0);
            assert_eq!(r.duration(), 2.0);
            assert_eq!(r.deadline(), 4.0);
        }
        let t = DemandTask::new(6, 0.0, 1.0, 2.5, 2.0).unwrap();
        assert_eq!(quantize_powers(&[t], 0.5).unwrap().len(), 5);
        // identity expansion
        let t = DemandTask::new(7, 0.0, 1.0, 2.0, 2.0).unwrap();
        let out = quantize_powers(&[t], 2.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].power(), 2.0);
        // non-multiple rejected with the task named
        let t = DemandTask::new(8, 0.0, 1.0, 2.3, 2.0).unwrap();
        match quantize_powers(&[t], 1.0) {
            Err(PackingError::NonMultiplePower { id: 8, .. }) => {}
            other => panic!("expected NonMultiplePower, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_single_task_ties_to_arrival() {
        let t = DemandTask::new(1, 0.5, 1.0, 1.0, 3.0).unwrap();
        let sq = CostFunction::quadratic(1.0, 0.0, 0.0).unwrap();
        let r =
            exact_nonpreemptive_min_cost(&[t], &sq, 4.0, 0.5, SearchBudget::default()).unwrap();
        match &r.schedule {
            Schedule::NonPreemptive { starts } => assert_eq!(starts[&1], 0.5),
            _ => unreachable!(),
        }
    }

    #[test]
    fn grid_search_two_unit_tasks_avoid_overlap() {
        let t1 = DemandTask::new(1, 0.0, 1.0, 1.0, 2.0).unwrap();
        let t2 = DemandTask::new(2, 0.0, 1.0, 1.0, 2.0).unwrap();
        let sq = CostFunction::quadratic(1.0, 0.0, 0.0).unwrap();
        let r = exact_nonpreemptive_min_cost(&[t1, t2], &sq, 2.0, 1.0, SearchBudget::default())
            .unwrap();
        assert!((r.objective - 2.0).abs() < 1e-12);
        match &r.schedule {
            Schedule::NonPreemptive { starts } => {
                // lexicographically smallest among the two optimal vectors
                assert_eq!(starts[&1], 0.0);
                assert_eq!(starts[&2], 1.0);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn grid_search_budget_error() {
        let tasks: Vec<DemandTask> = (0..6)
            .map(|i| DemandTask::new(i, 0.0, 1.0, 1.0, 10.0).unwrap())
            .collect();
        let sq = CostFunction::quadratic(1.0, 0.0, 0.0).unwrap();
        match exact_nonpreemptive_min_cost(&tasks, &sq, 10.0, 0.5, SearchBudget(50)) {
            Err(PackingError::GridBudgetExceeded { budget: 50, .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_matches_packing_on_uniform_instance() {
        let sizes = [3.0, 3.0, 2.0, 2.0];
        let i = inst(&sizes, 5.0, 1.0);
        let packing = exact_min_bins(&i, SearchBudget::default()).unwrap();
        let (_, load) = schedule_from_packing(&i, &packing).unwrap();
        let sq = CostFunction::quadratic(1.0, 0.0, 0.0).unwrap();
        let packed_cost = schedule_cost(&sq, &load);
        let tasks: Vec<DemandTask> = sizes
            .iter()
            .enumerate()
            .map(|(n, &s)| DemandTask::new(n as TaskId, 0.0, s, 1.0, 5.0).unwrap())
            .collect();
        let r = exact_nonpreemptive_min_cost(&tasks, &sq, 5.0, 1.0, SearchBudget::default())
            .unwrap();
        assert!((r.objective - packed_cost).abs() < 1e-9);
    }

    #[test]
    fn packing_budget_error_carries_best_known() {
        // FFD needs 3 bins here while the lower bound is 2, so the search
        // must branch and the tiny budget trips immediately
        let i = inst(&[4.0, 3.0, 3.0, 2.0, 2.0, 2.0], 8.0, 1.0);
        match exact_min_bins(&i, SearchBudget(3)) {
            Err(PackingError::BudgetExceeded { best_known, .. }) => {
                assert_eq!(best_known.bin_count, 3);
            }
            Ok(r) => panic!("expected budget error, got {} bins", r.bin_count),
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }
}
