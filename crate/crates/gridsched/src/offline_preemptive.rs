//! Offline preemptive scheduling by iterative per-task load balancing.
//!
//! Each task's best response is the water-filling allocation that raises the
//! total load to a constant level wherever the allocation is interior; the
//! solver sweeps tasks until a full round no longer improves the objective.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg64;
use serde::Serialize;
use thiserror::Error;

use crate::task_model::{
    schedule_cost, CostFunction, DemandTask, LoadProfile, ModelError, Schedule, TaskId, REL_TOL,
};

#[derive(Debug, Error)]
pub enum BalanceError {
    #[error("task {id}: duration {duration} exceeds window length {window}")]
    InfeasibleTask { id: TaskId, duration: f64, window: f64 },
    #[error("task {id}: water-level search failed to bracket the target mass")]
    LevelSearchFailed { id: TaskId },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Order in which tasks take their best-response turn within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    /// Round-robin in input order: 1, ..., n, 1, ..., n, ...
    Sequential,
    /// A fresh random permutation each round, derived from the seed.
    RandomPermutationPerRound { seed: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct BalanceConfig {
    pub sweep_order: SweepOrder,
    /// Relative per-round objective decrease below which the sweep stops.
    pub objective_tolerance: f64,
    pub max_rounds: usize,
    /// Absolute tolerance on the allocated mass of a single best response.
    pub waterlevel_tolerance: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            sweep_order: SweepOrder::Sequential,
            objective_tolerance: 1e-8,
            max_rounds: 500,
            waterlevel_tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceResult {
    pub schedule: Schedule,
    pub load: LoadProfile,
    pub objective: f64,
    pub rounds_used: usize,
    pub converged: bool,
    /// Objective after the initial feasible schedule and after every single
    /// best-response update, in order.
    pub step_objectives: Vec<f64>,
}

const BISECT_ITERS: usize = 200;

/// Water-filling best response of one task against the load of the others.
///
/// Returns the allocation `x(t) = clamp((level - other_load(t)) / power, 0, 1)`
/// on the task window and zero elsewhere, with the water level chosen so the
/// allocation integrates to the task duration. This is the KKT point of the
/// single-task subproblem for any increasing convex cost (the cost enters
/// only through monotonicity of its derivative, so it is not evaluated here).
pub fn best_response(
    task: &DemandTask,
    other_load: &LoadProfile,
    waterlevel_tolerance: f64,
) -> Result<LoadProfile, BalanceError> {
    let horizon = other_load.horizon();
    let (a, d) = task.window();
    let window = d - a;
    let tol = REL_TOL * horizon.max(1.0);
    if a < -tol || d > horizon + tol {
        return Err(ModelError::WindowOutsideHorizon {
            id: task.id(),
            arrival: a,
            deadline: d,
            horizon,
        }
        .into());
    }
    if task.duration() > window * (1.0 + REL_TOL) {
        return Err(BalanceError::InfeasibleTask {
            id: task.id(),
            duration: task.duration(),
            window,
        });
    }
    // Zero slack forces full allocation; no level search needed.
    if window - task.duration() <= REL_TOL * task.duration() {
        return Ok(full_window_allocation(task, horizon)?);
    }

    let segments = other_load.restricted(a, d);
    debug_assert!(!segments.is_empty());
    let power = task.power();
    let mut lo = segments.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
    let mut hi = segments
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max)
        + power;
    let mass_at = |level: f64| -> f64 {
        segments
            .iter()
            .map(|&(len, v)| len * ((level - v) / power).clamp(0.0, 1.0))
            .sum()
    };
    let target = task.duration();
    let mut mass_lo = mass_at(lo);
    let mut mass_hi = mass_at(hi);
    // Mass is continuous and nondecreasing in the level, 0 at `lo` and the
    // full window length at `hi`, so a feasible task always brackets.
    if mass_lo > target || mass_hi < target - waterlevel_tolerance {
        return Err(BalanceError::LevelSearchFailed { id: task.id() });
    }
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let m = mass_at(mid);
        if m < target {
            lo = mid;
            mass_lo = m;
        } else {
            hi = mid;
            mass_hi = m;
        }
    }
    // Mass is piecewise linear in the level; one secant step on the final
    // bracket pins the target to machine precision.
    let level = if mass_hi > mass_lo {
        lo + (target - mass_lo) * (hi - lo) / (mass_hi - mass_lo)
    } else {
        0.5 * (lo + hi)
    };
    if (mass_at(level) - target).abs() > waterlevel_tolerance {
        return Err(BalanceError::LevelSearchFailed { id: task.id() });
    }

    // Assemble the allocation on [0, horizon].
    let mut breakpoints = vec![0.0];
    let mut values = Vec::new();
    if a > 0.0 {
        breakpoints.push(a);
        values.push(0.0);
    }
    let mut t = a;
    for (len, v) in segments {
        t += len;
        breakpoints.push(t);
        values.push(((level - v) / power).clamp(0.0, 1.0));
    }
    if d < horizon {
        breakpoints.push(horizon);
        values.push(0.0);
    } else {
        *breakpoints.last_mut().expect("nonempty") = horizon;
    }
    Ok(LoadProfile::from_parts(breakpoints, values)?)
}

fn full_window_allocation(task: &DemandTask, horizon: f64) -> Result<LoadProfile, ModelError> {
    let (a, d) = task.window();
    LoadProfile::rectangle(horizon, a.max(0.0), d.min(horizon), 1.0)
}

/// Iterative load balancing over all tasks.
///
/// Starts from the uniform feasible allocation of every task, then applies
/// best responses in sweep order. The objective is non-increasing at every
/// step; the sweep stops once a full round improves it by less than
/// `objective_tolerance` (relative) or `max_rounds` is reached.
pub fn solve(
    tasks: &[DemandTask],
    cost: &CostFunction,
    horizon: f64,
    config: &BalanceConfig,
) -> Result<BalanceResult, BalanceError> {
    assert!(config.max_rounds >= 1, "max_rounds must be at least 1");
    assert!(
        config.objective_tolerance > 0.0 && config.waterlevel_tolerance > 0.0,
        "tolerances must be positive"
    );
    let mut seen = std::collections::BTreeSet::new();
    for t in tasks {
        if !seen.insert(t.id()) {
            return Err(ModelError::DuplicateTaskId { id: t.id() }.into());
        }
    }

    // Initial feasible point: uniform spreading over each window.
    let mut allocations: Vec<LoadProfile> = Vec::with_capacity(tasks.len());
    let mut total = LoadProfile::zero(horizon)?;
    for task in tasks {
        let (a, d) = task.window();
        let window = d - a;
        if task.duration() > window * (1.0 + REL_TOL) {
            return Err(BalanceError::InfeasibleTask {
                id: task.id(),
                duration: task.duration(),
                window,
            });
        }
        let tol = REL_TOL * horizon.max(1.0);
        if a < -tol || d > horizon + tol {
            return Err(ModelError::WindowOutsideHorizon {
                id: task.id(),
                arrival: a,
                deadline: d,
                horizon,
            }
            .into());
        }
        let level = (task.duration() / window).min(1.0);
        let alloc = if window - task.duration() <= REL_TOL * task.duration() {
            full_window_allocation(task, horizon)?
        } else {
            LoadProfile::rectangle(horizon, a.max(0.0), d.min(horizon), level)?
        };
        total = total.add_scaled(&alloc, task.power())?;
        allocations.push(alloc);
    }

    let mut objective = schedule_cost(cost, &total);
    let mut step_objectives = vec![objective];
    let mut rounds_used = 0;
    let mut converged = tasks.is_empty();
    let mut rng = match config.sweep_order {
        SweepOrder::RandomPermutationPerRound { seed } => Some(Pcg64::seed_from_u64(seed)),
        SweepOrder::Sequential => None,
    };

    for _round in 0..config.max_rounds {
        if tasks.is_empty() {
            break;
        }
        rounds_used += 1;
        let round_start = objective;
        let mut order: Vec<usize> = (0..tasks.len()).collect();
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for idx in order {
            let task = &tasks[idx];
            let without = total.sub_scaled_clamped(&allocations[idx], task.power())?;
            let updated = best_response(task, &without, config.waterlevel_tolerance)?;
            total = without.add_scaled(&updated, task.power())?;
            allocations[idx] = updated;
            objective = schedule_cost(cost, &total);
            step_objectives.push(objective);
        }
        let decrease = round_start - objective;
        if decrease < config.objective_tolerance * round_start.abs().max(1e-300) {
            converged = true;
            break;
        }
    }

    // Recompute the final load from scratch so the reported objective is free
    // of incremental subtraction residue.
    let mut load = LoadProfile::zero(horizon)?;
    for (task, alloc) in tasks.iter().zip(&allocations) {
        load = load.add_scaled(alloc, task.power())?;
    }
    let objective = schedule_cost(cost, &load);

    let schedule = Schedule::Preemptive {
        allocations: tasks
            .iter()
            .map(|t| t.id())
            .zip(allocations)
            .collect::<BTreeMap<TaskId, LoadProfile>>(),
    };
    Ok(BalanceResult {
        schedule,
        load,
        objective,
        rounds_used,
        converged,
        step_objectives,
    })
}

/// One task that kept a fractional allocation in the relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FractionalEntry {
    pub task_id: TaskId,
    /// Mass allocated at interior levels, `integral of x over {0 < x < 1}`.
    pub fractional_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalReport {
    pub entries: Vec<FractionalEntry>,
    pub total_fractional_mass: f64,
}

impl FractionalReport {
    pub fn is_integral(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reports which tasks the relaxation left fractional, and by how much, so
/// callers know the surface of the relaxation-integrality gap.
pub fn rounding_hint(result: &BalanceResult) -> FractionalReport {
    let mut entries = Vec::new();
    let mut total = 0.0;
    if let Schedule::Preemptive { allocations } = &result.schedule {
        for (&id, alloc) in allocations {
            let mass: f64 = alloc
                .segments()
                .filter(|&(_, _, v)| v > 0.0 && v < 1.0)
                .map(|(t0, t1, v)| (t1 - t0) * v)
                .sum();
            if mass > 0.0 {
                entries.push(FractionalEntry {
                    task_id: id,
                    fractional_mass: mass,
                });
                total += mass;
            }
        }
    }
    FractionalReport {
        entries,
        total_fractional_mass: total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn squared() -> CostFunction {
        CostFunction::quadratic(1.0, 0.0, 0.0).unwrap()
    }

    fn task(id: TaskId, a: f64, s: f64, p: f64, d: f64) -> DemandTask {
        DemandTask::new(id, a, s, p, d).unwrap()
    }

    #[test]
    fn best_response_uniform_over_empty_window() {
        let t = task(1, 0.0, 2.0, 1.0, 4.0);
        let x = best_response(&t, &LoadProfile::zero(4.0).unwrap(), 1e-9).unwrap();
        assert_eq!(x.values(), &[0.5]);
        assert!((x.integral() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn best_response_fills_the_valley() {
        let t = task(1, 0.0, 1.0, 1.0, 2.0);
        let other =
            LoadProfile::from_parts(vec![0.0, 1.0, 2.0], vec![1.0, 0.0]).unwrap();
        let x = best_response(&t, &other, 1e-9).unwrap();
        assert_eq!(x.breakpoints(), &[0.0, 1.0, 2.0]);
        assert_eq!(x.values(), &[0.0, 1.0]);
        // post-update load is flat at the water level 1
        let after = other.add_scaled(&x, 1.0).unwrap();
        assert_eq!(after.values(), &[1.0]);
    }

    #[test]
    fn best_response_zero_slack_full_allocation() {
        let t = task(1, 0.0, 2.0, 1.0, 2.0);
        let other =
            LoadProfile::from_parts(vec![0.0, 0.7, 2.0], vec![3.0, 0.1]).unwrap();
        let x = best_response(&t, &other, 1e-9).unwrap();
        assert_eq!(x.values(), &[1.0]);
    }

    #[test]
    fn best_response_rejects_infeasible_task() {
        // fractional infeasibility: duration longer than window
        let t = DemandTask::new(1, 0.0, 3.0, 1.0, 3.0).unwrap();
        let other = LoadProfile::zero(2.5).unwrap();
        // window [0,3] extends past horizon 2.5
        assert!(best_response(&t, &other, 1e-9).is_err());
    }

    #[test]
    fn water_level_property_on_interior_segments() {
        let t = task(1, 0.0, 2.5, 2.0, 8.0);
        let other = LoadProfile::from_parts(
            vec![0.0, 2.0, 3.0, 5.0, 8.0],
            vec![4.0, 0.5, 2.0, 6.0],
        )
        .unwrap();
        let x = best_response(&t, &other, 1e-9).unwrap();
        assert!((x.integral() - 2.5).abs() < 1e-9);
        let after = other.add_scaled(&x, t.power()).unwrap();
        let mut level = None;
        for ((_, _, xv), (_, _, lv)) in x.segments().zip(after.segments()) {
            if xv > 0.0 && xv < 1.0 {
                match level {
                    None => level = Some(lv),
                    Some(l) => assert!((lv - l).abs() < 1e-9, "level varies: {lv} vs {l}"),
                }
            }
        }
        assert!(level.is_some(), "expected at least one interior segment");
    }

    #[test]
    fn solve_symmetric_two_tasks_is_flat() {
        let tasks = [task(1, 0.0, 1.0, 1.0, 2.0), task(2, 0.0, 1.0, 1.0, 2.0)];
        let res = solve(&tasks, &squared(), 2.0, &BalanceConfig::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.load.values(), &[1.0]);
        assert!((res.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn solve_single_task_objective() {
        let tasks = [task(1, 0.0, 2.0, 1.0, 4.0)];
        let res = solve(&tasks, &squared(), 4.0, &BalanceConfig::default()).unwrap();
        assert!((res.objective - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solve_objective_monotone_per_step() {
        let tasks = [
            task(1, 0.0, 2.0, 1.5, 5.0),
            task(2, 1.0, 3.0, 1.0, 9.0),
            task(3, 4.0, 2.0, 2.0, 10.0),
            task(4, 0.0, 1.0, 1.0, 10.0),
        ];
        let res = solve(&tasks, &squared(), 10.0, &BalanceConfig::default()).unwrap();
        for w in res.step_objectives.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "objective increased: {} -> {}", w[0], w[1]);
        }
        assert!(res.converged);
    }

    #[test]
    fn solve_random_order_matches_sequential_objective() {
        let tasks = [
            task(1, 0.0, 2.0, 1.0, 6.0),
            task(2, 2.0, 2.0, 2.0, 8.0),
            task(3, 1.0, 4.0, 1.0, 9.0),
        ];
        let seq = solve(&tasks, &squared(), 9.0, &BalanceConfig::default()).unwrap();
        let rnd = solve(
            &tasks,
            &squared(),
            9.0,
            &BalanceConfig {
                sweep_order: SweepOrder::RandomPermutationPerRound { seed: 7 },
                ..BalanceConfig::default()
            },
        )
        .unwrap();
        assert!((seq.objective - rnd.objective).abs() < 1e-6 * seq.objective);
    }

    #[test]
    fn solve_result_feasible_under_total_load() {
        let tasks = [
            task(1, 0.0, 2.0, 1.5, 5.0),
            task(2, 1.0, 3.0, 1.0, 9.0),
            task(3, 4.0, 2.0, 2.0, 10.0),
        ];
        let res = solve(&tasks, &squared(), 10.0, &BalanceConfig::default()).unwrap();
        let load = crate::task_model::total_load(&tasks, &res.schedule, 10.0).unwrap();
        let diff: f64 = load
            .segments()
            .zip(res.load.segments())
            .map(|((_, _, a), (_, _, b))| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9);
        assert!((schedule_cost(&squared(), &load) - res.objective).abs() < 1e-9);
    }

    #[test]
    fn rounding_hint_examples() {
        // fully integral: zero slack task
        let tasks = [task(1, 0.0, 2.0, 1.0, 2.0)];
        let res = solve(&tasks, &squared(), 2.0, &BalanceConfig::default()).unwrap();
        assert!(rounding_hint(&res).is_integral());

        // uniform 0.5 allocation: one entry with fractional mass 2
        let tasks = [task(1, 0.0, 2.0, 1.0, 4.0)];
        let res = solve(&tasks, &squared(), 4.0, &BalanceConfig::default()).unwrap();
        let report = rounding_hint(&res);
        assert_eq!(report.entries.len(), 1);
        assert!((report.entries[0].fractional_mass - 2.0).abs() < 1e-9);

        // symmetric instance: report whatever solve produced (two entries of
        // mass 1 each, levels 0.5)
        let tasks = [task(1, 0.0, 1.0, 1.0, 2.0), task(2, 0.0, 1.0, 1.0, 2.0)];
        let res = solve(&tasks, &squared(), 2.0, &BalanceConfig::default()).unwrap();
        let report = rounding_hint(&res);
        assert_eq!(report.entries.len(), 2);
        assert!((report.total_fractional_mass - 2.0).abs() < 1e-9);
    }
}
