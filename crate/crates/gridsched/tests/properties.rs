//! Cross-module invariants on randomized-but-seeded instances.

mod common;

use std::collections::BTreeMap;

use common::TestRng;
use gridsched::offline_nonpreemptive::{
    exact_nonpreemptive_min_cost, quantize_powers, SearchBudget,
};
use gridsched::offline_preemptive::{solve, BalanceConfig};
use gridsched::task_model::{total_load, CostFunction, DemandTask, LoadProfile, Schedule};

fn squared() -> CostFunction {
    CostFunction::quadratic(1.0, 0.0, 0.0).unwrap()
}

fn random_instance(rng: &mut TestRng, n: usize, horizon: f64) -> Vec<DemandTask> {
    (0..n)
        .map(|id| {
            let duration = rng.range(0.5, 2.5);
            let arrival = rng.range(0.0, horizon - duration - 0.5);
            let deadline = arrival + duration + rng.range(0.0, horizon - arrival - duration);
            let power = [1.0, 2.0, 3.0][rng.int(0, 2) as usize];
            DemandTask::new(id as u64, arrival, duration, power, deadline.min(horizon)).unwrap()
        })
        .collect()
}

#[test]
fn relaxation_lower_bounds_nonpreemptive_search() {
    let mut rng = TestRng::new(0x0A11_0B22);
    let horizon = 8.0;
    for _ in 0..15 {
        let tasks = random_instance(&mut rng, 3, horizon);
        let relaxed = solve(&tasks, &squared(), horizon, &BalanceConfig::default()).unwrap();
        let grid = exact_nonpreemptive_min_cost(
            &tasks,
            &squared(),
            horizon,
            0.25,
            SearchBudget::default(),
        )
        .unwrap();
        assert!(
            relaxed.objective <= grid.objective * (1.0 + 1e-9) + 1e-9,
            "relaxation {} above grid optimum {}",
            relaxed.objective,
            grid.objective
        );
    }
}

#[test]
fn total_load_is_additive_over_task_partitions() {
    let mut rng = TestRng::new(0xADD_171FE);
    let horizon = 8.0;
    for _ in 0..10 {
        let tasks = random_instance(&mut rng, 6, horizon);
        let starts: BTreeMap<u64, f64> = tasks.iter().map(|t| (t.id(), t.arrival())).collect();
        let schedule = |subset: &[DemandTask]| {
            let starts: BTreeMap<u64, f64> =
                subset.iter().map(|t| (t.id(), starts[&t.id()])).collect();
            total_load(subset, &Schedule::NonPreemptive { starts }, horizon).unwrap()
        };
        let whole = schedule(&tasks);
        let split = rng.int(1, 5) as usize;
        let (left, right) = tasks.split_at(split);
        let sum = schedule(left).add_scaled(&schedule(right), 1.0).unwrap();
        assert_profiles_close(&whole, &sum, 1e-12);
    }
}

#[test]
fn quantization_preserves_total_load_pointwise() {
    let mut rng = TestRng::new(0xF00D_CAFE);
    let horizon = 8.0;
    for _ in 0..10 {
        let tasks = random_instance(&mut rng, 4, horizon);

        // non-preemptive: replicas inherit the original start time
        let starts: BTreeMap<u64, f64> = tasks.iter().map(|t| (t.id(), t.arrival())).collect();
        let before = total_load(
            &tasks,
            &Schedule::NonPreemptive {
                starts: starts.clone(),
            },
            horizon,
        )
        .unwrap();
        let expanded = quantize_powers(&tasks, 1.0).unwrap();
        // replica ids are assigned sequentially in task order
        let mut replica_starts: BTreeMap<u64, f64> = BTreeMap::new();
        let mut next_id = 0u64;
        for task in &tasks {
            for _ in 0..task.power().round() as u64 {
                replica_starts.insert(next_id, starts[&task.id()]);
                next_id += 1;
            }
        }
        let after = total_load(
            &expanded,
            &Schedule::NonPreemptive {
                starts: replica_starts,
            },
            horizon,
        )
        .unwrap();
        assert_profiles_close(&before, &after, 1e-9);

        // preemptive: every replica is given the original allocation
        let relaxed = solve(&tasks, &squared(), horizon, &BalanceConfig::default()).unwrap();
        let Schedule::Preemptive { allocations } = &relaxed.schedule else {
            unreachable!()
        };
        let mut replica_allocs: BTreeMap<u64, LoadProfile> = BTreeMap::new();
        let mut next_id = 0u64;
        for task in &tasks {
            for _ in 0..task.power().round() as u64 {
                replica_allocs.insert(next_id, allocations[&task.id()].clone());
                next_id += 1;
            }
        }
        let after = total_load(
            &expanded,
            &Schedule::Preemptive {
                allocations: replica_allocs,
            },
            horizon,
        )
        .unwrap();
        assert_profiles_close(&relaxed.load, &after, 1e-9);
    }
}

fn assert_profiles_close(a: &LoadProfile, b: &LoadProfile, tol: f64) {
    assert_eq!(a.horizon(), b.horizon());
    let mut points: Vec<f64> = a
        .breakpoints()
        .iter()
        .chain(b.breakpoints())
        .copied()
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    for w in points.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let (va, vb) = (a.value_at(mid), b.value_at(mid));
        assert!(
            (va - vb).abs() <= tol * va.abs().max(1.0),
            "profiles differ at {mid}: {va} vs {vb}"
        );
    }
}
