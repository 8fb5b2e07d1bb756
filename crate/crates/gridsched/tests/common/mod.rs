//! Independent oracles shared by the integration suites. These deliberately
//! avoid the crate's solver code paths: the convex oracle works on a fixed
//! time grid with an exact sort-based single-task subsolver, and the packing
//! oracle enumerates set partitions directly.

#![allow(dead_code)]

use gridsched::task_model::{CostFunction, DemandTask};

pub struct GridOracle {
    pub objective: f64,
    pub max_load: f64,
}

/// Projected coordinate descent on the time-discretized convex allocation
/// problem. Instances are expected to have grid-aligned windows so the
/// discretized optimum equals the continuous one.
pub fn grid_convex_oracle(
    tasks: &[DemandTask],
    cost: &CostFunction,
    horizon: f64,
    delta: f64,
) -> GridOracle {
    let cells = (horizon / delta).round() as usize;
    let windows: Vec<(usize, usize)> = tasks
        .iter()
        .map(|t| {
            let a = (t.arrival() / delta).round() as usize;
            let d = ((t.deadline() / delta).round() as usize).min(cells);
            assert!(a < d, "degenerate window after rounding");
            (a, d)
        })
        .collect();
    let mut load = vec![0.0f64; cells];
    let mut alloc: Vec<Vec<f64>> = tasks
        .iter()
        .zip(&windows)
        .map(|(t, &(a, d))| {
            let width = d - a;
            let target = t.duration() / delta;
            assert!(target <= width as f64 * (1.0 + 1e-9), "infeasible task");
            vec![(target / width as f64).min(1.0); width]
        })
        .collect();
    for ((t, &(a, _)), x) in tasks.iter().zip(&windows).zip(&alloc) {
        for (j, &v) in x.iter().enumerate() {
            load[a + j] += t.power() * v;
        }
    }
    let objective = |load: &[f64]| -> f64 {
        load.iter()
            .map(|&l| delta * cost.eval(l.max(0.0)).unwrap())
            .sum()
    };
    let mut obj = objective(&load);
    for _ in 0..2000 {
        let round_start = obj;
        for (i, t) in tasks.iter().enumerate() {
            let (a, d) = windows[i];
            let p = t.power();
            for (j, &v) in alloc[i].iter().enumerate() {
                load[a + j] = (load[a + j] - p * v).max(0.0);
            }
            let target = t.duration() / delta;
            let x = discrete_waterfill(&load[a..d], p, target);
            for (j, &v) in x.iter().enumerate() {
                load[a + j] += p * v;
            }
            alloc[i] = x;
        }
        obj = objective(&load);
        if round_start - obj <= 1e-11 * round_start.abs().max(1e-12) {
            break;
        }
    }
    // rebuild the load from scratch to shed incremental rounding
    let mut fresh = vec![0.0f64; cells];
    for ((t, &(a, _)), x) in tasks.iter().zip(&windows).zip(&alloc) {
        for (j, &v) in x.iter().enumerate() {
            fresh[a + j] += t.power() * v;
        }
    }
    GridOracle {
        objective: objective(&fresh),
        max_load: fresh.iter().copied().fold(0.0, f64::max),
    }
}

/// Exact single-task water-fill on grid cells: finds the level whose clamped
/// fill mass hits `target_cells` by scanning the sorted kink levels and
/// interpolating on the bracketing linear piece.
fn discrete_waterfill(other: &[f64], power: f64, target_cells: f64) -> Vec<f64> {
    let mut kinks: Vec<f64> = Vec::with_capacity(2 * other.len());
    for &l in other {
        kinks.push(l);
        kinks.push(l + power);
    }
    kinks.sort_by(f64::total_cmp);
    kinks.dedup();
    let mass = |level: f64| -> f64 {
        other
            .iter()
            .map(|&l| ((level - l) / power).clamp(0.0, 1.0))
            .sum()
    };
    let mut level = *kinks.last().expect("nonempty window");
    let mut prev_k = kinks[0];
    let mut prev_m = mass(prev_k);
    if prev_m < target_cells {
        for &k in &kinks[1..] {
            let m = mass(k);
            if m >= target_cells {
                level = if m > prev_m {
                    prev_k + (target_cells - prev_m) * (k - prev_k) / (m - prev_m)
                } else {
                    k
                };
                break;
            }
            prev_k = k;
            prev_m = m;
        }
    } else {
        level = prev_k;
    }
    other
        .iter()
        .map(|&l| ((level - l) / power).clamp(0.0, 1.0))
        .collect()
}

/// Exhaustive minimum-bin count by direct set-partition enumeration (bins
/// are identified by their earliest item, so each partition is visited once).
/// Assumes every item fits a bin.
pub fn exhaustive_min_bins(sizes: &[f64], capacity: f64) -> usize {
    fn recurse(sizes: &[f64], capacity: f64, i: usize, loads: &mut Vec<f64>, best: &mut usize) {
        if loads.len() >= *best {
            return;
        }
        if i == sizes.len() {
            *best = loads.len();
            return;
        }
        for b in 0..loads.len() {
            if loads[b] + sizes[i] <= capacity * (1.0 + 1e-9) {
                loads[b] += sizes[i];
                recurse(sizes, capacity, i + 1, loads, best);
                loads[b] -= sizes[i];
            }
        }
        loads.push(sizes[i]);
        recurse(sizes, capacity, i + 1, loads, best);
        loads.pop();
    }
    if sizes.is_empty() {
        return 0;
    }
    // one bin per item is always feasible
    let mut best = sizes.len();
    recurse(sizes, capacity, 0, &mut Vec::new(), &mut best);
    best
}

/// Splitmix-style deterministic pseudo-random stream for instance generation.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in [lo, hi].
    pub fn int(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.next_u64() % (hi - lo + 1)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}
