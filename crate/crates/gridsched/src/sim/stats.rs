//! Batch-means accumulation and Student-t confidence intervals for
//! steady-state output analysis.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Splits the post-warmup interval into equal time slices and accumulates the
/// cost and power integrals per slice, so batch averages come out exact for
/// the piecewise-constant trajectories the engine produces.
pub(crate) struct BatchAccumulator {
    start: f64,
    end: f64,
    batch_len: f64,
    cost_sums: Vec<f64>,
    power_sums: Vec<f64>,
}

impl BatchAccumulator {
    pub(crate) fn new(start: f64, end: f64, batches: usize) -> Self {
        debug_assert!(end > start && batches >= 1);
        Self {
            start,
            end,
            batch_len: (end - start) / batches as f64,
            cost_sums: vec![0.0; batches],
            power_sums: vec![0.0; batches],
        }
    }

    /// Adds a constant-rate stretch `[from, to)` (already clipped to the
    /// post-warmup window by the caller), splitting it across batch
    /// boundaries.
    pub(crate) fn add(&mut self, from: f64, to: f64, cost_rate: f64, power_rate: f64) {
        debug_assert!(from >= self.start - 1e-9 && to <= self.end + 1e-9);
        let n = self.cost_sums.len();
        let mut t = from;
        while t < to {
            let idx = (((t - self.start) / self.batch_len) as usize).min(n - 1);
            let batch_end = if idx == n - 1 {
                self.end
            } else {
                self.start + (idx + 1) as f64 * self.batch_len
            };
            let seg_end = to.min(batch_end).max(t);
            let len = seg_end - t;
            self.cost_sums[idx] += len * cost_rate;
            self.power_sums[idx] += len * power_rate;
            if seg_end <= t {
                break;
            }
            t = seg_end;
        }
    }

    pub(crate) fn total_cost(&self) -> f64 {
        self.cost_sums.iter().sum()
    }

    pub(crate) fn total_power(&self) -> f64 {
        self.power_sums.iter().sum()
    }

    pub(crate) fn cost_means(&self) -> Vec<f64> {
        self.cost_sums.iter().map(|s| s / self.batch_len).collect()
    }

    pub(crate) fn power_means(&self) -> Vec<f64> {
        self.power_sums.iter().map(|s| s / self.batch_len).collect()
    }
}

/// Mean and 95% Student-t half-width of the pooled batch means.
pub(crate) fn pooled_batch_ci(batch_means: &[f64]) -> (f64, f64) {
    let n = batch_means.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = batch_means.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = batch_means
        .iter()
        .map(|&x| (x - mean) * (x - mean))
        .sum::<f64>()
        / (n as f64 - 1.0);
    if var <= 0.0 {
        return (mean, 0.0);
    }
    let t = StudentsT::new(0.0, 1.0, n as f64 - 1.0)
        .expect("valid dof")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_splitting_is_exact() {
        let mut acc = BatchAccumulator::new(10.0, 30.0, 10);
        // one stretch covering everything at rate 2
        acc.add(10.0, 30.0, 2.0, 1.0);
        assert!((acc.total_cost() - 40.0).abs() < 1e-12);
        for m in acc.cost_means() {
            assert!((m - 2.0).abs() < 1e-12);
        }
        // a stretch crossing two boundaries
        let mut acc = BatchAccumulator::new(0.0, 10.0, 10);
        acc.add(0.5, 3.5, 1.0, 0.0);
        let means = acc.cost_means();
        assert!((means[0] - 0.5).abs() < 1e-12);
        assert!((means[1] - 1.0).abs() < 1e-12);
        assert!((means[2] - 1.0).abs() < 1e-12);
        assert!((means[3] - 0.5).abs() < 1e-12);
        assert!((acc.total_cost() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ci_basics() {
        let (mean, hw) = pooled_batch_ci(&[2.0; 16]);
        assert_eq!(mean, 2.0);
        assert_eq!(hw, 0.0);
        let values: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let (mean, hw) = pooled_batch_ci(&values);
        assert!((mean - 9.5).abs() < 1e-12);
        // sample sd of 0..19 is ~5.916; t(0.975, 19) ~ 2.093
        let expect = 2.093 * 5.9160797831 / 20f64.sqrt();
        assert!((hw - expect).abs() < 1e-3, "hw = {hw}");
    }
}
