//! Analytic queueing results for the online system: stationary occupancy and
//! cost of the uncontrolled policy, the universal lower bound on any policy,
//! M/M/c stationary analysis for the controlled-release auxiliary system, and
//! the threshold-asymptotics table.

use rand::SeedableRng;
use rand_distr::{Distribution, Poisson};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::task_model::{CostFunction, ModelError};

/// Tail mass below which stationary distributions are truncated.
pub const TAIL_MASS_TOL: f64 = 1e-12;
/// Relative tolerance on truncated expected-cost sums.
pub const COST_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StochasticError {
    #[error("invalid parameters: {reason}")]
    InvalidParams { reason: String },
    #[error("power distribution is not unit; use compound_default_cost")]
    NonUnitPower,
    #[error("system unstable: utilization {utilization} >= 1")]
    Unstable { utilization: f64 },
    #[error("stationary distribution support exceeds {limit} states at utilization {utilization}")]
    TruncationOverflow { utilization: f64, limit: usize },
    #[error("expected-cost series did not converge within {limit} terms")]
    SeriesDiverged { limit: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One class of the per-task power requirement distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerClass {
    pub power: f64,
    pub weight: f64,
}

/// Parameters of the online arrival model: Poisson arrivals at `lambda`,
/// exponential durations at rate `s`, exponential deadlines at rate `d`
/// (`d = 0` means deadlines never expire), and a discrete per-task power
/// distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStochasticParams")]
pub struct StochasticParams {
    #[serde(rename = "lambda")]
    arrival_rate: f64,
    #[serde(rename = "s")]
    service_rate: f64,
    #[serde(rename = "d")]
    expiry_rate: f64,
    power_dist: Vec<PowerClass>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStochasticParams {
    lambda: f64,
    s: f64,
    d: f64,
    #[serde(default = "unit_power")]
    power_dist: Vec<PowerClass>,
}

fn unit_power() -> Vec<PowerClass> {
    vec![PowerClass {
        power: 1.0,
        weight: 1.0,
    }]
}

impl TryFrom<RawStochasticParams> for StochasticParams {
    type Error = StochasticError;
    fn try_from(raw: RawStochasticParams) -> Result<Self, StochasticError> {
        StochasticParams::new(raw.lambda, raw.s, raw.d, raw.power_dist)
    }
}

impl StochasticParams {
    pub fn new(
        arrival_rate: f64,
        service_rate: f64,
        expiry_rate: f64,
        power_dist: Vec<PowerClass>,
    ) -> Result<Self, StochasticError> {
        let invalid = |reason: String| StochasticError::InvalidParams { reason };
        if !(arrival_rate.is_finite() && arrival_rate > 0.0) {
            return Err(invalid(format!("arrival rate must be positive, got {arrival_rate}")));
        }
        if !(service_rate.is_finite() && service_rate > 0.0) {
            return Err(invalid(format!("service rate must be positive, got {service_rate}")));
        }
        if !(expiry_rate.is_finite() && expiry_rate >= 0.0) {
            return Err(invalid(format!(
                "deadline expiry rate must be nonnegative, got {expiry_rate}"
            )));
        }
        if power_dist.is_empty() {
            return Err(invalid("power distribution must have at least one class".into()));
        }
        let mut weight_sum = 0.0;
        for class in &power_dist {
            if !(class.power.is_finite() && class.power > 0.0) {
                return Err(invalid(format!("class power must be positive, got {}", class.power)));
            }
            if !(class.weight.is_finite() && class.weight > 0.0) {
                return Err(invalid(format!(
                    "class weight must be positive, got {}",
                    class.weight
                )));
            }
            weight_sum += class.weight;
        }
        if (weight_sum - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("class weights sum to {weight_sum}, expected 1")));
        }
        for (i, a) in power_dist.iter().enumerate() {
            for b in power_dist.iter().skip(i + 1) {
                if a.power == b.power {
                    return Err(invalid(format!("duplicate power class {}", a.power)));
                }
            }
        }
        Ok(Self {
            arrival_rate,
            service_rate,
            expiry_rate,
            power_dist,
        })
    }

    pub fn unit(arrival_rate: f64, service_rate: f64, expiry_rate: f64) -> Result<Self, StochasticError> {
        Self::new(arrival_rate, service_rate, expiry_rate, unit_power())
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }
    pub fn service_rate(&self) -> f64 {
        self.service_rate
    }
    pub fn expiry_rate(&self) -> f64 {
        self.expiry_rate
    }
    pub fn power_dist(&self) -> &[PowerClass] {
        &self.power_dist
    }

    /// A copy with a different deadline expiry rate; used for deadline sweeps.
    pub fn with_expiry_rate(&self, expiry_rate: f64) -> Result<Self, StochasticError> {
        Self::new(
            self.arrival_rate,
            self.service_rate,
            expiry_rate,
            self.power_dist.clone(),
        )
    }

    /// Expected per-task power requirement.
    pub fn mean_power(&self) -> f64 {
        self.power_dist.iter().map(|c| c.power * c.weight).sum()
    }

    /// Mean number of concurrently active tasks when nothing is postponed.
    pub fn occupancy_mean(&self) -> f64 {
        self.arrival_rate / self.service_rate
    }

    /// Long-run average power consumption, `lambda * E[power] / s`. Identical
    /// under every non-lossy policy.
    pub fn offered_load(&self) -> f64 {
        self.occupancy_mean() * self.mean_power()
    }

    pub fn is_unit_power(&self) -> bool {
        self.power_dist.len() == 1 && self.power_dist[0].power == 1.0
    }
}

/// A truncated stationary distribution on nonnegative support values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryDistribution {
    support: Vec<f64>,
    probabilities: Vec<f64>,
    truncation_error: f64,
}

impl StationaryDistribution {
    fn new(support: Vec<f64>, probabilities: Vec<f64>, truncation_error: f64) -> Self {
        debug_assert_eq!(support.len(), probabilities.len());
        Self {
            support,
            probabilities,
            truncation_error,
        }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
    pub fn truncation_error(&self) -> f64 {
        self.truncation_error
    }

    pub fn mean(&self) -> f64 {
        self.support
            .iter()
            .zip(&self.probabilities)
            .map(|(x, p)| x * p)
            .sum()
    }

    /// Total variation distance against probability masses indexed by
    /// integer support `0, 1, 2, ...`; masses beyond either support count
    /// fully.
    pub fn total_variation_indexed(&self, other: &[f64]) -> f64 {
        let n = self.probabilities.len().max(other.len());
        let mut tv = 0.0;
        for i in 0..n {
            let a = self.probabilities.get(i).copied().unwrap_or(0.0);
            let b = other.get(i).copied().unwrap_or(0.0);
            tv += (a - b).abs();
        }
        0.5 * (tv + self.truncation_error)
    }
}

fn poisson_ln_pmf(mean: f64, i: u64) -> f64 {
    i as f64 * mean.ln() - mean - ln_gamma(i as f64 + 1.0)
}

/// Stationary probability that `i` tasks are active under the uncontrolled
/// policy: Poisson with mean `lambda / s`, evaluated in log space.
pub fn mm_inf_pmf(params: &StochasticParams, i: u64) -> f64 {
    poisson_ln_pmf(params.occupancy_mean(), i).exp()
}

/// Truncated Poisson distribution with the given mean; tail mass below
/// `TAIL_MASS_TOL`.
pub fn poisson_distribution(mean: f64) -> StationaryDistribution {
    let mut support = Vec::new();
    let mut probabilities = Vec::new();
    let mut mass = 0.0;
    let mut i = 0u64;
    loop {
        let p = poisson_ln_pmf(mean, i).exp();
        support.push(i as f64);
        probabilities.push(p);
        mass += p;
        let tail = 1.0 - mass;
        if i as f64 > mean && tail < TAIL_MASS_TOL {
            return StationaryDistribution::new(support, probabilities, tail.max(0.0));
        }
        i += 1;
        if i > 10_000_000 {
            // Unreachable for finite means; keeps the loop total.
            return StationaryDistribution::new(support, probabilities, (1.0 - mass).max(0.0));
        }
    }
}

/// Expected cost `sum_i q_i C(i)` for Poisson-distributed occupancy with the
/// given mean, truncated adaptively so the neglected tail contributes less
/// than `COST_REL_TOL` relative cost.
fn poisson_expected_cost(mean: f64, cost: &CostFunction) -> Result<f64, StochasticError> {
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut i = 0u64;
    let min_terms = (2.0 * mean).ceil() as u64 + 10;
    loop {
        let q = poisson_ln_pmf(mean, i).exp();
        let c = cost.eval_nonneg(i as f64);
        total += q * c;
        mass += q;
        if i >= min_terms {
            // Beyond 2*mean the term ratio is below 1/2 and the cost grows at
            // most quadratically, so the remaining series is bounded by a
            // geometric-quadratic sum worth < 16 current terms.
            let bound = 16.0 * q * c.abs().max(1.0);
            if 1.0 - mass < TAIL_MASS_TOL && bound <= COST_REL_TOL * total.abs().max(1e-300) {
                return Ok(total);
            }
        }
        i += 1;
        if i > 10_000_000 {
            return Err(StochasticError::SeriesDiverged { limit: 10_000_000 });
        }
    }
}

/// Expected stationary cost of the uncontrolled policy with unit powers:
/// `sum_i q_i C(i)` with `q` Poisson(`lambda/s`). Non-unit power
/// distributions are directed to [`compound_default_cost`].
pub fn default_policy_cost(
    params: &StochasticParams,
    cost: &CostFunction,
) -> Result<f64, StochasticError> {
    if !params.is_unit_power() {
        return Err(StochasticError::NonUnitPower);
    }
    poisson_expected_cost(params.occupancy_mean(), cost)
}

/// How a compound cost value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum CostEstimate {
    /// Exact convolution on the common power quantum grid.
    Exact(f64),
    /// Monte Carlo fallback for incommensurable power classes.
    MonteCarlo { mean: f64, std_error: f64 },
}

impl CostEstimate {
    pub fn value(&self) -> f64 {
        match *self {
            CostEstimate::Exact(v) => v,
            CostEstimate::MonteCarlo { mean, .. } => mean,
        }
    }

    pub fn std_error(&self) -> Option<f64> {
        match *self {
            CostEstimate::Exact(_) => None,
            CostEstimate::MonteCarlo { std_error, .. } => Some(std_error),
        }
    }
}

const MC_SAMPLES: usize = 1_000_000;
const MC_SEED: u64 = 0x9E37_79B9_7F4A_7C15;
const MAX_GRID_UNITS: usize = 2_000_000;

/// Expected stationary cost of the uncontrolled policy under a variable
/// per-task power requirement: `E[C(P)]` for `P = sum_k p_k N_k` with
/// independent `N_k ~ Poisson(lambda w_k / s)`, the thinning decomposition
/// of the compound arrival stream.
///
/// When the class powers share a common quantum the pmf of `P` is convolved
/// exactly on that grid; otherwise a seeded Monte Carlo estimate with its
/// standard error is returned.
pub fn compound_default_cost(
    params: &StochasticParams,
    cost: &CostFunction,
) -> Result<CostEstimate, StochasticError> {
    if params.is_unit_power() {
        return Ok(CostEstimate::Exact(default_policy_cost(params, cost)?));
    }
    if let Some((quantum, units)) = common_quantum(params.power_dist()) {
        if let Some(value) = compound_cost_on_grid(params, cost, quantum, &units)? {
            return Ok(CostEstimate::Exact(value));
        }
    }
    compound_cost_monte_carlo(params, cost)
}

/// Largest common quantum of the class powers, found by a tolerant Euclid
/// reduction; `None` if the classes are incommensurable at `REL_TOL`.
fn common_quantum(classes: &[PowerClass]) -> Option<(f64, Vec<u64>)> {
    let tol = crate::task_model::REL_TOL;
    let scale = classes.iter().map(|c| c.power).fold(0.0, f64::max);
    let mut g = classes[0].power;
    for c in classes.iter().skip(1) {
        let mut a = g.max(c.power);
        let mut b = g.min(c.power);
        while b > tol * scale {
            let r = a - b * (a / b).floor();
            a = b;
            b = if r < tol * scale { 0.0 } else { r };
        }
        g = a;
    }
    let mut units = Vec::with_capacity(classes.len());
    for c in classes {
        let ratio = c.power / g;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-6 {
            return None;
        }
        units.push(n as u64);
    }
    Some((g, units))
}

fn compound_cost_on_grid(
    params: &StochasticParams,
    cost: &CostFunction,
    quantum: f64,
    units: &[u64],
) -> Result<Option<f64>, StochasticError> {
    let per_class_tail = TAIL_MASS_TOL / params.power_dist().len() as f64;
    // Truncate each class count where its Poisson tail is negligible.
    let mut class_pmfs: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut grid_len: usize = 1;
    for (class, &stride) in params.power_dist().iter().zip(units) {
        let mean = params.arrival_rate * class.weight / params.service_rate;
        let mut pmf = Vec::new();
        let mut mass = 0.0;
        let mut k = 0u64;
        loop {
            let p = poisson_ln_pmf(mean, k).exp();
            pmf.push(p);
            mass += p;
            if k as f64 > mean && 1.0 - mass < per_class_tail {
                break;
            }
            k += 1;
            if k > 1_000_000 {
                return Err(StochasticError::SeriesDiverged { limit: 1_000_000 });
            }
        }
        grid_len = grid_len.saturating_add((pmf.len() - 1).saturating_mul(stride as usize));
        class_pmfs.push((stride, pmf));
    }
    if grid_len > MAX_GRID_UNITS {
        return Ok(None);
    }
    let mut dist = vec![0.0f64; grid_len + 1];
    dist[0] = 1.0;
    let mut used = 0usize;
    for (stride, pmf) in class_pmfs {
        let new_used = used + (pmf.len() - 1) * stride as usize;
        let mut next = vec![0.0f64; new_used + 1];
        for (u, &p) in dist.iter().enumerate().take(used + 1) {
            if p == 0.0 {
                continue;
            }
            for (k, &q) in pmf.iter().enumerate() {
                next[u + k * stride as usize] += p * q;
            }
        }
        dist = next;
        used = new_used;
    }
    let value = dist
        .iter()
        .enumerate()
        .map(|(u, &p)| p * cost.eval_nonneg(u as f64 * quantum))
        .sum();
    Ok(Some(value))
}

fn compound_cost_monte_carlo(
    params: &StochasticParams,
    cost: &CostFunction,
) -> Result<CostEstimate, StochasticError> {
    let mut rng = Pcg64::seed_from_u64(MC_SEED);
    let mut samplers: Vec<(f64, Poisson<f64>)> = params
        .power_dist()
        .iter()
        .map(|c| {
            let mean = params.arrival_rate * c.weight / params.service_rate;
            Poisson::new(mean).map(|p| (c.power, p))
        })
        .collect::<Result<_, _>>()
        .map_err(|e| StochasticError::InvalidParams {
            reason: format!("Poisson sampler: {e}"),
        })?;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..MC_SAMPLES {
        let power: f64 = samplers
            .iter_mut()
            .map(|(p, sampler)| *p * sampler.sample(&mut rng))
            .sum();
        let c = cost.eval_nonneg(power.max(0.0));
        sum += c;
        sum_sq += c * c;
    }
    let n = MC_SAMPLES as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    Ok(CostEstimate::MonteCarlo {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Diagnostic only: the naive mixture `sum_i sum_k q_i p_k C(i w_k)`, which
/// weights powers and class probabilities inconsistently with
/// `P = sum_k p_k N_k`. Exposed for side-by-side comparison with
/// [`compound_default_cost`]; not used by any solver.
pub fn mixed_expectation_diagnostic(
    params: &StochasticParams,
    cost: &CostFunction,
) -> Result<f64, StochasticError> {
    let mean = params.occupancy_mean();
    let mut total = 0.0;
    let mut mass = 0.0;
    let mut i = 0u64;
    let min_terms = (2.0 * mean).ceil() as u64 + 10;
    loop {
        let q = poisson_ln_pmf(mean, i).exp();
        let inner: f64 = params
            .power_dist()
            .iter()
            .map(|c| c.power * cost.eval_nonneg(i as f64 * c.weight))
            .sum();
        total += q * inner;
        mass += q;
        if i >= min_terms {
            let bound = 16.0 * q * inner.abs().max(1.0);
            if 1.0 - mass < TAIL_MASS_TOL && bound <= COST_REL_TOL * total.abs().max(1e-300) {
                return Ok(total);
            }
        }
        i += 1;
        if i > 10_000_000 {
            return Err(StochasticError::SeriesDiverged { limit: 10_000_000 });
        }
    }
}

/// Jensen/Little bound: no policy can beat `C(lambda * E[power] / s)` in
/// long-run average cost.
pub fn universal_lower_bound(params: &StochasticParams, cost: &CostFunction) -> f64 {
    cost.eval_nonneg(params.offered_load())
}

/// Log-weights `ln t_k` of the unnormalized M/M/c stationary distribution for
/// `k = 0..=c`, plus the log normalizer including the geometric tail.
fn mmc_log_weights(offered: f64, servers: u64) -> (Vec<f64>, f64) {
    let c = servers as usize;
    let mut log_t = Vec::with_capacity(c + 1);
    let mut cur = 0.0f64;
    log_t.push(cur);
    for k in 1..=c {
        cur += offered.ln() - (k.min(c) as f64).ln();
        log_t.push(cur);
    }
    let rho = offered / servers as f64;
    // Terms 0..c-1 plus the closed geometric tail from c on.
    let tail_log = log_t[c] - (1.0 - rho).ln();
    let max_log = log_t[..c]
        .iter()
        .copied()
        .fold(tail_log, f64::max);
    let sum: f64 = log_t[..c]
        .iter()
        .map(|&l| (l - max_log).exp())
        .sum::<f64>()
        + (tail_log - max_log).exp();
    (log_t, max_log + sum.ln())
}

/// Classical M/M/c stationary queue-length distribution, truncated at tail
/// mass below `TAIL_MASS_TOL`. Requires `lambda / (c s) < 1`.
pub fn mmc_stationary(
    arrival_rate: f64,
    service_rate: f64,
    servers: u64,
) -> Result<StationaryDistribution, StochasticError> {
    check_mmc_params(arrival_rate, service_rate, servers)?;
    let offered = arrival_rate / service_rate;
    let rho = offered / servers as f64;
    if rho >= 1.0 {
        return Err(StochasticError::Unstable { utilization: rho });
    }
    let (log_t, log_norm) = mmc_log_weights(offered, servers);
    let c = servers as usize;
    let mut probabilities: Vec<f64> = log_t.iter().map(|&l| (l - log_norm).exp()).collect();
    // Extend geometrically beyond c until the remaining tail is negligible.
    let mut tail_factor = probabilities[c] * rho / (1.0 - rho);
    let mut k = c;
    while tail_factor >= TAIL_MASS_TOL {
        k += 1;
        if k > MAX_GRID_UNITS {
            return Err(StochasticError::TruncationOverflow {
                utilization: rho,
                limit: MAX_GRID_UNITS,
            });
        }
        let p = probabilities[k - 1] * rho;
        probabilities.push(p);
        tail_factor = p * rho / (1.0 - rho);
    }
    let support: Vec<f64> = (0..probabilities.len()).map(|i| i as f64).collect();
    Ok(StationaryDistribution::new(
        support,
        probabilities,
        tail_factor.max(0.0),
    ))
}

fn check_mmc_params(arrival_rate: f64, service_rate: f64, servers: u64) -> Result<(), StochasticError> {
    let invalid = |reason: String| StochasticError::InvalidParams { reason };
    if !(arrival_rate.is_finite() && arrival_rate > 0.0) {
        return Err(invalid(format!("arrival rate must be positive, got {arrival_rate}")));
    }
    if !(service_rate.is_finite() && service_rate > 0.0) {
        return Err(invalid(format!("service rate must be positive, got {service_rate}")));
    }
    if servers == 0 {
        return Err(invalid("server count must be at least 1".into()));
    }
    Ok(())
}

/// Expected cost of the busy-server count in a stable M/M/c system:
/// `sum_i Pr(N = i) C(min(i, c))`. The cost is constant beyond `c`, so the
/// value is computed without any truncation error beyond rounding.
pub fn mmc_power_cost(
    arrival_rate: f64,
    service_rate: f64,
    servers: u64,
    cost: &CostFunction,
) -> Result<f64, StochasticError> {
    check_mmc_params(arrival_rate, service_rate, servers)?;
    let offered = arrival_rate / service_rate;
    let rho = offered / servers as f64;
    if rho >= 1.0 {
        return Err(StochasticError::Unstable { utilization: rho });
    }
    let (log_t, log_norm) = mmc_log_weights(offered, servers);
    let c = servers as usize;
    let mut below_c_mass = 0.0;
    let mut below_c_cost = 0.0;
    for (i, &l) in log_t.iter().enumerate().take(c) {
        let p = (l - log_norm).exp();
        below_c_mass += p;
        below_c_cost += p * cost.eval_nonneg(i as f64);
    }
    Ok(below_c_cost + (1.0 - below_c_mass) * cost.eval_nonneg(c as f64))
}

/// One row of the threshold-asymptotics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdAsymptoticsRow {
    pub epsilon: f64,
    /// `lambda / s + epsilon`, the continuous threshold.
    pub threshold: f64,
    /// Threshold rounded up to an integer server count.
    pub servers: u64,
    pub utilization: f64,
    pub stable: bool,
    /// Busy-server cost of the auxiliary M/M/c system; `None` when unstable.
    pub power_cost: Option<f64>,
    pub lower_bound: f64,
    /// `power_cost - lower_bound`; `None` when unstable.
    pub gap: Option<f64>,
}

/// Sweeps thresholds `lambda/s + epsilon` and tabulates the auxiliary-system
/// cost against the universal lower bound. Thresholds round up to integer
/// server counts; rows that still sit at or above full utilization are
/// flagged unstable rather than failing the sweep. Unit powers only.
pub fn cr_asymptotics(
    params: &StochasticParams,
    epsilons: &[f64],
    cost: &CostFunction,
) -> Result<Vec<ThresholdAsymptoticsRow>, StochasticError> {
    if !params.is_unit_power() {
        return Err(StochasticError::NonUnitPower);
    }
    for &e in epsilons {
        if !(e.is_finite() && e > 0.0) {
            return Err(StochasticError::InvalidParams {
                reason: format!("epsilon must be positive, got {e}"),
            });
        }
    }
    let offered = params.occupancy_mean();
    let lower_bound = universal_lower_bound(params, cost);
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let threshold = offered + epsilon;
        let mut servers = threshold.ceil().max(1.0) as u64;
        if servers as f64 <= offered {
            servers = offered.floor() as u64 + 1;
        }
        let utilization = offered / servers as f64;
        let stable = utilization < 1.0;
        let power_cost = if stable {
            Some(mmc_power_cost(
                params.arrival_rate(),
                params.service_rate(),
                servers,
                cost,
            )?)
        } else {
            None
        };
        rows.push(ThresholdAsymptoticsRow {
            epsilon,
            threshold,
            servers,
            utilization,
            stable,
            power_cost,
            lower_bound,
            gap: power_cost.map(|c| c - lower_bound),
        });
    }
    Ok(rows)
}
