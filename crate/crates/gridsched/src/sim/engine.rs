//! Event-calendar core of the simulator and output aggregation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use rand::SeedableRng;
use rand_distr::{Distribution, Exp};
use rand_pcg::Pcg64;
use serde::Serialize;

use super::policy::{policy_on_arrival, policy_on_completion, policy_on_deadline, ArrivalDecision};
use super::stats::{pooled_batch_ci, BatchAccumulator};
use super::trace::{TraceEventKind, TraceRecord};
use super::{SimConfig, SimError};
use crate::task_model::TaskId;

// Stream roles for the per-replication RNG streams.
const ROLE_INTERARRIVAL: u64 = 1;
const ROLE_DURATION: u64 = 2;
const ROLE_DEADLINE: u64 = 3;
const ROLE_POWER: u64 = 4;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one `(seed, replication, role)` stream.
fn stream_seed(seed: u64, replication: u64, role: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ splitmix64(replication.wrapping_add(0xA076_1D64_78BD_642F)));
    splitmix64(h ^ splitmix64(role.wrapping_add(0xE703_7ED1_A0B4_28DB)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Completion { id: TaskId },
    Deadline { id: TaskId },
    Arrival,
}

impl EventKind {
    /// Tie order at equal times: completion, then deadline, then arrival.
    fn class(&self) -> u8 {
        match self {
            EventKind::Completion { .. } => 0,
            EventKind::Deadline { .. } => 1,
            EventKind::Arrival => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap pops the earliest event first
        other
            .time
            .total_cmp(&self.time)
            .then(other.kind.class().cmp(&self.kind.class()))
            .then(other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A postponed demand waiting in the FIFO queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct QueuedTask {
    pub(crate) id: TaskId,
    pub(crate) power: f64,
    pub(crate) duration: f64,
}

/// Observable system state: active tasks (total power `P`), the FIFO queue of
/// postponed tasks (`Q`), and the clock.
#[derive(Debug, Clone)]
pub struct SimState {
    clock: f64,
    active: BTreeMap<TaskId, f64>,
    queue_order: VecDeque<TaskId>,
    queued: HashMap<TaskId, QueuedTask>,
    power: f64,
}

impl SimState {
    fn new() -> Self {
        Self {
            clock: 0.0,
            active: BTreeMap::new(),
            queue_order: VecDeque::new(),
            queued: HashMap::new(),
            power: 0.0,
        }
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    /// Total instantaneous power consumption `P(t)`.
    pub fn power(&self) -> f64 {
        self.power
    }

    /// Number of postponed tasks `Q(t)`.
    pub fn queue_len(&self) -> u64 {
        self.queued.len() as u64
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    /// Power is recomputed from the active set on every change (in id order,
    /// so the float sum is deterministic and drift-free).
    fn recompute_power(&mut self) {
        self.power = self.active.values().sum();
    }

    pub(crate) fn activate(&mut self, id: TaskId, power: f64) {
        self.active.insert(id, power);
        self.recompute_power();
    }

    fn complete(&mut self, id: TaskId) -> Option<f64> {
        let p = self.active.remove(&id);
        self.recompute_power();
        p
    }

    fn enqueue(&mut self, rec: QueuedTask) {
        self.queue_order.push_back(rec.id);
        self.queued.insert(rec.id, rec);
    }

    /// Pops the oldest still-queued task, skipping ids whose record was
    /// already removed by a deadline activation.
    pub(crate) fn dequeue_front(&mut self) -> Option<QueuedTask> {
        while let Some(id) = self.queue_order.pop_front() {
            if let Some(rec) = self.queued.remove(&id) {
                return Some(rec);
            }
        }
        None
    }

    fn remove_queued(&mut self, id: TaskId) -> Option<QueuedTask> {
        self.queued.remove(&id)
    }

    #[cfg(test)]
    pub(crate) fn for_testing(active_powers: &[f64], queued: &[(TaskId, f64)]) -> Self {
        let mut state = Self::new();
        for (i, &p) in active_powers.iter().enumerate() {
            state.active.insert(1000 + i as TaskId, p);
        }
        state.recompute_power();
        for &(id, power) in queued {
            state.enqueue(QueuedTask {
                id,
                power,
                duration: 1.0,
            });
        }
        state
    }
}

/// Per-replication counters over the full run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Counters {
    pub arrivals: u64,
    pub completions: u64,
    pub postponed: u64,
    pub deadline_activations: u64,
    pub threshold_releases: u64,
}

/// Outcome of a single replication.
#[derive(Debug, Clone, Serialize)]
pub struct Replication {
    pub avg_cost: f64,
    pub avg_power: f64,
    pub batch_cost_means: Vec<f64>,
    pub batch_power_means: Vec<f64>,
    pub peak_power: f64,
    /// Post-warmup time spent with exactly `i` active tasks.
    pub occupancy_time: Vec<f64>,
    /// Counters over the full run (including warmup).
    pub counters: Counters,
    /// Post-warmup counters used for rate statistics.
    pub post_warmup: Counters,
    pub final_active: usize,
    pub final_queued: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

/// Aggregated simulation result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// Time average of `C(P(t))` after warmup, pooled over replications.
    pub avg_cost: f64,
    /// 95% batch-means half-width on `avg_cost`.
    pub ci_halfwidth: f64,
    /// Time average of `P(t)` after warmup.
    pub avg_power: f64,
    /// 95% batch-means half-width on `avg_power`.
    pub avg_power_ci_halfwidth: f64,
    pub peak_power: f64,
    /// Fraction of post-warmup arrivals that were postponed.
    pub postponed_fraction: f64,
    /// Deadline-triggered activations per unit of post-warmup time.
    pub deadline_activation_rate: f64,
    /// Post-warmup fraction of time with exactly `i` active tasks.
    pub occupancy: Vec<f64>,
}

struct Accumulators<'a> {
    warmup_end: f64,
    horizon: f64,
    batches: BatchAccumulator,
    occupancy: Vec<f64>,
    peak_power: f64,
    cost: &'a crate::task_model::CostFunction,
}

impl Accumulators<'_> {
    /// Integrates the piecewise-constant trajectory from the state clock to
    /// `to`, clipped to the post-warmup window.
    fn advance(&mut self, state: &mut SimState, to: f64) {
        let from = state.clock;
        debug_assert!(to >= from);
        state.clock = to;
        let lo = from.max(self.warmup_end);
        let hi = to.min(self.horizon);
        if hi <= lo {
            return;
        }
        let cost_rate = self.cost.eval_nonneg(state.power);
        self.batches.add(lo, hi, cost_rate, state.power);
        let count = state.active_count();
        if self.occupancy.len() <= count {
            self.occupancy.resize(count + 1, 0.0);
        }
        self.occupancy[count] += hi - lo;
        if state.power > self.peak_power {
            self.peak_power = state.power;
        }
    }
}

/// Runs one replication of the configured simulation. Deterministic given
/// `(config, replication)`.
pub fn run_replication(config: &SimConfig, replication: u64) -> Result<Replication, SimError> {
    config.validate()?;
    let params = &config.params;
    let lambda = params.arrival_rate();
    let interarrival = Exp::new(lambda).expect("validated positive rate");
    let service = Exp::new(params.service_rate()).expect("validated positive rate");
    let deadline = if params.expiry_rate() > 0.0 {
        Some(Exp::new(params.expiry_rate()).expect("validated positive rate"))
    } else {
        None
    };
    let mut arrival_rng = Pcg64::seed_from_u64(stream_seed(config.seed, replication, ROLE_INTERARRIVAL));
    let mut duration_rng = Pcg64::seed_from_u64(stream_seed(config.seed, replication, ROLE_DURATION));
    let mut deadline_rng = Pcg64::seed_from_u64(stream_seed(config.seed, replication, ROLE_DEADLINE));
    let mut power_rng = Pcg64::seed_from_u64(stream_seed(config.seed, replication, ROLE_POWER));

    let power_classes = params.power_dist();
    let single_class = power_classes.len() == 1;
    let mut cumulative = Vec::with_capacity(power_classes.len());
    let mut running_weight = 0.0;
    for class in power_classes {
        running_weight += class.weight;
        cumulative.push((running_weight, class.power));
    }
    let mut sample_power = move || -> f64 {
        if single_class {
            return power_classes[0].power;
        }
        let u: f64 = rand::Rng::random(&mut power_rng);
        for &(edge, power) in &cumulative {
            if u < edge {
                return power;
            }
        }
        power_classes.last().expect("nonempty").power
    };

    let warmup_end = config.horizon * config.warmup_fraction;
    let mut state = SimState::new();
    let mut acc = Accumulators {
        warmup_end,
        horizon: config.horizon,
        batches: BatchAccumulator::new(warmup_end, config.horizon, config.batches),
        occupancy: Vec::new(),
        peak_power: 0.0,
        cost: &config.cost,
    };
    let mut counters = Counters::default();
    let mut post_warmup = Counters::default();
    let mut trace: Vec<TraceRecord> = Vec::new();
    if config.record_trace {
        trace.push(TraceRecord {
            time: 0.0,
            kind: TraceEventKind::Init,
            power: 0.0,
            queue: 0,
        });
    }

    let mut heap: BinaryHeap<Event> = BinaryHeap::new();
    let mut seq = 0u64;
    let push = |heap: &mut BinaryHeap<Event>, seq: &mut u64, time: f64, kind: EventKind| {
        *seq += 1;
        heap.push(Event {
            time,
            seq: *seq,
            kind,
        });
    };
    push(
        &mut heap,
        &mut seq,
        interarrival.sample(&mut arrival_rng),
        EventKind::Arrival,
    );

    let mut next_task_id: TaskId = 0;
    while let Some(event) = heap.pop() {
        if event.time >= config.horizon {
            break;
        }
        acc.advance(&mut state, event.time);
        let in_window = state.clock >= warmup_end;
        match event.kind {
            EventKind::Arrival => {
                counters.arrivals += 1;
                if in_window {
                    post_warmup.arrivals += 1;
                }
                next_task_id += 1;
                let id = next_task_id;
                let duration = service.sample(&mut duration_rng);
                let deadline_delay = deadline.as_ref().map(|d| d.sample(&mut deadline_rng));
                let power = sample_power();
                match policy_on_arrival(&config.policy, state.power(), state.queue_len()) {
                    ArrivalDecision::ActivateNow => {
                        state.activate(id, power);
                        push(
                            &mut heap,
                            &mut seq,
                            state.clock + duration,
                            EventKind::Completion { id },
                        );
                        if config.record_trace {
                            trace.push(TraceRecord {
                                time: state.clock,
                                kind: TraceEventKind::ArrivalActivated,
                                power: state.power(),
                                queue: state.queue_len(),
                            });
                        }
                    }
                    ArrivalDecision::Postpone => {
                        counters.postponed += 1;
                        if in_window {
                            post_warmup.postponed += 1;
                        }
                        state.enqueue(QueuedTask {
                            id,
                            power,
                            duration,
                        });
                        if let Some(delay) = deadline_delay {
                            push(
                                &mut heap,
                                &mut seq,
                                state.clock + delay,
                                EventKind::Deadline { id },
                            );
                        }
                        if config.record_trace {
                            trace.push(TraceRecord {
                                time: state.clock,
                                kind: TraceEventKind::ArrivalPostponed,
                                power: state.power(),
                                queue: state.queue_len(),
                            });
                        }
                    }
                }
                push(
                    &mut heap,
                    &mut seq,
                    state.clock + interarrival.sample(&mut arrival_rng),
                    EventKind::Arrival,
                );
            }
            EventKind::Completion { id } => {
                let pre_power = state.power();
                let removed = state.complete(id);
                debug_assert!(removed.is_some(), "completion for inactive task");
                counters.completions += 1;
                if in_window {
                    post_warmup.completions += 1;
                }
                let released =
                    policy_on_completion(&mut state, &config.policy, pre_power, config.cr_single_release);
                counters.threshold_releases += released.len() as u64;
                if in_window {
                    post_warmup.threshold_releases += released.len() as u64;
                }
                for rec in &released {
                    push(
                        &mut heap,
                        &mut seq,
                        state.clock + rec.duration,
                        EventKind::Completion { id: rec.id },
                    );
                }
                if config.record_trace {
                    trace.push(TraceRecord {
                        time: state.clock,
                        kind: if released.is_empty() {
                            TraceEventKind::Completion
                        } else {
                            TraceEventKind::CompletionRelease
                        },
                        power: state.power(),
                        queue: state.queue_len(),
                    });
                }
            }
            EventKind::Deadline { id } => {
                // stale timers (task already released) are skipped silently
                if let Some(rec) = state.remove_queued(id) {
                    policy_on_deadline(&mut state, &rec);
                    push(
                        &mut heap,
                        &mut seq,
                        state.clock + rec.duration,
                        EventKind::Completion { id: rec.id },
                    );
                    counters.deadline_activations += 1;
                    if in_window {
                        post_warmup.deadline_activations += 1;
                    }
                    if config.record_trace {
                        trace.push(TraceRecord {
                            time: state.clock,
                            kind: TraceEventKind::DeadlineActivation,
                            power: state.power(),
                            queue: state.queue_len(),
                        });
                    }
                }
            }
        }
    }
    acc.advance(&mut state, config.horizon);
    if config.record_trace {
        trace.push(TraceRecord {
            time: config.horizon,
            kind: TraceEventKind::End,
            power: state.power(),
            queue: state.queue_len(),
        });
    }

    let batch_cost_means = acc.batches.cost_means();
    let batch_power_means = acc.batches.power_means();
    let span = config.horizon - warmup_end;
    Ok(Replication {
        avg_cost: acc.batches.total_cost() / span,
        avg_power: acc.batches.total_power() / span,
        batch_cost_means,
        batch_power_means,
        peak_power: acc.peak_power,
        occupancy_time: acc.occupancy,
        counters,
        post_warmup,
        final_active: state.active_count(),
        final_queued: state.queued.len(),
        trace,
    })
}

/// Runs all replications and pools the batch means. Deterministic given the
/// config; replication results are combined in replication order.
pub fn run(config: &SimConfig) -> Result<SimResult, SimError> {
    config.validate()?;
    let mut reps = Vec::with_capacity(config.replications);
    for r in 0..config.replications {
        reps.push(run_replication(config, r as u64)?);
    }
    Ok(aggregate(config, &reps))
}

fn aggregate(config: &SimConfig, reps: &[Replication]) -> SimResult {
    let all_cost: Vec<f64> = reps
        .iter()
        .flat_map(|r| r.batch_cost_means.iter().copied())
        .collect();
    let all_power: Vec<f64> = reps
        .iter()
        .flat_map(|r| r.batch_power_means.iter().copied())
        .collect();
    let (avg_cost, ci_halfwidth) = pooled_batch_ci(&all_cost);
    let (avg_power, avg_power_ci_halfwidth) = pooled_batch_ci(&all_power);
    let peak_power = reps.iter().map(|r| r.peak_power).fold(0.0, f64::max);
    let arrivals: u64 = reps.iter().map(|r| r.post_warmup.arrivals).sum();
    let postponed: u64 = reps.iter().map(|r| r.post_warmup.postponed).sum();
    let deadline_activations: u64 = reps.iter().map(|r| r.post_warmup.deadline_activations).sum();
    let span = (config.horizon - config.horizon * config.warmup_fraction) * reps.len() as f64;
    let mut occupancy: Vec<f64> = Vec::new();
    for rep in reps {
        if occupancy.len() < rep.occupancy_time.len() {
            occupancy.resize(rep.occupancy_time.len(), 0.0);
        }
        for (slot, &t) in occupancy.iter_mut().zip(&rep.occupancy_time) {
            *slot += t;
        }
    }
    for slot in &mut occupancy {
        *slot /= span;
    }
    SimResult {
        avg_cost,
        ci_halfwidth,
        avg_power,
        avg_power_ci_halfwidth,
        peak_power,
        postponed_fraction: if arrivals == 0 {
            0.0
        } else {
            postponed as f64 / arrivals as f64
        },
        deadline_activation_rate: deadline_activations as f64 / span,
        occupancy,
    }
}
