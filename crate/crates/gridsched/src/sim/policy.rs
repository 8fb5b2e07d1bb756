//! Control policies: who gets activated when, purely as a function of the
//! observed pair (total power, queue length).

use serde::Serialize;

use super::engine::{QueuedTask, SimState};
use super::SimError;

/// Nondecreasing step function `queue length -> power threshold`, used as the
/// switching curve of the postponement policy. A constant curve is the plain
/// threshold case.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingCurve {
    base: f64,
    /// `(min_queue, threshold)` pairs; the last pair with
    /// `min_queue <= queue` wins.
    steps: Vec<(u64, f64)>,
}

impl SwitchingCurve {
    pub fn constant(threshold: f64) -> Result<Self, SimError> {
        Self::new(threshold, Vec::new())
    }

    pub fn new(base: f64, steps: Vec<(u64, f64)>) -> Result<Self, SimError> {
        let invalid = |reason: String| SimError::InvalidPolicy { reason };
        if !(base.is_finite() && base >= 0.0) {
            return Err(invalid(format!("base threshold must be nonnegative, got {base}")));
        }
        let mut prev_queue: Option<u64> = None;
        let mut prev_threshold = base;
        for &(q, t) in &steps {
            if q == 0 || prev_queue.is_some_and(|p| q <= p) {
                return Err(invalid(
                    "step queue levels must be positive and strictly increasing".into(),
                ));
            }
            if !(t.is_finite() && t >= prev_threshold) {
                return Err(invalid(format!(
                    "switching curve must be nondecreasing: {t} after {prev_threshold}"
                )));
            }
            prev_queue = Some(q);
            prev_threshold = t;
        }
        Ok(Self { base, steps })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn threshold_at(&self, queue: u64) -> f64 {
        let mut threshold = self.base;
        for &(q, t) in &self.steps {
            if q <= queue {
                threshold = t;
            } else {
                break;
            }
        }
        threshold
    }
}

/// The online control law applied by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PolicySpec {
    /// Activate every demand immediately on arrival.
    Default,
    /// Activate on arrival iff `P < threshold`; release queued demands on
    /// deadline expiry or whenever power drops below the threshold.
    ControlledRelease { threshold: f64 },
    /// Arrival-time-only decision: activate iff `P < curve(Q)`, otherwise
    /// postpone until the deadline expires.
    ThresholdPostponement { curve: SwitchingCurve },
    /// Postponement plus one queued activation per service completion while
    /// the control regime `P <= threshold` holds.
    EnhancedThresholdPostponement { threshold: f64 },
}

impl PolicySpec {
    pub fn cr(threshold: f64) -> Self {
        PolicySpec::ControlledRelease { threshold }
    }

    pub fn tp_constant(threshold: f64) -> Result<Self, SimError> {
        Ok(PolicySpec::ThresholdPostponement {
            curve: SwitchingCurve::constant(threshold)?,
        })
    }

    pub fn etp(threshold: f64) -> Self {
        PolicySpec::EnhancedThresholdPostponement { threshold }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Default => "default",
            PolicySpec::ControlledRelease { .. } => "cr",
            PolicySpec::ThresholdPostponement { .. } => "tp",
            PolicySpec::EnhancedThresholdPostponement { .. } => "etp",
        }
    }

    /// Representative threshold for reporting (the curve base for TP).
    pub fn threshold_label(&self) -> Option<f64> {
        match self {
            PolicySpec::Default => None,
            PolicySpec::ControlledRelease { threshold } => Some(*threshold),
            PolicySpec::ThresholdPostponement { curve } => Some(curve.base()),
            PolicySpec::EnhancedThresholdPostponement { threshold } => Some(*threshold),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), SimError> {
        let check = |threshold: f64| {
            if threshold.is_finite() && threshold >= 0.0 {
                Ok(())
            } else {
                Err(SimError::InvalidPolicy {
                    reason: format!("threshold must be nonnegative, got {threshold}"),
                })
            }
        };
        match self {
            PolicySpec::Default | PolicySpec::ThresholdPostponement { .. } => Ok(()),
            PolicySpec::ControlledRelease { threshold }
            | PolicySpec::EnhancedThresholdPostponement { threshold } => check(*threshold),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrivalDecision {
    ActivateNow,
    Postpone,
}

/// Arrival-time decision of each policy. Boundary conventions: controlled
/// release and postponement activate on strict `P < threshold`; the enhanced
/// policy activates on `P <= threshold`. The arriving task's own power does
/// not enter the test.
pub fn policy_on_arrival(policy: &PolicySpec, power: f64, queue_len: u64) -> ArrivalDecision {
    let activate = match policy {
        PolicySpec::Default => true,
        PolicySpec::ControlledRelease { threshold } => power < *threshold,
        PolicySpec::ThresholdPostponement { curve } => power < curve.threshold_at(queue_len),
        PolicySpec::EnhancedThresholdPostponement { threshold } => power <= *threshold,
    };
    if activate {
        ArrivalDecision::ActivateNow
    } else {
        ArrivalDecision::Postpone
    }
}

/// Queued activations triggered by a completion that just reduced the power.
///
/// Controlled release dequeues FIFO while `P` stays below the threshold (or
/// at most one task in single-release mode). The enhanced policy activates
/// exactly one queued task iff its control regime held in the state the
/// completion left, i.e. the pre-completion power was at most the threshold.
/// Postponement and the uncontrolled policy never release on completion.
///
/// Released tasks are activated into `state`; the returned records let the
/// caller schedule their completions.
pub(crate) fn policy_on_completion(
    state: &mut SimState,
    policy: &PolicySpec,
    pre_completion_power: f64,
    single_release: bool,
) -> Vec<QueuedTask> {
    let mut released = Vec::new();
    match policy {
        PolicySpec::Default | PolicySpec::ThresholdPostponement { .. } => {}
        PolicySpec::ControlledRelease { threshold } => {
            while state.power() < *threshold {
                match state.dequeue_front() {
                    Some(rec) => {
                        state.activate(rec.id, rec.power);
                        released.push(rec);
                        if single_release {
                            break;
                        }
                    }
                    None => break,
                }
            }
        }
        PolicySpec::EnhancedThresholdPostponement { threshold } => {
            if pre_completion_power <= *threshold {
                if let Some(rec) = state.dequeue_front() {
                    state.activate(rec.id, rec.power);
                    released.push(rec);
                }
            }
        }
    }
    released
}

/// Deadline expiry unconditionally moves a queued task into service,
/// thresholds notwithstanding.
pub(crate) fn policy_on_deadline(state: &mut SimState, record: &QueuedTask) {
    state.activate(record.id, record.power);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switching_curve_lookup() {
        let curve = SwitchingCurve::new(5.0, vec![(2, 6.0), (5, 8.0)]).unwrap();
        assert_eq!(curve.threshold_at(0), 5.0);
        assert_eq!(curve.threshold_at(1), 5.0);
        assert_eq!(curve.threshold_at(2), 6.0);
        assert_eq!(curve.threshold_at(4), 6.0);
        assert_eq!(curve.threshold_at(5), 8.0);
        assert_eq!(curve.threshold_at(100), 8.0);
    }

    #[test]
    fn switching_curve_must_be_nondecreasing() {
        assert!(SwitchingCurve::new(5.0, vec![(2, 4.0)]).is_err());
        assert!(SwitchingCurve::new(5.0, vec![(2, 6.0), (3, 5.5)]).is_err());
        assert!(SwitchingCurve::new(-1.0, vec![]).is_err());
    }

    #[test]
    fn arrival_decisions() {
        // strict inequality at the CR boundary
        let cr = PolicySpec::cr(5.0);
        assert_eq!(policy_on_arrival(&cr, 4.0, 0), ArrivalDecision::ActivateNow);
        assert_eq!(policy_on_arrival(&cr, 5.0, 0), ArrivalDecision::Postpone);
        // default always activates
        assert_eq!(
            policy_on_arrival(&PolicySpec::Default, 100.0, 3),
            ArrivalDecision::ActivateNow
        );
        // ETP activates at the boundary
        let etp = PolicySpec::etp(5.0);
        assert_eq!(policy_on_arrival(&etp, 5.0, 0), ArrivalDecision::ActivateNow);
        assert_eq!(policy_on_arrival(&etp, 5.5, 0), ArrivalDecision::Postpone);
        // TP consults the curve at the current queue length
        let tp = PolicySpec::ThresholdPostponement {
            curve: SwitchingCurve::new(5.0, vec![(3, 7.0)]).unwrap(),
        };
        assert_eq!(policy_on_arrival(&tp, 6.0, 0), ArrivalDecision::Postpone);
        assert_eq!(policy_on_arrival(&tp, 6.0, 3), ArrivalDecision::ActivateNow);
    }

    #[test]
    fn completion_release_semantics() {
        // CR: P drops 5 -> 4 with three unit tasks queued: release exactly one
        // (power returns to 5, the strict test fails afterwards)
        let mut state = SimState::for_testing(&[1.0; 4], &[(10, 1.0), (11, 1.0), (12, 1.0)]);
        let released = policy_on_completion(&mut state, &PolicySpec::cr(5.0), 5.0, false);
        assert_eq!(released.len(), 1);
        assert_eq!(released[0].id, 10);
        assert_eq!(state.power(), 5.0);
        assert_eq!(state.queue_len(), 2);

        // ETP: release exactly one when the pre-completion power was within
        // the regime
        let mut state = SimState::for_testing(&[1.0; 4], &[(10, 1.0), (11, 1.0), (12, 1.0)]);
        let released = policy_on_completion(&mut state, &PolicySpec::etp(5.0), 5.0, false);
        assert_eq!(released.len(), 1);
        // ... and none when it was not
        let mut state = SimState::for_testing(&[1.0; 6], &[(10, 1.0)]);
        let released = policy_on_completion(&mut state, &PolicySpec::etp(5.0), 7.0, false);
        assert!(released.is_empty());

        // TP never releases on completion
        let mut state = SimState::for_testing(&[1.0; 2], &[(10, 1.0)]);
        let tp = PolicySpec::tp_constant(5.0).unwrap();
        assert!(policy_on_completion(&mut state, &tp, 3.0, false).is_empty());
    }

    #[test]
    fn cr_greedy_release_drains_below_threshold() {
        // P drops 5 -> 2 (a power-3 task finished); two unit tasks queued and
        // both fit strictly below the threshold of 5
        let mut state = SimState::for_testing(&[1.0, 1.0], &[(10, 1.0), (11, 1.0), (12, 1.0)]);
        let released = policy_on_completion(&mut state, &PolicySpec::cr(5.0), 5.0, false);
        assert_eq!(released.len(), 3);
        assert_eq!(state.power(), 5.0);
        // single-release mode stops after one
        let mut state = SimState::for_testing(&[1.0, 1.0], &[(10, 1.0), (11, 1.0), (12, 1.0)]);
        let released = policy_on_completion(&mut state, &PolicySpec::cr(5.0), 5.0, true);
        assert_eq!(released.len(), 1);
    }

    #[test]
    fn deadline_activation_is_unconditional() {
        let mut state = SimState::for_testing(&[1.0; 9], &[]);
        let rec = QueuedTask {
            id: 42,
            power: 1.0,
            duration: 1.0,
        };
        policy_on_deadline(&mut state, &rec);
        assert_eq!(state.power(), 10.0);
        assert_eq!(state.active_count(), 10);
    }
}
