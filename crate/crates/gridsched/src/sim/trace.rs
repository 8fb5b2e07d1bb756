//! Line-delimited trajectory traces for the transition-rate audit.
//!
//! Format (stable): a header line `time,event,power,queue` followed by one
//! CSV record per event carrying the post-event state. `init` and `end`
//! markers delimit the trajectory.

use std::io::{BufRead, Write};

use serde::Serialize;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TraceEventKind {
    /// Start-of-trace marker at time zero.
    Init,
    ArrivalActivated,
    ArrivalPostponed,
    Completion,
    /// Completion with simultaneous activation of queued demand(s).
    CompletionRelease,
    DeadlineActivation,
    /// End-of-trace marker at the horizon; accounts the final sojourn.
    End,
}

impl TraceEventKind {
    pub fn token(&self) -> &'static str {
        match self {
            TraceEventKind::Init => "init",
            TraceEventKind::ArrivalActivated => "arrival_activated",
            TraceEventKind::ArrivalPostponed => "arrival_postponed",
            TraceEventKind::Completion => "completion",
            TraceEventKind::CompletionRelease => "completion_release",
            TraceEventKind::DeadlineActivation => "deadline_activation",
            TraceEventKind::End => "end",
        }
    }

    fn from_token(token: &str) -> Option<Self> {
        Some(match token {
            "init" => TraceEventKind::Init,
            "arrival_activated" => TraceEventKind::ArrivalActivated,
            "arrival_postponed" => TraceEventKind::ArrivalPostponed,
            "completion" => TraceEventKind::Completion,
            "completion_release" => TraceEventKind::CompletionRelease,
            "deadline_activation" => TraceEventKind::DeadlineActivation,
            "end" => TraceEventKind::End,
            _ => return None,
        })
    }
}

/// One trace line: the event and the post-event `(P, Q)` state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time: f64,
    pub kind: TraceEventKind,
    pub power: f64,
    pub queue: u64,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        format!("{},{},{},{}", self.time, self.kind.token(), self.power, self.queue)
    }

    pub fn parse_line(line: &str) -> Result<Self, SimError> {
        let bad = |reason: String| SimError::BadTrace { reason };
        let mut parts = line.trim_end().split(',');
        let mut next = |what: &str| {
            parts
                .next()
                .ok_or_else(|| bad(format!("missing field `{what}` in `{line}`")))
        };
        let time: f64 = next("time")?
            .parse()
            .map_err(|e| bad(format!("time: {e}")))?;
        let kind_token = next("event")?;
        let kind = TraceEventKind::from_token(kind_token)
            .ok_or_else(|| bad(format!("unknown event `{kind_token}`")))?;
        let power: f64 = next("power")?
            .parse()
            .map_err(|e| bad(format!("power: {e}")))?;
        let queue: u64 = next("queue")?
            .parse()
            .map_err(|e| bad(format!("queue: {e}")))?;
        Ok(Self {
            time,
            kind,
            power,
            queue,
        })
    }
}

pub const TRACE_HEADER: &str = "time,event,power,queue";

pub fn write_trace<W: Write>(mut writer: W, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(writer, "{TRACE_HEADER}")?;
    for rec in records {
        writeln!(writer, "{}", rec.to_line())?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceRecord>, SimError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| SimError::BadTrace {
            reason: format!("line {}: {e}", i + 1),
        })?;
        if i == 0 && line.trim_end() == TRACE_HEADER {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.push(TraceRecord::parse_line(&line)?);
    }
    Ok(out)
}
