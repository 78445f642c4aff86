//! Per-line detection of out-of-envelope arrivals and the masking defense.
//!
//! Every internalized event is timestamped into a ring buffer holding at
//! most `n` entries of the current sliding window. When the ring fills, the
//! line is masked and a timer is armed at `earliest + W`. On expiry the
//! device counter is compared with the value read when masking: any
//! occurrence in between means more than `n` events hit the window and the
//! sensor is declared faulty.
//!
//! Two further suppression sources (a bottom-half mask and the interrupt
//! priority level) defer occurrences instead of dropping them. While a line
//! is deferred the OS only knows the counter; when the line opens again the
//! counted occurrences are internalized in bulk, all carrying the timestamp
//! at which the deferral began.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Importance, LineId, Period, Priority, Task, Tick};
use crate::vic::{IrqPriority, Snapshot, Vic, VicError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultPolicy {
    /// A faulty sensor stays masked for the rest of the run.
    #[default]
    Permanent,
    /// Re-check every `W` and resume once fewer than `n` raises were
    /// counted over the preceding window.
    AutoResume,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LineClass {
    InEnvelope,
    OutOfEnvelope,
    WindowMasked,
    Faulty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlarmKind {
    OutOfEnvelopeEntered,
    /// Not an alarm in the strict sense; marks the end of an episode so the
    /// exit rule is visible in traces.
    OutOfEnvelopeExited,
    WindowBoundReached,
    SensorFault,
    SensorResumed,
}

impl AlarmKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlarmKind::OutOfEnvelopeEntered => "OutOfEnvelopeEntered",
            AlarmKind::OutOfEnvelopeExited => "OutOfEnvelopeExited",
            AlarmKind::WindowBoundReached => "WindowBoundReached",
            AlarmKind::SensorFault => "SensorFault",
            AlarmKind::SensorResumed => "SensorResumed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alarm {
    pub time: Tick,
    pub line: LineId,
    pub kind: AlarmKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error(transparent)]
    Vic(#[from] VicError),
    #[error("line {0}: internalization while masked by the window defense")]
    InternalizeWhileMasked(LineId),
    #[error("line {0}: window timer fired without an armed window")]
    TimerWithoutMask(LineId),
    #[error("line {0}: timer fired at {1} before its expiry")]
    TimerNotDue(LineId, Tick),
    #[error("line {0}: bottom-half mask released without a matching apply")]
    NoBottomHalfMask(LineId),
}

/// Window mask engaged by a full ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowArm {
    pub alarm: Alarm,
    pub timer_at: Tick,
}

/// What one internalization did to the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InternalizeEffect {
    /// Timestamp recorded in the ring.
    pub timestamp: Tick,
    pub entered_ooe: Option<Alarm>,
    pub window_full: Option<WindowArm>,
}

impl InternalizeEffect {
    /// True if nothing beyond recording the timestamp happened.
    pub fn is_none(&self) -> bool {
        self.entered_ooe.is_none() && self.window_full.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimerEffect {
    Unmasked,
    FaultDeclared(Alarm),
    /// Still faulty; re-armed at the contained time.
    StillFaulty(Tick),
    Resumed(Alarm),
}

/// Result of closing a deferral: `delta` occurrences were counted while the
/// line was closed, `internalized` of them fit the window and carry
/// `assigned_timestamp`; the rest stay counter-only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeferredInternalizations {
    pub assigned_timestamp: Tick,
    pub delta: u64,
    pub internalized: Vec<InternalizeEffect>,
    pub counter_only: u64,
}

impl DeferredInternalizations {
    pub fn count(&self) -> usize {
        self.internalized.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WindowMask {
    snapshot: Snapshot,
    timer_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Fault {
    snapshot: Snapshot,
    timer_at: Option<Tick>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Deferral {
    snapshot: Snapshot,
    stamp: Tick,
}

#[derive(Debug, Clone)]
pub struct LineMonitor {
    line: LineId,
    capacity: usize,
    window: Tick,
    period: Period,
    fault_policy: FaultPolicy,
    ring: VecDeque<Tick>,
    ooe: bool,
    last_close: Option<Tick>,
    last_timestamp: Option<Tick>,
    window_mask: Option<WindowMask>,
    fault: Option<Fault>,
    bottom_half: bool,
    deferral: Option<Deferral>,
    internalized: u64,
    counter_only: u64,
}

impl LineMonitor {
    pub fn new(task: &Task, fault_policy: FaultPolicy) -> Self {
        LineMonitor {
            line: task.line,
            capacity: task.envelope_n as usize,
            window: task.envelope_w,
            period: task.period,
            fault_policy,
            ring: VecDeque::with_capacity(task.envelope_n as usize),
            ooe: false,
            last_close: None,
            last_timestamp: None,
            window_mask: None,
            fault: None,
            bottom_half: false,
            deferral: None,
            internalized: 0,
            counter_only: 0,
        }
    }

    pub fn line(&self) -> LineId {
        self.line
    }

    pub fn classify_line(&self) -> LineClass {
        if self.fault.is_some() {
            LineClass::Faulty
        } else if self.window_mask.is_some() {
            LineClass::WindowMasked
        } else if self.ooe {
            LineClass::OutOfEnvelope
        } else {
            LineClass::InEnvelope
        }
    }

    /// True while an out-of-envelope episode is open, whatever the mask
    /// state.
    pub fn is_out_of_envelope(&self) -> bool {
        self.ooe
    }

    pub fn ring(&self) -> impl Iterator<Item = Tick> + '_ {
        self.ring.iter().copied()
    }

    pub fn window_timer(&self) -> Option<Tick> {
        self.window_mask
            .map(|w| w.timer_at)
            .or_else(|| self.fault.and_then(|f| f.timer_at))
    }

    pub fn last_internalize(&self) -> Option<Tick> {
        self.last_timestamp
    }

    pub fn is_deferring(&self) -> bool {
        self.deferral.is_some()
    }

    pub fn bottom_half_masked(&self) -> bool {
        self.bottom_half
    }

    pub fn internalized(&self) -> u64 {
        self.internalized
    }

    /// Occurrences that were counted by the device but will never be
    /// internalized (fault evidence and back-fill overflow).
    pub fn counter_only(&self) -> u64 {
        self.counter_only
    }

    /// Ticks an episode must stay quiet before it closes.
    fn decay_span(&self) -> Tick {
        match self.period {
            Period::Ticks(t) => t.max(self.window),
            Period::Infinite => self.window,
        }
    }

    fn window_defense_active(&self) -> bool {
        self.window_mask.is_some() || self.fault.is_some()
    }

    fn wants_mask(&self) -> bool {
        self.window_defense_active() || self.bottom_half
    }

    fn sync_mask(&self, vic: &mut Vic) -> Result<(), MonitorError> {
        vic.set_line_mask(self.line, self.wants_mask())?;
        Ok(())
    }

    fn prune(&mut self, now: Tick) {
        while let Some(&front) = self.ring.front() {
            if front + self.window <= now {
                self.ring.pop_front();
            } else {
                break;
            }
        }
    }

    fn note_timestamp(&mut self, ts: Tick, now: Tick) -> Option<Alarm> {
        let close = match self.last_timestamp {
            Some(prev) => self.period.violated_by(ts.saturating_sub(prev)),
            // An exception-only task's normal occurrence is taken to have
            // happened already.
            None => self.period == Period::Infinite,
        };
        self.last_timestamp = Some(ts);
        if !close {
            return None;
        }
        self.last_close = Some(now);
        if self.ooe {
            return None;
        }
        self.ooe = true;
        Some(Alarm {
            time: now,
            line: self.line,
            kind: AlarmKind::OutOfEnvelopeEntered,
        })
    }

    fn engage_window(
        &mut self,
        vic: &mut Vic,
        now: Tick,
        excess: u64,
    ) -> Result<WindowArm, MonitorError> {
        let mut snapshot = vic.snapshot_counter(self.line, now)?;
        snapshot.counter -= excess;
        let earliest = *self.ring.front().expect("full ring is not empty");
        let timer_at = earliest + self.window;
        self.window_mask = Some(WindowMask { snapshot, timer_at });
        self.sync_mask(vic)?;
        Ok(WindowArm {
            alarm: Alarm {
                time: now,
                line: self.line,
                kind: AlarmKind::WindowBoundReached,
            },
            timer_at,
        })
    }

    fn push(
        &mut self,
        vic: &mut Vic,
        ts: Tick,
        now: Tick,
        excess: u64,
    ) -> Result<InternalizeEffect, MonitorError> {
        self.prune(ts);
        debug_assert!(self.ring.len() < self.capacity);
        self.ring.push_back(ts);
        self.internalized += 1;
        let entered_ooe = self.note_timestamp(ts, now);
        let window_full = if self.ring.len() >= self.capacity {
            Some(self.engage_window(vic, now, excess)?)
        } else {
            None
        };
        Ok(InternalizeEffect {
            timestamp: ts,
            entered_ooe,
            window_full,
        })
    }

    /// An event on this line was just internalized at `t`.
    pub fn record_internalization(
        &mut self,
        vic: &mut Vic,
        t: Tick,
    ) -> Result<InternalizeEffect, MonitorError> {
        if self.window_defense_active() {
            return Err(MonitorError::InternalizeWhileMasked(self.line));
        }
        self.prune(t);
        if self.ring.len() >= self.capacity {
            return Err(MonitorError::InternalizeWhileMasked(self.line));
        }
        self.push(vic, t, t, 0)
    }

    /// The window (or fault re-check) timer fired at `t`.
    pub fn handle_window_timer(
        &mut self,
        vic: &mut Vic,
        t: Tick,
    ) -> Result<TimerEffect, MonitorError> {
        if let Some(mask) = self.window_mask {
            if t < mask.timer_at {
                return Err(MonitorError::TimerNotDue(self.line, t));
            }
            self.prune(t);
            self.window_mask = None;
            vic.clear_pending(self.line)?;
            let delta = vic.counter_delta(&mask.snapshot)?;
            if delta == 0 {
                self.sync_mask(vic)?;
                self.settle(vic, t)?;
                return Ok(TimerEffect::Unmasked);
            }
            self.counter_only += delta;
            let timer_at = match self.fault_policy {
                FaultPolicy::Permanent => None,
                FaultPolicy::AutoResume => Some(t + self.window),
            };
            self.fault = Some(Fault {
                snapshot: vic.snapshot_counter(self.line, t)?,
                timer_at,
            });
            self.sync_mask(vic)?;
            return Ok(TimerEffect::FaultDeclared(Alarm {
                time: t,
                line: self.line,
                kind: AlarmKind::SensorFault,
            }));
        }
        let fault = match self.fault {
            Some(
                f @ Fault {
                    timer_at: Some(at), ..
                },
            ) if t >= at => f,
            Some(Fault {
                timer_at: Some(_), ..
            }) => return Err(MonitorError::TimerNotDue(self.line, t)),
            _ => return Err(MonitorError::TimerWithoutMask(self.line)),
        };
        vic.clear_pending(self.line)?;
        let delta = vic.counter_delta(&fault.snapshot)?;
        self.counter_only += delta;
        if delta < self.capacity as u64 {
            self.fault = None;
            self.prune(t);
            self.sync_mask(vic)?;
            self.settle(vic, t)?;
            Ok(TimerEffect::Resumed(Alarm {
                time: t,
                line: self.line,
                kind: AlarmKind::SensorResumed,
            }))
        } else {
            let at = t + self.window;
            self.fault = Some(Fault {
                snapshot: vic.snapshot_counter(self.line, t)?,
                timer_at: Some(at),
            });
            Ok(TimerEffect::StillFaulty(at))
        }
    }

    /// Closes the out-of-envelope episode once the most recent pair of
    /// internalizations closer than `T` lies at least `max(T, W)` ticks in
    /// the past and no window mask is active.
    pub fn age(&mut self, now: Tick) -> Option<Alarm> {
        if !self.ooe || self.window_defense_active() {
            return None;
        }
        let last = self.last_close?;
        if now < last + self.decay_span() {
            return None;
        }
        self.ooe = false;
        Some(Alarm {
            time: now,
            line: self.line,
            kind: AlarmKind::OutOfEnvelopeExited,
        })
    }

    /// Starts a deferral if the line is closed for a reason other than the
    /// window defense.
    fn settle(&mut self, vic: &mut Vic, now: Tick) -> Result<(), MonitorError> {
        if self.deferral.is_none() && !self.window_defense_active() && !vic.is_enabled(self.line)? {
            self.deferral = Some(Deferral {
                snapshot: vic.snapshot_counter(self.line, now)?,
                stamp: now,
            });
        }
        Ok(())
    }

    /// Masks the line from the top half at internalization time `t` until
    /// the bottom half completes.
    pub fn apply_bottom_half_mask(&mut self, vic: &mut Vic, t: Tick) -> Result<(), MonitorError> {
        self.bottom_half = true;
        self.sync_mask(vic)?;
        self.settle(vic, t)
    }

    /// The bottom half finished at `t_unmask`. If the line is open again the
    /// occurrences counted meanwhile are back-filled.
    pub fn release_bottom_half_mask(
        &mut self,
        vic: &mut Vic,
        t_unmask: Tick,
    ) -> Result<Option<DeferredInternalizations>, MonitorError> {
        if !self.bottom_half {
            return Err(MonitorError::NoBottomHalfMask(self.line));
        }
        self.bottom_half = false;
        self.sync_mask(vic)?;
        self.reconcile(vic, t_unmask)
    }

    /// Re-evaluates the deferral after the controller state changed (e.g. a
    /// new interrupt priority level): opens a deferral if the line just
    /// closed, back-fills if it just opened.
    pub fn reconcile(
        &mut self,
        vic: &mut Vic,
        now: Tick,
    ) -> Result<Option<DeferredInternalizations>, MonitorError> {
        if self.window_defense_active() {
            return Ok(None);
        }
        if !vic.is_enabled(self.line)? {
            self.settle(vic, now)?;
            return Ok(None);
        }
        let Some(deferral) = self.deferral.take() else {
            return Ok(None);
        };
        vic.clear_pending(self.line)?;
        let delta = vic.counter_delta(&deferral.snapshot)?;
        let stamp = deferral.stamp;
        self.prune(stamp);
        let room = (self.capacity - self.ring.len()) as u64;
        let take = delta.min(room);
        let excess = delta - take;
        let mut internalized = Vec::with_capacity(take as usize);
        for _ in 0..take {
            internalized.push(self.push(vic, stamp, now, excess)?);
        }
        self.counter_only += excess;
        Ok(Some(DeferredInternalizations {
            assigned_timestamp: stamp,
            delta,
            internalized,
            counter_only: excess,
        }))
    }
}

/// What the scheduler would do with the next job released on a line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineView {
    pub importance: Importance,
    pub next_priority: Priority,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SchedView {
    /// Priority of the job holding the CPU, if any.
    pub running: Option<Priority>,
    pub lines: Vec<LineView>,
}

/// Interrupt priority level for the current scheduling decision: just below
/// the least important task whose next job would preempt the running one.
/// Lines whose importance is at or below the level are suppressed.
pub fn compute_ipl(view: &SchedView) -> IrqPriority {
    let open = view
        .lines
        .iter()
        .map(|l| IrqPriority::from(l.importance) - 1)
        .min()
        .unwrap_or(0)
        .min(0);
    let Some(current) = view.running else {
        return open;
    };
    let preempting = view
        .lines
        .iter()
        .filter(|l| l.next_priority > current)
        .map(|l| IrqPriority::from(l.importance))
        .min();
    match preempting {
        Some(least) => least - 1,
        None => view
            .lines
            .iter()
            .map(|l| IrqPriority::from(l.importance))
            .max()
            .unwrap_or(open),
    }
}
