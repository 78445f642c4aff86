//! Vectored interrupt controller model.
//!
//! Each external line has a priority, an individual mask bit, a device
//! event counter and a pending latch. A global interrupt priority level
//! (IPL) suppresses every line whose priority does not exceed it. The timer
//! line sits above every possible IPL and cannot be masked.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{LineId, Tick};

pub type IrqPriority = i64;

/// Priority of the timer line; no IPL can reach it.
pub const TIMER_PRIORITY: IrqPriority = IrqPriority::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum VicError {
    #[error("unknown interrupt line {0}")]
    UnknownLine(LineId),
    #[error("the timer line cannot be masked")]
    TimerNotMaskable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterruptLine {
    pub id: LineId,
    pub irq_priority: IrqPriority,
    pub masked: bool,
    pub device_counter: u64,
    pub pending: bool,
}

impl InterruptLine {
    fn new(id: LineId, irq_priority: IrqPriority) -> Self {
        InterruptLine {
            id,
            irq_priority,
            masked: false,
            device_counter: 0,
            pending: false,
        }
    }

    fn enabled(&self, ipl: IrqPriority) -> bool {
        !self.masked && self.irq_priority > ipl
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaiseOutcome {
    /// The line is enabled; the occurrence is pending and will be returned
    /// by the next poll.
    DeliveredNow,
    /// The line is enabled but an earlier occurrence is still pending; both
    /// coalesce into one latch.
    LatchedPending,
    SuppressedMasked,
    SuppressedIpl,
}

impl RaiseOutcome {
    pub fn is_suppressed(self) -> bool {
        matches!(
            self,
            RaiseOutcome::SuppressedMasked | RaiseOutcome::SuppressedIpl
        )
    }
}

/// Device counter value read at some point in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snapshot {
    pub line: LineId,
    pub counter: u64,
    pub time: Tick,
}

#[derive(Debug, Clone)]
pub struct Vic {
    lines: BTreeMap<LineId, InterruptLine>,
    timer: InterruptLine,
    ipl: IrqPriority,
    latch_suppressed: bool,
    mask_updates: u64,
}

impl Vic {
    pub fn new() -> Self {
        Vic {
            lines: BTreeMap::new(),
            timer: InterruptLine::new(LineId::TIMER, TIMER_PRIORITY),
            ipl: 0,
            latch_suppressed: false,
            mask_updates: 0,
        }
    }

    /// Controller with one line per `(id, priority)` pair. The level starts
    /// low enough for every line to be delivered.
    pub fn with_lines(lines: impl IntoIterator<Item = (LineId, IrqPriority)>) -> Self {
        let mut vic = Vic::new();
        for (id, prio) in lines {
            vic.lines.insert(id, InterruptLine::new(id, prio));
            vic.ipl = vic.ipl.min(prio - 1);
        }
        vic
    }

    /// Level-triggered sources keep one pending latch while suppressed.
    pub fn set_latch_suppressed(&mut self, latch: bool) {
        self.latch_suppressed = latch;
    }

    pub fn line(&self, id: LineId) -> Result<&InterruptLine, VicError> {
        if id == LineId::TIMER {
            return Ok(&self.timer);
        }
        self.lines.get(&id).ok_or(VicError::UnknownLine(id))
    }

    fn line_mut(&mut self, id: LineId) -> Result<&mut InterruptLine, VicError> {
        if id == LineId::TIMER {
            return Ok(&mut self.timer);
        }
        self.lines.get_mut(&id).ok_or(VicError::UnknownLine(id))
    }

    pub fn lines(&self) -> impl Iterator<Item = &InterruptLine> {
        self.lines.values()
    }

    pub fn ipl(&self) -> IrqPriority {
        self.ipl
    }

    /// Number of individual mask-bit changes so far.
    pub fn mask_updates(&self) -> u64 {
        self.mask_updates
    }

    /// A device raises `line` at time `t`. The counter always advances.
    pub fn raise_event(&mut self, line: LineId, _t: Tick) -> Result<RaiseOutcome, VicError> {
        let ipl = self.ipl;
        let latch = self.latch_suppressed;
        let l = self.line_mut(line)?;
        l.device_counter += 1;
        let outcome = if l.masked {
            RaiseOutcome::SuppressedMasked
        } else if l.irq_priority <= ipl {
            RaiseOutcome::SuppressedIpl
        } else if l.pending {
            RaiseOutcome::LatchedPending
        } else {
            RaiseOutcome::DeliveredNow
        };
        match outcome {
            RaiseOutcome::DeliveredNow | RaiseOutcome::LatchedPending => l.pending = true,
            _ if latch => l.pending = true,
            _ => {}
        }
        Ok(outcome)
    }

    pub fn set_line_mask(&mut self, line: LineId, masked: bool) -> Result<(), VicError> {
        if line == LineId::TIMER {
            return Err(VicError::TimerNotMaskable);
        }
        let l = self.line_mut(line)?;
        if l.masked != masked {
            l.masked = masked;
            self.mask_updates += 1;
        }
        Ok(())
    }

    pub fn set_ipl(&mut self, level: IrqPriority) {
        self.ipl = level;
    }

    /// True if an occurrence on `line` would be delivered right now.
    pub fn is_enabled(&self, line: LineId) -> Result<bool, VicError> {
        Ok(self.line(line)?.enabled(self.ipl))
    }

    pub fn is_deliverable(&self, line: LineId) -> Result<bool, VicError> {
        let l = self.line(line)?;
        Ok(l.pending && l.enabled(self.ipl))
    }

    /// Returns the deliverable line of highest priority (the timer first,
    /// then lower line ids on ties) and clears its pending latch.
    pub fn poll_deliverable(&mut self) -> Option<LineId> {
        if self.timer.pending {
            self.timer.pending = false;
            return Some(LineId::TIMER);
        }
        let ipl = self.ipl;
        let chosen = self
            .lines
            .values()
            .filter(|l| l.pending && l.enabled(ipl))
            .min_by_key(|l| (std::cmp::Reverse(l.irq_priority), l.id))
            .map(|l| l.id)?;
        if let Some(l) = self.lines.get_mut(&chosen) {
            l.pending = false;
        }
        Some(chosen)
    }

    /// Drops a pending latch without delivering it.
    pub fn clear_pending(&mut self, line: LineId) -> Result<bool, VicError> {
        let l = self.line_mut(line)?;
        Ok(std::mem::replace(&mut l.pending, false))
    }

    pub fn read_counter(&self, line: LineId) -> Result<u64, VicError> {
        Ok(self.line(line)?.device_counter)
    }

    pub fn snapshot_counter(&self, line: LineId, t: Tick) -> Result<Snapshot, VicError> {
        Ok(Snapshot {
            line,
            counter: self.read_counter(line)?,
            time: t,
        })
    }

    /// Occurrences counted by the device since `snap` was taken.
    pub fn counter_delta(&self, snap: &Snapshot) -> Result<u64, VicError> {
        Ok(self.read_counter(snap.line)? - snap.counter)
    }
}

impl Default for Vic {
    fn default() -> Self {
        Vic::new()
    }
}
