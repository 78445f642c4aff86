//! Trace checkers shared by the property and acceptance suites. Each one
//! re-derives its property from the CSV-level records only.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use envelope_core::model::{JobOverride, PriorityMap, Task, TaskId, TaskSet, Tick};
use envelope_core::{Metrics, Record, RecordKind, Trace};

pub fn two_tasks(overridden: bool) -> TaskSet {
    let tasks = vec![
        Task::periodic("tau_l", 2, 3).importance(1).line(1),
        Task::periodic("tau_h", 2, 6)
            .importance(2)
            .line(2)
            .envelope(2, 6),
    ];
    if overridden {
        let map = PriorityMap::from_base(vec![1, 2]).with_override(
            TaskId(0),
            JobOverride {
                every: 2,
                index: 0,
                priority: 3,
            },
        );
        TaskSet::new(tasks, map)
    } else {
        TaskSet::importance_monotonic(tasks)
    }
}

fn task_of<'a>(ts: &'a TaskSet, r: &Record) -> Option<&'a Task> {
    r.task
        .as_deref()
        .and_then(|n| ts.by_name(n))
        .map(|id| ts.task(id))
}

/// Internalization timestamps per line (back-filled ones carry their
/// assigned timestamp).
pub fn internalize_stamps(trace: &Trace) -> BTreeMap<u32, Vec<Tick>> {
    let mut out: BTreeMap<u32, Vec<Tick>> = BTreeMap::new();
    for r in trace.of_kind(RecordKind::Internalize) {
        let ts: Tick = r
            .detail_value("ts")
            .expect("ts")
            .parse()
            .expect("numeric ts");
        out.entry(r.line.expect("line")).or_default().push(ts);
    }
    for v in out.values_mut() {
        v.sort_unstable();
    }
    out
}

/// Windows `(t - W, t]` holding more than `n` internalizations.
pub fn window_violations(ts: &TaskSet, trace: &Trace) -> Vec<String> {
    let mut out = Vec::new();
    for (line, stamps) in internalize_stamps(trace) {
        let task = ts.task(ts.by_line(envelope_core::LineId(line)).unwrap());
        for (i, &t) in stamps.iter().enumerate() {
            let inside = stamps[..=i]
                .iter()
                .filter(|&&s| s + task.envelope_w > t)
                .count()
                + stamps[i + 1..].iter().take_while(|&&s| s == t).count();
            if inside > task.envelope_n as usize {
                out.push(format!(
                    "line {line}: {inside} internalizations in window ending {t}"
                ));
            }
        }
    }
    out
}

/// RAISE = INTERNALIZE + counter-only per line, and both agree with the
/// metrics.
pub fn conservation_errors(trace: &Trace, metrics: &Metrics) -> Vec<String> {
    let mut raised: BTreeMap<u32, u64> = BTreeMap::new();
    let mut internal: BTreeMap<u32, u64> = BTreeMap::new();
    for r in trace.records() {
        match r.kind {
            RecordKind::Raise => *raised.entry(r.line.unwrap()).or_default() += 1,
            RecordKind::Internalize => *internal.entry(r.line.unwrap()).or_default() += 1,
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (&line, m) in &metrics.lines {
        let r = raised.get(&line).copied().unwrap_or(0);
        let i = internal.get(&line).copied().unwrap_or(0);
        if r != m.raised || i != m.internalized || r != i + m.suppressed {
            out.push(format!(
                "line {line}: RAISE {r}, INTERNALIZE {i}, counter-only {}, device {}",
                m.suppressed, m.raised
            ));
        }
    }
    out
}

/// The counter reported by consecutive RAISE records of a line goes 1, 2, 3...
pub fn counter_errors(trace: &Trace) -> Vec<String> {
    let mut last: BTreeMap<u32, u64> = BTreeMap::new();
    let mut out = Vec::new();
    for r in trace.of_kind(RecordKind::Raise) {
        let c: u64 = r.detail_value("counter").unwrap().parse().unwrap();
        let prev = last.insert(r.line.unwrap(), c).unwrap_or(0);
        if c != prev + 1 {
            out.push(format!(
                "line {:?} at {}: counter {prev} then {c}",
                r.line, r.time
            ));
        }
    }
    out
}

/// Direct internalizations on a line that was masked or below the
/// interrupt priority level at that moment.
pub fn suppression_errors(ts: &TaskSet, trace: &Trace) -> Vec<String> {
    let mut reasons: BTreeMap<u32, BTreeSet<String>> = BTreeMap::new();
    let mut ipl: i64 = i64::MIN;
    let mut out = Vec::new();
    for r in trace.records() {
        match r.kind {
            RecordKind::Mask => {
                let reason = r.detail_value("reason").unwrap().to_string();
                reasons.entry(r.line.unwrap()).or_default().insert(reason);
            }
            RecordKind::Unmask => {
                let reason = r.detail_value("reason").unwrap();
                reasons.entry(r.line.unwrap()).or_default().remove(reason);
            }
            RecordKind::IplSet => ipl = r.detail_value("level").unwrap().parse().unwrap(),
            RecordKind::Internalize if !r.has_flag("deferred") => {
                let line = r.line.unwrap();
                let masked = reasons.get(&line).is_some_and(|s| !s.is_empty());
                let importance = i64::from(task_of(ts, r).unwrap().importance);
                if masked || importance <= ipl {
                    out.push(format!(
                        "line {line} internalized at {} while closed",
                        r.time
                    ));
                }
            }
            _ => {}
        }
    }
    out
}

/// Each WindowBoundReached is followed, before any further internalization
/// on the line, by the window timer's effect at the armed time.
pub fn mask_pairing_errors(trace: &Trace) -> Vec<String> {
    let recs = trace.records();
    let mut out = Vec::new();
    for (i, r) in recs.iter().enumerate() {
        if r.kind != RecordKind::TimerSet {
            continue;
        }
        let armed_by_window = i > 0
            && recs[i - 1].kind == RecordKind::Alarm
            && recs[i - 1].detail_value("kind") == Some("WindowBoundReached");
        if !armed_by_window {
            continue;
        }
        let line = r.line;
        let at: Tick = r.detail_value("at").unwrap().parse().unwrap();
        let due = at.max(r.time);
        let next = recs[i + 1..].iter().find(|x| {
            x.line == line
                && (x.kind == RecordKind::Internalize
                    || (x.kind == RecordKind::Unmask && x.detail_value("reason") == Some("window")))
        });
        match next {
            Some(x) if x.kind == RecordKind::Unmask && x.time == due => {}
            None => {}
            Some(x) => out.push(format!(
                "line {line:?}: window armed for {due}, next event {} at {}",
                x.kind, x.time
            )),
        }
    }
    out
}

/// Per tick, the job holding the CPU (None for idle or kernel time).
pub fn holders(trace: &Trace, horizon: Tick) -> Vec<Option<(String, u64)>> {
    let mut out = Vec::with_capacity(horizon as usize);
    let mut holder: Option<(String, u64)> = None;
    let mut recs = trace.records().iter().peekable();
    for t in 0..horizon {
        while let Some(r) = recs.next_if(|r| r.time <= t) {
            let id = r.task.clone().zip(r.job);
            match r.kind {
                RecordKind::Start => holder = id,
                RecordKind::Preempt
                | RecordKind::Complete
                | RecordKind::Drop
                | RecordKind::Miss
                    if holder == id =>
                {
                    holder = None
                }
                _ => {}
            }
        }
        out.push(holder.clone());
    }
    out
}

#[derive(Default)]
struct TickState {
    live: BTreeSet<(String, u64)>,
    elevated: BTreeSet<String>,
}

/// Walks the trace tick by tick, calling `f` with the state that the
/// scheduler decided on.
fn for_each_tick(
    trace: &Trace,
    horizon: Tick,
    mut f: impl FnMut(Tick, &TickState, Option<&(String, u64)>),
) {
    let hold = holders(trace, horizon);
    let mut state = TickState::default();
    let mut recs = trace.records().iter().peekable();
    for t in 0..horizon {
        while let Some(r) = recs.next_if(|r| r.time <= t) {
            let id = r.task.clone().zip(r.job);
            match r.kind {
                RecordKind::Release => {
                    state.live.insert(id.unwrap());
                }
                RecordKind::Complete | RecordKind::Drop | RecordKind::Miss => {
                    state.live.remove(&id.unwrap());
                }
                RecordKind::Alarm => {
                    let name = r.task.clone().unwrap();
                    match r.detail_value("kind") {
                        Some("OutOfEnvelopeEntered") => {
                            state.elevated.insert(name);
                        }
                        Some("OutOfEnvelopeExited") => {
                            state.elevated.remove(&name);
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        f(t, &state, hold[t as usize].as_ref());
    }
}

/// Ticks where a job ran while a more important elevated task had a live
/// job.
pub fn elevation_errors(ts: &TaskSet, trace: &Trace, horizon: Tick) -> Vec<String> {
    let importance = |name: &str| ts.task(ts.by_name(name).unwrap()).importance;
    let mut out = Vec::new();
    for_each_tick(trace, horizon, |t, state, holder| {
        let Some((name, job)) = holder else { return };
        let mine = importance(name);
        for (other, _) in &state.live {
            if state.elevated.contains(other) && importance(other) > mine {
                out.push(format!(
                    "{name}#{job} ran at {t} while {other} was elevated"
                ));
                return;
            }
        }
    });
    out
}

/// Ticks where the CPU idled although a job was live. Only meaningful
/// without top-half cost.
pub fn idle_errors(trace: &Trace, horizon: Tick) -> Vec<String> {
    let mut out = Vec::new();
    for_each_tick(trace, horizon, |t, state, holder| {
        if holder.is_none() && !state.live.is_empty() {
            out.push(format!("idle at {t} with {} live jobs", state.live.len()));
        }
    });
    out
}

/// Executed ticks + remaining = C at every finalization.
pub fn execution_errors(ts: &TaskSet, trace: &Trace, horizon: Tick) -> Vec<String> {
    let mut executed: BTreeMap<(String, u64), Tick> = BTreeMap::new();
    for h in holders(trace, horizon).into_iter().flatten() {
        *executed.entry(h).or_default() += 1;
    }
    let mut out = Vec::new();
    for r in trace.records() {
        let remaining = match r.kind {
            RecordKind::Complete => 0,
            RecordKind::Drop | RecordKind::Miss => {
                r.detail_value("remaining").unwrap().parse().unwrap()
            }
            _ => continue,
        };
        let id = r.task.clone().zip(r.job).unwrap();
        let wcet = task_of(ts, r).unwrap().wcet;
        let done = executed.get(&id).copied().unwrap_or(0);
        if done + remaining != wcet {
            out.push(format!(
                "{}#{}: executed {done} + remaining {remaining} != {wcet}",
                id.0, id.1
            ));
        }
    }
    out
}
