//! Schedulability in normal operation and bounded exhaustive checking of
//! out-of-envelope feasibility.
//!
//! The exhaustive check enumerates, per task, every set of distinct release
//! ticks that contains the task's synchronous periodic pattern and keeps at
//! most `n` releases in every sliding window of length `W`. Each combined
//! pattern is evaluated by a small standalone simulator that shares no code
//! with the engine, so the two can be checked against each other. A pattern
//! violates feasibility if any job of a release-all task misses its
//! deadline; sheds of less important jobs are allowed.

use std::cmp::Reverse;
use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{run_scenario, EngineError, Policy, Scenario, Workload};
use crate::model::{Period, ResponseOption, TaskId, TaskSet, Tick};
use crate::trace::{RecordKind, Trace};
use crate::workload::WorkloadSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bounds {
    pub max_tasks: usize,
    pub max_horizon: Tick,
    pub max_patterns: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            max_tasks: 3,
            max_horizon: 24,
            max_patterns: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeasibilityError {
    #[error("instance has {tasks} tasks; exhaustive checking is limited to {max}")]
    TooManyTasks { tasks: usize, max: usize },
    #[error("pattern horizon {horizon} exceeds the limit of {max} ticks")]
    HorizonTooLong { horizon: Tick, max: Tick },
    #[error("more than {max} release patterns to enumerate")]
    TooManyPatterns { max: usize },
    #[error(transparent)]
    Engine(#[from] EngineError),
}

impl FeasibilityError {
    /// True for the refusals caused by the enumeration bounds.
    pub fn is_refusal(&self) -> bool {
        !matches!(self, FeasibilityError::Engine(_))
    }
}

/// Release ticks per task, indexed like the task set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub releases: Vec<Vec<Tick>>,
}

impl Pattern {
    pub fn events(&self) -> usize {
        self.releases.iter().map(Vec::len).sum()
    }

    pub fn workload(&self, ts: &TaskSet) -> Vec<Workload> {
        ts.ids()
            .map(|id| Workload {
                line: ts.task(id).line,
                spec: WorkloadSpec::Explicit {
                    times: self.releases[id.0].clone(),
                },
            })
            .collect()
    }

    pub fn describe(&self, ts: &TaskSet) -> String {
        ts.ids()
            .map(|id| {
                let times: Vec<String> = self.releases[id.0]
                    .iter()
                    .map(ToString::to_string)
                    .collect();
                format!("{}@[{}]", ts.task(id).name, times.join(","))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JobVerdict {
    Completed,
    Dropped,
    Missed,
    /// Still live when the simulation ended.
    Unfinished,
}

impl fmt::Display for JobVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JobVerdict::Completed => "completed",
            JobVerdict::Dropped => "dropped",
            JobVerdict::Missed => "missed",
            JobVerdict::Unfinished => "unfinished",
        })
    }
}

/// Final state of every job, keyed by task and 1-based job number.
pub type Verdicts = BTreeMap<(TaskId, u64), JobVerdict>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissWitness {
    pub task: String,
    pub job: u64,
    pub time: Tick,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NormalVerdict {
    Schedulable,
    Miss(MissWitness),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OoeVerdict {
    /// Every pattern is met. `stress` is the replayed trace of the pattern
    /// with the most releases.
    Feasible {
        patterns: usize,
        stress: Box<(Pattern, Trace)>,
    },
    Violation {
        patterns: usize,
        index: usize,
        pattern: Pattern,
        witness: MissWitness,
    },
}

/// Replays one hyperperiod of synchronous periodic releases and reports the
/// first deadline miss.
pub fn check_normal(ts: &TaskSet, policy: Policy) -> Result<NormalVerdict, EngineError> {
    let horizon = ts.hyperperiod().unwrap_or_else(|| ts.max_deadline()).max(1);
    let workload = ts
        .ids()
        .filter_map(|id| {
            let task = ts.task(id);
            task.period.finite().map(|period| Workload {
                line: task.line,
                spec: WorkloadSpec::Periodic { offset: 0, period },
            })
        })
        .collect();
    let sc = Scenario::new(ts.clone(), policy, workload).with_horizon(horizon);
    let (trace, _) = run_scenario(&sc)?;
    let first = trace.of_kind(RecordKind::Miss).next().cloned();
    Ok(match first {
        None => NormalVerdict::Schedulable,
        Some(miss) => NormalVerdict::Miss(MissWitness {
            task: miss.task.unwrap_or_default(),
            job: miss.job.unwrap_or_default(),
            time: miss.time,
            trace,
        }),
    })
}

/// Default pattern horizon: one hyperperiod, or the longest window if no
/// task is periodic.
pub fn pattern_horizon(ts: &TaskSet) -> Tick {
    ts.hyperperiod().unwrap_or_else(|| ts.max_window()).max(1)
}

fn normal_releases(period: Period, horizon: Tick) -> Vec<Tick> {
    match period {
        Period::Ticks(p) if p > 0 => (0..horizon).step_by(p as usize).collect(),
        _ => Vec::new(),
    }
}

fn window_ok(chosen: &[Tick], n: u32, w: Tick) -> bool {
    // Only windows ending at a release can hold the maximum.
    chosen.iter().enumerate().all(|(i, &t)| {
        let inside = chosen[..=i]
            .iter()
            .rev()
            .take_while(|&&s| s + w > t)
            .count();
        inside <= n as usize
    })
}

/// Every superset of the normal releases of one task within `[0, horizon)`
/// that keeps at most `n` releases per sliding `w`, ordered by size and
/// then lexicographically.
pub fn task_patterns(
    normal: &[Tick],
    n: u32,
    w: Tick,
    horizon: Tick,
    cap: usize,
) -> Result<Vec<Vec<Tick>>, FeasibilityError> {
    if !window_ok(normal, n, w) {
        // The envelope cannot even hold the normal pattern.
        return Ok(vec![normal.to_vec()]);
    }
    let mut out = Vec::new();
    let mut chosen = Vec::new();
    extend(normal, n, w, horizon, 0, &mut chosen, &mut out, cap)?;
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn extend(
    normal: &[Tick],
    n: u32,
    w: Tick,
    horizon: Tick,
    t: Tick,
    chosen: &mut Vec<Tick>,
    out: &mut Vec<Vec<Tick>>,
    cap: usize,
) -> Result<(), FeasibilityError> {
    if t == horizon {
        if out.len() >= cap {
            return Err(FeasibilityError::TooManyPatterns { max: cap });
        }
        out.push(chosen.clone());
        return Ok(());
    }
    let forced = normal.binary_search(&t).is_ok();
    if !forced {
        extend(normal, n, w, horizon, t + 1, chosen, out, cap)?;
    }
    let inside = chosen.iter().rev().take_while(|&&s| s + w > t).count();
    if inside < n as usize {
        chosen.push(t);
        extend(normal, n, w, horizon, t + 1, chosen, out, cap)?;
        chosen.pop();
    }
    Ok(())
}

/// The enumerated patterns of a task set, as per-task option lists whose
/// cartesian product (first task most significant) is the pattern space.
#[derive(Debug, Clone)]
pub struct PatternSpace {
    pub horizon: Tick,
    options: Vec<Vec<Vec<Tick>>>,
}

impl PatternSpace {
    pub fn new(ts: &TaskSet, horizon: Tick, bounds: Bounds) -> Result<Self, FeasibilityError> {
        if ts.len() > bounds.max_tasks {
            return Err(FeasibilityError::TooManyTasks {
                tasks: ts.len(),
                max: bounds.max_tasks,
            });
        }
        if horizon > bounds.max_horizon {
            return Err(FeasibilityError::HorizonTooLong {
                horizon,
                max: bounds.max_horizon,
            });
        }
        let mut options = Vec::new();
        let mut total: usize = 1;
        for task in ts.tasks() {
            let normal = normal_releases(task.period, horizon);
            let opts = task_patterns(
                &normal,
                task.envelope_n,
                task.envelope_w,
                horizon,
                bounds.max_patterns,
            )?;
            total = total
                .checked_mul(opts.len())
                .filter(|&t| t <= bounds.max_patterns)
                .ok_or(FeasibilityError::TooManyPatterns {
                    max: bounds.max_patterns,
                })?;
            options.push(opts);
        }
        Ok(PatternSpace { horizon, options })
    }

    pub fn len(&self) -> usize {
        self.options.iter().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, mut index: usize) -> Pattern {
        let mut releases = vec![Vec::new(); self.options.len()];
        for (i, opts) in self.options.iter().enumerate().rev() {
            releases[i] = opts[index % opts.len()].clone();
            index /= opts.len();
        }
        Pattern { releases }
    }
}

/// Simulation length for a pattern: every released job reaches its deadline.
pub fn replay_horizon(ts: &TaskSet, pattern_horizon: Tick) -> Tick {
    pattern_horizon + ts.max_deadline()
}

/// Policy used for pattern evaluation: immediate internalization, no
/// interrupt cost, no IPL filtering.
pub fn evaluation_policy(policy: Policy) -> Policy {
    Policy {
        ipl_optimization: false,
        mask_until_bottom_half: false,
        delta_th: 0,
        ..policy
    }
}

/// Runs `pattern` through the engine.
pub fn replay_pattern(
    ts: &TaskSet,
    policy: Policy,
    pattern: &Pattern,
    horizon: Tick,
) -> Result<Trace, EngineError> {
    let sc = Scenario::new(ts.clone(), evaluation_policy(policy), pattern.workload(ts))
        .with_horizon(replay_horizon(ts, horizon));
    Ok(run_scenario(&sc)?.0)
}

/// Job verdicts recorded in an engine trace.
pub fn verdicts_from_trace(ts: &TaskSet, trace: &Trace) -> Verdicts {
    let mut out = Verdicts::new();
    for r in trace.records() {
        let verdict = match r.kind {
            RecordKind::Release => JobVerdict::Unfinished,
            RecordKind::Complete => JobVerdict::Completed,
            RecordKind::Drop => JobVerdict::Dropped,
            RecordKind::Miss => JobVerdict::Missed,
            _ => continue,
        };
        let (Some(name), Some(job)) = (r.task.as_deref(), r.job) else {
            continue;
        };
        let task = ts.by_name(name).expect("trace task belongs to the set");
        out.insert((task, job), verdict);
    }
    out
}

/// True if `verdicts` contain a miss that the feasibility definition
/// forbids.
fn forbidden_miss(ts: &TaskSet, verdicts: &Verdicts) -> bool {
    verdicts.iter().any(|(&(task, _), &v)| {
        v == JobVerdict::Missed && ts.task(task).response == ResponseOption::ReleaseAll
    })
}

struct SimJob {
    task: TaskId,
    seq: u64,
    deadline: Tick,
    remaining: Tick,
    shed: bool,
}

/// Standalone evaluation of one pattern with immediate internalization.
///
/// A task is out of envelope from the first release closer than `T` to its
/// predecessor (any release if `T` is infinite) until `max(T, W)` ticks
/// after the last such release, extended while its line is held by the
/// window mask. The mask covers `[x, e + W)` for every release `x` that
/// fills the window, `e` being the oldest release in it.
pub fn evaluate_pattern(ts: &TaskSet, pattern: &Pattern, horizon: Tick) -> Verdicts {
    let end = replay_horizon(ts, horizon);
    let k = ts.len();
    let mut masks: Vec<Vec<(Tick, Tick)>> = vec![Vec::new(); k];
    for id in ts.ids() {
        let task = ts.task(id);
        let times = &pattern.releases[id.0];
        for (i, &x) in times.iter().enumerate() {
            let inside: Vec<Tick> = times[..=i]
                .iter()
                .copied()
                .filter(|&s| s + task.envelope_w > x)
                .collect();
            if inside.len() >= task.envelope_n as usize {
                masks[id.0].push((x, inside[0] + task.envelope_w));
            }
        }
    }
    let quiet_span = |id: TaskId| {
        let task = ts.task(id);
        task.period.finite().unwrap_or(0).max(task.envelope_w)
    };
    // At the start of tick t only releases before t have taken effect.
    let masked = |id: TaskId, t: Tick| masks[id.0].iter().any(|&(x, until)| x < t && t < until);

    let mut ooe = vec![false; k];
    let mut last_close: Vec<Option<Tick>> = vec![None; k];
    let mut previous: Vec<Option<Tick>> = vec![None; k];
    let mut seq = vec![0u64; k];
    let mut jobs: Vec<SimJob> = Vec::new();
    let mut live: Vec<usize> = Vec::new();
    let mut verdicts = Verdicts::new();

    for t in 0..=end {
        for id in ts.ids() {
            if let (true, Some(c)) = (ooe[id.0], last_close[id.0]) {
                if t >= c + quiet_span(id) && !masked(id, t) {
                    ooe[id.0] = false;
                }
            }
        }
        live.retain(|&j| {
            let job = &jobs[j];
            if job.deadline > t {
                return true;
            }
            let v = if job.shed {
                JobVerdict::Dropped
            } else {
                JobVerdict::Missed
            };
            verdicts.insert((job.task, job.seq + 1), v);
            false
        });
        if t == end {
            break;
        }
        for id in ts.ids() {
            if pattern.releases[id.0].binary_search(&t).is_err() {
                continue;
            }
            let task = ts.task(id);
            let close = match (task.period, previous[id.0]) {
                (Period::Infinite, _) => true,
                (Period::Ticks(p), Some(prev)) => t - prev < p,
                (Period::Ticks(_), None) => false,
            };
            previous[id.0] = Some(t);
            if close {
                last_close[id.0] = Some(t);
                ooe[id.0] = true;
            }
            if task.response == ResponseOption::NotifyRunning
                && live.iter().any(|&j| jobs[j].task == id)
            {
                continue;
            }
            verdicts.insert((id, seq[id.0] + 1), JobVerdict::Unfinished);
            live.push(jobs.len());
            jobs.push(SimJob {
                task: id,
                seq: seq[id.0],
                deadline: t + task.deadline,
                remaining: task.wcet,
                shed: false,
            });
            seq[id.0] += 1;
        }
        let band = live
            .iter()
            .map(|&j| jobs[j].task)
            .filter(|id| ooe[id.0])
            .map(|id| ts.task(id).importance)
            .max();
        let pick = live
            .iter()
            .copied()
            .filter(|&j| band.is_none_or(|b| ts.task(jobs[j].task).importance >= b))
            .max_by_key(|&j| {
                let job = &jobs[j];
                (
                    ts.priorities().job_priority(job.task, job.seq),
                    Reverse(job.task),
                    Reverse(job.seq),
                )
            });
        let Some(run) = pick else { continue };
        let runner = jobs[run].task;
        if ooe[runner.0] {
            let importance = ts.task(runner).importance;
            for &j in &live {
                if j != run && ts.task(jobs[j].task).importance < importance {
                    jobs[j].shed = true;
                }
            }
        }
        jobs[run].remaining -= 1;
        if jobs[run].remaining == 0 {
            verdicts.insert((runner, jobs[run].seq + 1), JobVerdict::Completed);
            live.retain(|&j| j != run);
        }
    }
    verdicts
}

/// Exhaustively checks every admissible release pattern over `horizon`
/// ticks (one hyperperiod by default).
pub fn check_ooe_feasible(
    ts: &TaskSet,
    policy: Policy,
    bounds: Bounds,
    horizon: Option<Tick>,
) -> Result<OoeVerdict, FeasibilityError> {
    let horizon = horizon.unwrap_or_else(|| pattern_horizon(ts));
    let space = PatternSpace::new(ts, horizon, bounds)?;
    let patterns = space.len();
    let first_bad = (0..patterns)
        .into_par_iter()
        .find_first(|&i| forbidden_miss(ts, &evaluate_pattern(ts, &space.get(i), horizon)));
    if let Some(index) = first_bad {
        let pattern = space.get(index);
        let trace = replay_pattern(ts, policy, &pattern, horizon)?;
        let miss = trace
            .of_kind(RecordKind::Miss)
            .find(|r| {
                r.task
                    .as_deref()
                    .and_then(|n| ts.by_name(n))
                    .is_some_and(|id| ts.task(id).response == ResponseOption::ReleaseAll)
            })
            .cloned();
        let (task, job, time) = miss
            .map(|r| {
                (
                    r.task.unwrap_or_default(),
                    r.job.unwrap_or_default(),
                    r.time,
                )
            })
            .unwrap_or_default();
        return Ok(OoeVerdict::Violation {
            patterns,
            index,
            pattern,
            witness: MissWitness {
                task,
                job,
                time,
                trace,
            },
        });
    }
    let densest = (0..patterns)
        .max_by_key(|&i| (space.get(i).events(), Reverse(i)))
        .unwrap_or(0);
    let pattern = space.get(densest);
    let trace = replay_pattern(ts, policy, &pattern, horizon)?;
    Ok(OoeVerdict::Feasible {
        patterns,
        stress: Box::new((pattern, trace)),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mismatch {
    pub index: usize,
    pub pattern: Pattern,
    pub oracle: Verdicts,
    pub engine: Verdicts,
}

/// Evaluates every pattern with both the standalone simulator and the
/// engine and returns the pattern count and any disagreements.
pub fn cross_check(
    ts: &TaskSet,
    policy: Policy,
    bounds: Bounds,
    horizon: Option<Tick>,
) -> Result<(usize, Vec<Mismatch>), FeasibilityError> {
    let horizon = horizon.unwrap_or_else(|| pattern_horizon(ts));
    let space = PatternSpace::new(ts, horizon, bounds)?;
    let results: Vec<Result<Option<Mismatch>, EngineError>> = (0..space.len())
        .into_par_iter()
        .map(|index| {
            let pattern = space.get(index);
            let oracle = evaluate_pattern(ts, &pattern, horizon);
            let engine = verdicts_from_trace(ts, &replay_pattern(ts, policy, &pattern, horizon)?);
            Ok((oracle != engine).then_some(Mismatch {
                index,
                pattern,
                oracle,
                engine,
            }))
        })
        .collect();
    let mut mismatches = Vec::new();
    for r in results {
        mismatches.extend(r?);
    }
    Ok((space.len(), mismatches))
}
