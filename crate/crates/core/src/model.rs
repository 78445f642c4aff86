//! Task model: sporadic tasks with an importance value and an
//! out-of-envelope rate bound, jobs, and scheduler priority maps.

use std::collections::BTreeMap;
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

/// Simulation time and durations, in integer ticks.
pub type Tick = u64;

/// Scheduler priority. Larger values are dispatched first.
pub type Priority = i64;

/// Importance of a task. Larger values are more important.
pub type Importance = u32;

/// Identifier of an external interrupt line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LineId(pub u32);

impl LineId {
    /// Reserved for the controller's timer line.
    pub const TIMER: LineId = LineId(u32::MAX);
}

impl fmt::Display for LineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == LineId::TIMER {
            f.write_str("timer")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Index of a task inside its [`TaskSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub usize);

/// Minimum inter-arrival time of a task. `Infinite` marks a task that is
/// only released by exceptional events.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Period {
    Ticks(Tick),
    Infinite,
}

impl Period {
    pub fn finite(self) -> Option<Tick> {
        match self {
            Period::Ticks(t) => Some(t),
            Period::Infinite => None,
        }
    }

    /// True if two releases `gap` ticks apart violate the period.
    pub fn violated_by(self, gap: Tick) -> bool {
        match self {
            Period::Ticks(t) => gap < t,
            Period::Infinite => true,
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Ticks(t) => write!(f, "{t}"),
            Period::Infinite => f.write_str("inf"),
        }
    }
}

/// How a task reacts to a releasing event that arrives while one of its
/// jobs is still live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseOption {
    /// Every internalized event releases its own job.
    ReleaseAll,
    /// The live job is notified in-band instead of releasing a new one.
    NotifyRunning,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub name: String,
    pub wcet: Tick,
    pub period: Period,
    pub deadline: Tick,
    pub importance: Importance,
    pub line: LineId,
    /// Maximum number of internalized events per sliding window.
    pub envelope_n: u32,
    /// Length of the sliding window.
    pub envelope_w: Tick,
    pub response: ResponseOption,
}

impl Task {
    /// A periodic task with implicit deadline and an envelope that admits
    /// exactly one event per period.
    pub fn periodic(name: impl Into<String>, wcet: Tick, period: Tick) -> Self {
        Task {
            name: name.into(),
            wcet,
            period: Period::Ticks(period),
            deadline: period,
            importance: 0,
            line: LineId(0),
            envelope_n: 1,
            envelope_w: period.max(1),
            response: ResponseOption::ReleaseAll,
        }
    }

    /// A task that is only released by exceptional events.
    pub fn exception_only(name: impl Into<String>, wcet: Tick, deadline: Tick) -> Self {
        Task {
            period: Period::Infinite,
            deadline,
            envelope_w: deadline.max(1),
            ..Task::periodic(name, wcet, deadline)
        }
    }

    pub fn importance(mut self, importance: Importance) -> Self {
        self.importance = importance;
        self
    }

    pub fn line(mut self, line: u32) -> Self {
        self.line = LineId(line);
        self
    }

    pub fn envelope(mut self, n: u32, w: Tick) -> Self {
        self.envelope_n = n;
        self.envelope_w = w;
        self
    }

    pub fn deadline(mut self, deadline: Tick) -> Self {
        self.deadline = deadline;
        self
    }

    pub fn response(mut self, response: ResponseOption) -> Self {
        self.response = response;
        self
    }
}

/// Job-level priority override: applies to every job whose sequence number
/// `seq` (0-based) satisfies `seq % every == index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobOverride {
    pub every: u64,
    pub index: u64,
    pub priority: Priority,
}

impl JobOverride {
    pub fn matches(&self, seq: u64) -> bool {
        self.every > 0 && seq % self.every == self.index
    }
}

/// Scheduler priority of every task plus optional per-job overrides.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PriorityMap {
    base: Vec<Priority>,
    overrides: Vec<Vec<JobOverride>>,
}

impl PriorityMap {
    pub fn from_base(base: Vec<Priority>) -> Self {
        let overrides = vec![Vec::new(); base.len()];
        PriorityMap { base, overrides }
    }

    pub fn with_override(mut self, task: TaskId, ov: JobOverride) -> Self {
        self.overrides[task.0].push(ov);
        self
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn task_priority(&self, task: TaskId) -> Priority {
        self.base[task.0]
    }

    pub fn overrides(&self, task: TaskId) -> &[JobOverride] {
        &self.overrides[task.0]
    }

    /// Priority of the job with sequence number `seq` of `task`. The first
    /// matching override wins.
    pub fn job_priority(&self, task: TaskId, seq: u64) -> Priority {
        self.overrides[task.0]
            .iter()
            .find(|ov| ov.matches(seq))
            .map_or(self.base[task.0], |ov| ov.priority)
    }
}

/// Tasks ordered by declaration, with their priority assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSet {
    tasks: Vec<Task>,
    priorities: PriorityMap,
}

impl TaskSet {
    /// Pairs `tasks` with an explicit priority map. The map must have one
    /// entry per task.
    pub fn new(tasks: Vec<Task>, priorities: PriorityMap) -> Self {
        assert_eq!(
            tasks.len(),
            priorities.len(),
            "priority map does not match the task count"
        );
        TaskSet { tasks, priorities }
    }

    /// Tasks with importance-monotonic priorities.
    pub fn importance_monotonic(tasks: Vec<Task>) -> Self {
        let priorities = assign_importance_monotonic(&tasks);
        TaskSet { tasks, priorities }
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.0]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = TaskId> + '_ {
        (0..self.tasks.len()).map(TaskId)
    }

    pub fn priorities(&self) -> &PriorityMap {
        &self.priorities
    }

    pub fn with_priorities(mut self, priorities: PriorityMap) -> Self {
        assert_eq!(self.tasks.len(), priorities.len());
        self.priorities = priorities;
        self
    }

    pub fn by_line(&self, line: LineId) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.line == line).map(TaskId)
    }

    pub fn by_name(&self, name: &str) -> Option<TaskId> {
        self.tasks.iter().position(|t| t.name == name).map(TaskId)
    }

    pub fn max_importance(&self) -> Option<Importance> {
        self.tasks.iter().map(|t| t.importance).max()
    }

    /// Least common multiple of all finite periods.
    pub fn hyperperiod(&self) -> Option<Tick> {
        self.tasks
            .iter()
            .filter_map(|t| t.period.finite())
            .filter(|&p| p > 0)
            .reduce(|a, b| a.lcm(&b))
    }

    pub fn max_window(&self) -> Tick {
        self.tasks.iter().map(|t| t.envelope_w).max().unwrap_or(0)
    }

    pub fn max_deadline(&self) -> Tick {
        self.tasks.iter().map(|t| t.deadline).max().unwrap_or(0)
    }

    /// Twice the hyperperiod plus the longest window, so that every sliding
    /// window closes inside the run.
    pub fn default_horizon(&self) -> Tick {
        let h = self.hyperperiod().unwrap_or_else(|| self.max_deadline());
        (2 * h + self.max_window()).max(1)
    }
}

/// One problem found by [`validate_task_set`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateName {
        name: String,
    },
    DuplicateImportance {
        first: String,
        second: String,
        importance: Importance,
    },
    ZeroWcet {
        task: String,
    },
    ZeroPeriod {
        task: String,
    },
    WcetExceedsDeadline {
        task: String,
    },
    DeadlineExceedsPeriod {
        task: String,
    },
    ZeroEnvelope {
        task: String,
    },
    LineCollision {
        line: LineId,
        first: String,
        second: String,
    },
    ReservedLine {
        task: String,
    },
    DuplicatePriority {
        first: String,
        second: String,
        priority: Priority,
    },
    ZeroOverrideModulus {
        task: String,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateName { name } => write!(f, "duplicate task id `{name}`"),
            Violation::DuplicateImportance {
                first,
                second,
                importance,
            } => write!(
                f,
                "duplicate importance {importance} on `{first}` and `{second}`"
            ),
            Violation::ZeroWcet { task } => write!(f, "`{task}`: C must be at least 1"),
            Violation::ZeroPeriod { task } => write!(f, "`{task}`: zero period"),
            Violation::WcetExceedsDeadline { task } => write!(f, "`{task}`: C exceeds D"),
            Violation::DeadlineExceedsPeriod { task } => write!(f, "`{task}`: D exceeds T"),
            Violation::ZeroEnvelope { task } => {
                write!(f, "`{task}`: envelope needs n >= 1 and W >= 1")
            }
            Violation::LineCollision {
                line,
                first,
                second,
            } => {
                write!(f, "line {line} used by both `{first}` and `{second}`")
            }
            Violation::ReservedLine { task } => {
                write!(f, "`{task}`: line id is reserved for the timer")
            }
            Violation::DuplicatePriority {
                first,
                second,
                priority,
            } => write!(
                f,
                "duplicate scheduler priority {priority} on `{first}` and `{second}`"
            ),
            Violation::ZeroOverrideModulus { task } => {
                write!(f, "`{task}`: job override needs every >= 1")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

pub fn validate_task_set(ts: &TaskSet) -> ValidationReport {
    let mut violations = Vec::new();
    let mut names: BTreeMap<&str, ()> = BTreeMap::new();
    let mut importances: BTreeMap<Importance, &str> = BTreeMap::new();
    let mut lines: BTreeMap<LineId, &str> = BTreeMap::new();
    let mut priorities: BTreeMap<Priority, &str> = BTreeMap::new();

    for (idx, task) in ts.tasks.iter().enumerate() {
        let name = task.name.as_str();
        if names.insert(name, ()).is_some() {
            violations.push(Violation::DuplicateName { name: name.into() });
        }
        if let Some(first) = importances.insert(task.importance, name) {
            violations.push(Violation::DuplicateImportance {
                first: first.into(),
                second: name.into(),
                importance: task.importance,
            });
        }
        if task.line == LineId::TIMER {
            violations.push(Violation::ReservedLine { task: name.into() });
        } else if let Some(first) = lines.insert(task.line, name) {
            violations.push(Violation::LineCollision {
                line: task.line,
                first: first.into(),
                second: name.into(),
            });
        }
        if task.wcet == 0 {
            violations.push(Violation::ZeroWcet { task: name.into() });
        }
        if task.period == Period::Ticks(0) {
            violations.push(Violation::ZeroPeriod { task: name.into() });
        }
        if task.wcet > task.deadline {
            violations.push(Violation::WcetExceedsDeadline { task: name.into() });
        }
        if let Period::Ticks(t) = task.period {
            if t > 0 && task.deadline > t {
                violations.push(Violation::DeadlineExceedsPeriod { task: name.into() });
            }
        }
        if task.envelope_n == 0 || task.envelope_w == 0 {
            violations.push(Violation::ZeroEnvelope { task: name.into() });
        }
        let prio = ts.priorities.task_priority(TaskId(idx));
        if let Some(first) = priorities.insert(prio, name) {
            violations.push(Violation::DuplicatePriority {
                first: first.into(),
                second: name.into(),
                priority: prio,
            });
        }
        if ts
            .priorities
            .overrides(TaskId(idx))
            .iter()
            .any(|ov| ov.every == 0)
        {
            violations.push(Violation::ZeroOverrideModulus { task: name.into() });
        }
    }
    ValidationReport { violations }
}

/// Sum of C/T over all tasks with a finite period, exactly.
pub fn utilization(ts: &TaskSet) -> Ratio<u64> {
    ts.tasks
        .iter()
        .filter_map(|t| {
            t.period
                .finite()
                .filter(|&p| p > 0)
                .map(|p| Ratio::new(t.wcet, p))
        })
        .fold(Ratio::from_integer(0), |acc, u| acc + u)
}

/// Priorities ordered by importance: the most important task gets the
/// highest priority. Ties (invalid sets) fall back to declaration order.
pub fn assign_importance_monotonic(tasks: &[Task]) -> PriorityMap {
    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.sort_by_key(|&i| (tasks[i].importance, std::cmp::Reverse(i)));
    let mut base = vec![0; tasks.len()];
    for (rank, idx) in order.into_iter().enumerate() {
        base[idx] = rank as Priority + 1;
    }
    PriorityMap::from_base(base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_task() -> TaskSet {
        TaskSet::importance_monotonic(vec![
            Task::periodic("tau_l", 2, 3).importance(1).line(1),
            Task::periodic("tau_h", 2, 6)
                .importance(2)
                .line(2)
                .envelope(2, 6),
        ])
    }

    #[test]
    fn two_task_set_is_valid() {
        let report = validate_task_set(&two_task());
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn duplicate_importance_reported() {
        let ts = TaskSet::new(
            vec![
                Task::periodic("a", 1, 5).importance(5).line(1),
                Task::periodic("b", 1, 5).importance(5).line(2),
            ],
            PriorityMap::from_base(vec![1, 2]),
        );
        let report = validate_task_set(&ts);
        assert!(matches!(
            report.violations.as_slice(),
            [Violation::DuplicateImportance { importance: 5, .. }]
        ));
        assert!(report.to_string().contains("duplicate importance"));
    }

    #[test]
    fn wcet_above_deadline_reported() {
        let ts = TaskSet::importance_monotonic(vec![Task::periodic("a", 4, 5).deadline(3)]);
        let report = validate_task_set(&ts);
        assert_eq!(
            report.violations,
            vec![Violation::WcetExceedsDeadline { task: "a".into() }]
        );
        assert!(report.to_string().contains("C exceeds D"));
    }

    #[test]
    fn zero_period_and_line_collision() {
        let ts = TaskSet::importance_monotonic(vec![
            Task::periodic("a", 1, 0).deadline(1).importance(1).line(3),
            Task::periodic("b", 1, 4).importance(2).line(3),
        ]);
        let report = validate_task_set(&ts);
        assert!(report
            .violations
            .contains(&Violation::ZeroPeriod { task: "a".into() }));
        assert!(report.violations.iter().any(|v| matches!(
            v,
            Violation::LineCollision {
                line: LineId(3),
                ..
            }
        )));
    }

    #[test]
    fn utilization_is_exact() {
        assert_eq!(utilization(&two_task()), Ratio::from_integer(1));
        assert_eq!(
            utilization(&TaskSet::importance_monotonic(vec![])),
            Ratio::from_integer(0)
        );
        let single = TaskSet::importance_monotonic(vec![Task::periodic("a", 1, 4)]);
        assert_eq!(utilization(&single), Ratio::new(1, 4));
    }

    #[test]
    fn exception_only_tasks_add_no_utilization() {
        let ts = TaskSet::importance_monotonic(vec![
            Task::periodic("a", 1, 4).line(1),
            Task::exception_only("alarm", 2, 5).importance(3).line(2),
        ]);
        assert_eq!(utilization(&ts), Ratio::new(1, 4));
        assert_eq!(ts.hyperperiod(), Some(4));
    }

    #[test]
    fn importance_monotonic_orders_by_importance() {
        let ts = two_task();
        let p = ts.priorities();
        assert!(p.task_priority(TaskId(1)) > p.task_priority(TaskId(0)));

        let single = assign_importance_monotonic(&[Task::periodic("a", 1, 4).importance(9)]);
        assert_eq!(single.task_priority(TaskId(0)), 1);

        let tasks = vec![
            Task::periodic("x", 1, 10).importance(7).line(1),
            Task::periodic("y", 1, 10).importance(3).line(2),
            Task::periodic("z", 1, 10).importance(5).line(3),
        ];
        let map = assign_importance_monotonic(&tasks);
        let mut ids: Vec<usize> = (0..3).collect();
        ids.sort_by_key(|&i| std::cmp::Reverse(map.task_priority(TaskId(i))));
        assert_eq!(ids, vec![0, 2, 1]);
    }

    #[test]
    fn job_override_selects_by_sequence() {
        let map = PriorityMap::from_base(vec![1, 2]).with_override(
            TaskId(0),
            JobOverride {
                every: 2,
                index: 0,
                priority: 10,
            },
        );
        assert_eq!(map.job_priority(TaskId(0), 0), 10);
        assert_eq!(map.job_priority(TaskId(0), 1), 1);
        assert_eq!(map.job_priority(TaskId(0), 2), 10);
        assert_eq!(map.job_priority(TaskId(1), 0), 2);
    }

    #[test]
    fn default_horizon_covers_two_hyperperiods_and_window() {
        assert_eq!(two_task().default_horizon(), 18);
    }

    #[test]
    fn infinite_period_violated_by_any_gap() {
        assert!(Period::Infinite.violated_by(1_000_000));
        assert!(Period::Ticks(6).violated_by(3));
        assert!(!Period::Ticks(6).violated_by(6));
    }
}
