//! Preemptive fixed-priority scheduling with job-level overrides,
//! top-half accounting and importance bands for out-of-envelope tasks.
//!
//! A task whose line is out of envelope is *elevated*. While an elevated
//! task has a live job, no job of a less important task is dispatched.
//! Everything else is ordered by scheduler priority. A job that reaches its
//! deadline unfinished is *dropped* if a more important elevated task took
//! the CPU while it waited, and *missed* otherwise.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{Priority, ResponseOption, TaskId, TaskSet, Tick};
use crate::monitor::{LineView, SchedView};

pub type JobId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JobState {
    Released,
    Running,
    Preempted,
    Completed,
    Missed,
    Dropped,
}

impl JobState {
    pub fn is_final(self) -> bool {
        matches!(
            self,
            JobState::Completed | JobState::Missed | JobState::Dropped
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Job {
    pub id: JobId,
    pub task: TaskId,
    /// 0-based release count of the task.
    pub seq: u64,
    pub release: Tick,
    pub abs_deadline: Tick,
    pub remaining: Tick,
    pub state: JobState,
    pub notifications: u32,
    /// Kernel ticks spent in top halves while this job held the CPU.
    pub interference: Tick,
    /// Set once a more important elevated task ran while this job waited.
    pub shed: bool,
    pub finished_at: Option<Tick>,
}

impl Job {
    pub fn executed(&self, wcet: Tick) -> Tick {
        wcet - self.remaining
    }

    pub fn response_time(&self) -> Option<Tick> {
        match self.state {
            JobState::Completed => self.finished_at.map(|f| f - self.release),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseEffect {
    Released(JobId),
    Notified(JobId),
}

impl ReleaseEffect {
    pub fn job(self) -> JobId {
        match self {
            ReleaseEffect::Released(j) | ReleaseEffect::Notified(j) => j,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finalization {
    Dropped,
    Missed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DroppedJob {
    pub job: JobId,
    pub kind: Finalization,
    pub time: Tick,
    pub remaining: Tick,
}

/// What happened on the CPU during one tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Idle,
    /// Top-half work; `job` is the dispatched job that was held off.
    Kernel {
        job: Option<JobId>,
    },
    Ran {
        job: JobId,
        completed: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DispatchChange {
    pub preempted: Option<JobId>,
    pub started: Option<JobId>,
}

#[derive(Debug, Clone, Default)]
pub struct Scheduler {
    jobs: Vec<Job>,
    live: Vec<JobId>,
    running: Option<JobId>,
    elevated: BTreeSet<TaskId>,
    next_seq: Vec<u64>,
    kernel_debt: Tick,
    interference: Tick,
}

impl Scheduler {
    pub fn new(ts: &TaskSet) -> Self {
        Scheduler {
            next_seq: vec![0; ts.len()],
            ..Scheduler::default()
        }
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn job(&self, id: JobId) -> &Job {
        &self.jobs[id]
    }

    pub fn live(&self) -> &[JobId] {
        &self.live
    }

    pub fn running(&self) -> Option<JobId> {
        self.running
    }

    pub fn is_elevated(&self, task: TaskId) -> bool {
        self.elevated.contains(&task)
    }

    pub fn elevate(&mut self, task: TaskId) {
        self.elevated.insert(task);
    }

    pub fn de_elevate(&mut self, task: TaskId) {
        self.elevated.remove(&task);
    }

    pub fn next_seq(&self, task: TaskId) -> u64 {
        self.next_seq[task.0]
    }

    /// Total top-half ticks charged so far.
    pub fn interference(&self) -> Tick {
        self.interference
    }

    pub fn kernel_busy(&self) -> bool {
        self.kernel_debt > 0
    }

    pub fn job_priority(&self, ts: &TaskSet, job: JobId) -> Priority {
        let j = &self.jobs[job];
        ts.priorities().job_priority(j.task, j.seq)
    }

    fn release(&mut self, ts: &TaskSet, task: TaskId, t: Tick) -> JobId {
        let spec = ts.task(task);
        let seq = self.next_seq[task.0];
        self.next_seq[task.0] += 1;
        let id = self.jobs.len();
        self.jobs.push(Job {
            id,
            task,
            seq,
            release: t,
            abs_deadline: t + spec.deadline,
            remaining: spec.wcet,
            state: JobState::Released,
            notifications: 0,
            interference: 0,
            shed: false,
            finished_at: None,
        });
        self.live.push(id);
        id
    }

    /// An event of `task` was internalized at `t`. `ooe` puts the task into
    /// its importance band.
    pub fn on_internalize(
        &mut self,
        ts: &TaskSet,
        task: TaskId,
        t: Tick,
        ooe: bool,
    ) -> ReleaseEffect {
        if ooe {
            self.elevate(task);
        }
        if ts.task(task).response == ResponseOption::NotifyRunning {
            let latest = self
                .live
                .iter()
                .rev()
                .copied()
                .find(|&j| self.jobs[j].task == task);
            if let Some(j) = latest {
                self.jobs[j].notifications += 1;
                return ReleaseEffect::Notified(j);
            }
        }
        ReleaseEffect::Released(self.release(ts, task, t))
    }

    /// Highest importance among elevated tasks that still have live jobs.
    fn band_floor(&self, ts: &TaskSet) -> Option<u32> {
        self.live
            .iter()
            .map(|&j| self.jobs[j].task)
            .filter(|task| self.elevated.contains(task))
            .map(|task| ts.task(task).importance)
            .max()
    }

    /// Job that should hold the CPU at `t`.
    pub fn pick_next(&self, ts: &TaskSet, _t: Tick) -> Option<JobId> {
        let floor = self.band_floor(ts);
        self.live
            .iter()
            .copied()
            .filter(|&j| floor.is_none_or(|f| ts.task(self.jobs[j].task).importance >= f))
            .max_by_key(|&j| {
                let job = &self.jobs[j];
                (
                    self.job_priority(ts, j),
                    std::cmp::Reverse(job.task),
                    std::cmp::Reverse(job.seq),
                )
            })
    }

    pub fn dispatch(&mut self, job: Option<JobId>) -> DispatchChange {
        if job == self.running {
            return DispatchChange::default();
        }
        let mut change = DispatchChange::default();
        if let Some(prev) = self.running.take() {
            if !self.jobs[prev].state.is_final() {
                self.jobs[prev].state = JobState::Preempted;
                change.preempted = Some(prev);
            }
        }
        if let Some(next) = job {
            self.jobs[next].state = JobState::Running;
            change.started = Some(next);
        }
        self.running = job;
        change
    }

    /// Finalizes every live job whose deadline has passed unfinished.
    pub fn shed_check(&mut self, t: Tick) -> Vec<DroppedJob> {
        let mut out = Vec::new();
        let jobs = &mut self.jobs;
        self.live.retain(|&j| {
            let job = &mut jobs[j];
            if job.abs_deadline > t || job.remaining == 0 {
                return true;
            }
            let kind = if job.shed {
                job.state = JobState::Dropped;
                Finalization::Dropped
            } else {
                job.state = JobState::Missed;
                Finalization::Missed
            };
            job.finished_at = Some(t);
            out.push(DroppedJob {
                job: j,
                kind,
                time: t,
                remaining: job.remaining,
            });
            false
        });
        if self.running.is_some_and(|r| self.jobs[r].state.is_final()) {
            self.running = None;
        }
        out
    }

    /// An interrupt was delivered: the CPU owes `delta_th` ticks of kernel
    /// time before the dispatched job continues.
    pub fn account_top_half(&mut self, delta_th: Tick) {
        self.kernel_debt += delta_th;
    }

    /// Executes the tick `[t, t + 1)`.
    pub fn step(&mut self, ts: &TaskSet, t: Tick) -> StepOutcome {
        if self.kernel_debt > 0 {
            self.kernel_debt -= 1;
            self.interference += 1;
            if let Some(j) = self.running {
                self.jobs[j].interference += 1;
            }
            return StepOutcome::Kernel { job: self.running };
        }
        let Some(j) = self.running else {
            return StepOutcome::Idle;
        };
        let task = self.jobs[j].task;
        if self.elevated.contains(&task) {
            let importance = ts.task(task).importance;
            for &w in &self.live {
                if w != j && ts.task(self.jobs[w].task).importance < importance {
                    self.jobs[w].shed = true;
                }
            }
        }
        let job = &mut self.jobs[j];
        job.remaining -= 1;
        if job.remaining > 0 {
            return StepOutcome::Ran {
                job: j,
                completed: false,
            };
        }
        job.state = JobState::Completed;
        job.finished_at = Some(t + 1);
        self.live.retain(|&x| x != j);
        self.running = None;
        StepOutcome::Ran {
            job: j,
            completed: true,
        }
    }

    /// Snapshot for [`crate::monitor::compute_ipl`], one entry per task in
    /// task-set order.
    pub fn sched_view(&self, ts: &TaskSet) -> SchedView {
        SchedView {
            running: self.running.map(|j| self.job_priority(ts, j)),
            lines: ts
                .ids()
                .map(|task| LineView {
                    importance: ts.task(task).importance,
                    next_priority: ts.priorities().job_priority(task, self.next_seq[task.0]),
                })
                .collect(),
        }
    }
}
