//! JSON scenario documents: strict parsing, conversion to [`Scenario`], and
//! a seeded random scenario generator.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Assignment, Policy, Scenario, Workload};
use crate::model::{
    assign_importance_monotonic, validate_task_set, JobOverride, LineId, Period, Priority,
    PriorityMap, ResponseOption, Task, TaskId, TaskSet, Tick,
};
use crate::monitor::FaultPolicy;
use crate::workload::WorkloadSpec;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid scenario:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

/// A task period as written in a document: a tick count or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeriodDoc(pub Period);

impl Serialize for PeriodDoc {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Period::Ticks(t) => s.serialize_u64(t),
            Period::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for PeriodDoc {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Ticks(u64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Ticks(t) => Ok(PeriodDoc(Period::Ticks(t))),
            Raw::Word(w) if w == "inf" => Ok(PeriodDoc(Period::Infinite)),
            Raw::Word(w) => Err(de::Error::custom(format!(
                "expected a tick count or \"inf\", found \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDoc {
    pub id: String,
    #[serde(rename = "C")]
    pub wcet: Tick,
    #[serde(rename = "T")]
    pub period: PeriodDoc,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<Tick>,
    pub importance: u32,
    pub line: u32,
    pub n: u32,
    #[serde(rename = "W")]
    pub window: Tick,
    pub response: ResponseOption,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<Priority>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub job_priority_overrides: Vec<JobOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyDoc {
    pub assignment: Assignment,
    pub fault_policy: FaultPolicy,
    pub ipl_optimization: bool,
    pub mask_until_bottom_half: bool,
    pub delta_th: Tick,
}

/// A workload entry: `line` plus the fields of one [`WorkloadSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "serde_json::Map<String, serde_json::Value>",
    into = "serde_json::Map<String, serde_json::Value>"
)]
pub struct WorkloadDoc {
    pub line: u32,
    pub spec: WorkloadSpec,
}

impl TryFrom<serde_json::Map<String, serde_json::Value>> for WorkloadDoc {
    type Error = String;

    fn try_from(mut map: serde_json::Map<String, serde_json::Value>) -> Result<Self, String> {
        let line = map
            .remove("line")
            .ok_or_else(|| "missing field `line`".to_string())?;
        let line: u32 = serde_json::from_value(line).map_err(|e| format!("line: {e}"))?;
        let spec =
            serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| e.to_string())?;
        Ok(WorkloadDoc { line, spec })
    }
}

impl From<WorkloadDoc> for serde_json::Map<String, serde_json::Value> {
    fn from(doc: WorkloadDoc) -> Self {
        let mut map = serde_json::Map::new();
        map.insert("line".into(), doc.line.into());
        if let Ok(serde_json::Value::Object(spec)) = serde_json::to_value(&doc.spec) {
            map.extend(spec);
        }
        map
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub tasks: Vec<TaskDoc>,
    #[serde(default)]
    pub policy: PolicyDoc,
    #[serde(default)]
    pub workload: Vec<WorkloadDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<Tick>,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioDoc {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let doc: ScenarioDoc = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Parse {
                path,
                line: inner.line(),
                column: inner.column(),
                message: strip_position(&inner.to_string()),
            }
        })?;
        de.end().map_err(|e| ScenarioError::Parse {
            path: ".".into(),
            line: e.line(),
            column: e.column(),
            message: strip_position(&e.to_string()),
        })?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Builds and validates the scenario. Every problem found is reported.
    pub fn into_scenario(self) -> Result<Scenario, ScenarioError> {
        let mut problems = Vec::new();
        let mut tasks = Vec::new();
        for (i, t) in self.tasks.iter().enumerate() {
            let deadline = match (t.deadline, t.period.0) {
                (Some(d), _) => d,
                (None, Period::Ticks(p)) => p,
                (None, Period::Infinite) => {
                    problems.push(format!("tasks[{i}].D: required when T is \"inf\""));
                    t.wcet
                }
            };
            tasks.push(Task {
                name: t.id.clone(),
                wcet: t.wcet,
                period: t.period.0,
                deadline,
                importance: t.importance,
                line: LineId(t.line),
                envelope_n: t.n,
                envelope_w: t.window,
                response: t.response,
            });
        }
        let mut map = match self.policy.assignment {
            Assignment::ImportanceMonotonic => {
                for (i, t) in self.tasks.iter().enumerate() {
                    if t.priority.is_some() {
                        problems.push(format!(
                            "tasks[{i}].priority: only allowed with assignment \"explicit\""
                        ));
                    }
                }
                assign_importance_monotonic(&tasks)
            }
            Assignment::Explicit => {
                let base = self
                    .tasks
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        t.priority.unwrap_or_else(|| {
                            problems.push(format!(
                                "tasks[{i}].priority: required with assignment \"explicit\""
                            ));
                            0
                        })
                    })
                    .collect();
                PriorityMap::from_base(base)
            }
        };
        for (i, t) in self.tasks.iter().enumerate() {
            for ov in &t.job_priority_overrides {
                if ov.every > 0 && ov.index >= ov.every {
                    problems.push(format!(
                        "tasks[{i}].job_priority_overrides: index {} never matches modulus {}",
                        ov.index, ov.every
                    ));
                }
                map = map.with_override(TaskId(i), *ov);
            }
        }
        let task_set = TaskSet::new(tasks, map);
        problems.extend(
            validate_task_set(&task_set)
                .violations
                .iter()
                .map(ToString::to_string),
        );
        if task_set.is_empty() {
            problems.push("tasks: at least one task is required".into());
        }
        for (i, w) in self.workload.iter().enumerate() {
            if task_set.by_line(LineId(w.line)).is_none() {
                problems.push(format!("workload[{i}].line: no task on line {}", w.line));
            }
            if let Err(e) = w.spec.validate() {
                problems.push(format!("workload[{i}]: {e}"));
            }
        }
        if self.horizon == Some(0) {
            problems.push("horizon: must be at least 1".into());
        }
        if !problems.is_empty() {
            return Err(ScenarioError::Invalid(problems));
        }
        let policy = Policy {
            assignment: self.policy.assignment,
            fault_policy: self.policy.fault_policy,
            ipl_optimization: self.policy.ipl_optimization,
            mask_until_bottom_half: self.policy.mask_until_bottom_half,
            delta_th: self.policy.delta_th,
        };
        let workload = self
            .workload
            .into_iter()
            .map(|w| Workload {
                line: LineId(w.line),
                spec: w.spec,
            })
            .collect();
        let mut sc = Scenario::new(task_set, policy, workload).with_seed(self.seed);
        if let Some(h) = self.horizon {
            sc = sc.with_horizon(h);
        }
        Ok(sc)
    }

    /// Document form of `sc`. Explicit priorities are written whenever the
    /// assignment is explicit.
    pub fn from_scenario(sc: &Scenario) -> Self {
        let ts = &sc.task_set;
        let explicit = sc.policy.assignment == Assignment::Explicit;
        let tasks = ts
            .ids()
            .map(|id| {
                let t = ts.task(id);
                TaskDoc {
                    id: t.name.clone(),
                    wcet: t.wcet,
                    period: PeriodDoc(t.period),
                    deadline: Some(t.deadline),
                    importance: t.importance,
                    line: t.line.0,
                    n: t.envelope_n,
                    window: t.envelope_w,
                    response: t.response,
                    priority: explicit.then(|| ts.priorities().task_priority(id)),
                    job_priority_overrides: ts.priorities().overrides(id).to_vec(),
                }
            })
            .collect();
        ScenarioDoc {
            tasks,
            policy: PolicyDoc {
                assignment: sc.policy.assignment,
                fault_policy: sc.policy.fault_policy,
                ipl_optimization: sc.policy.ipl_optimization,
                mask_until_bottom_half: sc.policy.mask_until_bottom_half,
                delta_th: sc.policy.delta_th,
            },
            workload: sc
                .workload
                .iter()
                .map(|w| WorkloadDoc {
                    line: w.line.0,
                    spec: w.spec.clone(),
                })
                .collect(),
            horizon: Some(sc.horizon),
            seed: sc.seed,
        }
    }
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    ScenarioDoc::parse(text)?.into_scenario()
}

/// Size limits for [`random_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomLimits {
    pub max_tasks: usize,
    pub max_horizon: Tick,
}

impl Default for RandomLimits {
    fn default() -> Self {
        RandomLimits {
            max_tasks: 4,
            max_horizon: 200,
        }
    }
}

/// A valid random scenario, fully determined by `seed`.
pub fn random_scenario(seed: u64, limits: RandomLimits) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=limits.max_tasks.max(1));
    let mut importances: Vec<u32> = (0..count as u32 + 2).collect();
    importances.shuffle(&mut rng);
    let mut tasks = Vec::with_capacity(count);
    for (i, &importance) in importances.iter().take(count).enumerate() {
        let wcet = rng.random_range(1..=3);
        let line = i as u32 + 1;
        let task = if rng.random_bool(0.15) {
            Task::exception_only(format!("x{i}"), wcet, wcet + rng.random_range(0..=8))
        } else {
            let period = wcet + rng.random_range(0..=12);
            Task::periodic(format!("t{i}"), wcet, period).deadline(rng.random_range(wcet..=period))
        };
        let w = rng.random_range(1..=12);
        let response = if rng.random_bool(0.25) {
            ResponseOption::NotifyRunning
        } else {
            ResponseOption::ReleaseAll
        };
        tasks.push(
            task.importance(importance)
                .line(line)
                .envelope(rng.random_range(1..=3), w)
                .response(response),
        );
    }
    let assignment = if rng.random_bool(0.5) {
        Assignment::Explicit
    } else {
        Assignment::ImportanceMonotonic
    };
    let mut map = match assignment {
        Assignment::ImportanceMonotonic => assign_importance_monotonic(&tasks),
        Assignment::Explicit => {
            let mut base: Vec<Priority> = (1..=count as Priority).collect();
            base.shuffle(&mut rng);
            PriorityMap::from_base(base)
        }
    };
    for i in 0..count {
        if rng.random_bool(0.2) {
            let every = rng.random_range(1..=3);
            map = map.with_override(
                TaskId(i),
                JobOverride {
                    every,
                    index: rng.random_range(0..every),
                    priority: rng.random_range(-2..=count as Priority + 2),
                },
            );
        }
    }
    let policy = Policy {
        assignment,
        fault_policy: if rng.random_bool(0.5) {
            FaultPolicy::AutoResume
        } else {
            FaultPolicy::Permanent
        },
        ipl_optimization: rng.random_bool(0.5),
        mask_until_bottom_half: rng.random_bool(0.4),
        delta_th: rng.random_range(0..=1),
    };
    let horizon = rng.random_range(20.min(limits.max_horizon)..=limits.max_horizon.max(1));
    let workload = tasks
        .iter()
        .map(|t| Workload {
            line: t.line,
            spec: random_workload(&mut rng, t, horizon),
        })
        .collect();
    Scenario::new(TaskSet::new(tasks, map), policy, workload)
        .with_horizon(horizon)
        .with_seed(rng.random())
}

fn random_workload(rng: &mut ChaCha8Rng, task: &Task, horizon: Tick) -> WorkloadSpec {
    let span = horizon.max(1);
    match rng.random_range(0..5) {
        0 => WorkloadSpec::Periodic {
            offset: rng.random_range(0..span.min(10)),
            period: task.period.finite().unwrap_or(task.deadline).max(1),
        },
        1 => WorkloadSpec::Sporadic {
            min_sep: rng.random_range(1..=8),
            density: rng.random_range(0.05..=0.9),
            seed: None,
        },
        2 => WorkloadSpec::Burst {
            at: rng.random_range(0..span),
            count: rng.random_range(1..=12),
            spacing: rng.random_range(0..=2),
        },
        3 => WorkloadSpec::Storm {
            start: rng.random_range(0..span),
            rate: rng.random_range(1..=4),
            duration: Some(rng.random_range(1..=15)),
        },
        _ => {
            let k = rng.random_range(0..=20);
            let mut times: Vec<Tick> = (0..k).map(|_| rng.random_range(0..span)).collect();
            times.sort_unstable();
            WorkloadSpec::Explicit { times }
        }
    }
}
