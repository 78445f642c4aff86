//! Out-of-envelope interrupt defense and importance-aware scheduling.
//!
//! A discrete-time simulator of an interrupt controller, a per-line window
//! monitor and a fixed-priority job scheduler, plus bounded feasibility
//! checks over the arrival patterns a task set admits.

pub mod engine;
pub mod feasibility;
pub mod model;
pub mod monitor;
pub mod scenario;
pub mod scheduler;
pub mod trace;
pub mod vic;
pub mod workload;

pub use engine::{run_scenario, Assignment, EngineError, Policy, Scenario, Workload};
pub use model::{
    validate_task_set, JobOverride, LineId, Period, Priority, PriorityMap, ResponseOption, Task,
    TaskId, TaskSet, Tick,
};
pub use monitor::{AlarmKind, FaultPolicy, LineClass};
pub use trace::{Metrics, Record, RecordKind, Trace};
pub use workload::WorkloadSpec;
