//! Scenario builders shared by the benchmarks.

use envelope_core::model::{Task, TaskSet, Tick};
use envelope_core::{LineId, Policy, Scenario, Workload, WorkloadSpec};

/// `tasks` periodic tasks with sporadic extra traffic on every line.
pub fn mixed_load(tasks: u32, horizon: Tick, policy: Policy) -> Scenario {
    let set: Vec<Task> = (0..tasks)
        .map(|i| {
            let period = 8 + 4 * Tick::from(i);
            Task::periodic(format!("t{i}"), 1 + Tick::from(i % 2), period)
                .importance(i + 1)
                .line(i + 1)
                .envelope(2, period)
        })
        .collect();
    let workload = set
        .iter()
        .map(|t| Workload {
            line: t.line,
            spec: WorkloadSpec::Sporadic {
                min_sep: 2,
                density: 0.3,
                seed: None,
            },
        })
        .collect();
    Scenario::new(TaskSet::importance_monotonic(set), policy, workload)
        .with_horizon(horizon)
        .with_seed(7)
}

/// One line under a permanent storm of `rate` raises per tick.
pub fn storm(rate: u64, horizon: Tick) -> Scenario {
    let set = vec![Task::periodic("sensor", 1, 10)
        .importance(1)
        .line(1)
        .envelope(4, 10)];
    let workload = vec![Workload {
        line: LineId(1),
        spec: WorkloadSpec::Storm {
            start: 0,
            rate,
            duration: None,
        },
    }];
    let policy = Policy {
        delta_th: 1,
        ..Policy::default()
    };
    Scenario::new(TaskSet::importance_monotonic(set), policy, workload).with_horizon(horizon)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builders_produce_valid_scenarios() {
        mixed_load(4, 100, Policy::default()).validate().unwrap();
        storm(5, 100).validate().unwrap();
    }
}
