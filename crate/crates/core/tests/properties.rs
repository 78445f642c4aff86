mod common;

use envelope_core::feasibility::{check_ooe_feasible, Bounds, OoeVerdict};
use envelope_core::model::{
    assign_importance_monotonic, utilization, LineId, Period, Task, TaskId, TaskSet,
};
use envelope_core::scenario::{random_scenario, RandomLimits};
use envelope_core::vic::Vic;
use envelope_core::{run_scenario, Policy, RecordKind, Scenario, Workload, WorkloadSpec};
use num_rational::Ratio;
use proptest::prelude::*;

use common::*;

fn check_trace_properties(sc: &Scenario) -> Result<(), TestCaseError> {
    let (trace, metrics) = run_scenario(sc).unwrap();
    let ts = &sc.task_set;
    for (name, errors) in [
        ("window", window_violations(ts, &trace)),
        ("conservation", conservation_errors(&trace, &metrics)),
        ("counter", counter_errors(&trace)),
        ("suppression", suppression_errors(ts, &trace)),
        ("mask pairing", mask_pairing_errors(&trace)),
        ("elevation", elevation_errors(ts, &trace, sc.horizon)),
        ("execution", execution_errors(ts, &trace, sc.horizon)),
    ] {
        prop_assert!(errors.is_empty(), "{name}: {errors:?}");
    }
    if sc.policy.delta_th == 0 {
        let idle = idle_errors(&trace, sc.horizon);
        prop_assert!(idle.is_empty(), "idle: {idle:?}");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_scenarios_keep_trace_invariants(seed in any::<u64>()) {
        check_trace_properties(&random_scenario(seed, RandomLimits::default()))?;
    }

    #[test]
    fn runs_are_pure(seed in any::<u64>()) {
        let sc = random_scenario(seed, RandomLimits { max_tasks: 4, max_horizon: 120 });
        let (a, ma) = run_scenario(&sc).unwrap();
        let (b, mb) = run_scenario(&sc).unwrap();
        prop_assert_eq!(a.to_csv_string(), b.to_csv_string());
        prop_assert_eq!(ma, mb);
    }

    #[test]
    fn importance_monotonic_is_a_total_order(
        importances in proptest::sample::subsequence((0u32..40).collect::<Vec<_>>(), 1..8)
            .prop_shuffle()
    ) {
        let tasks: Vec<Task> = importances
            .iter()
            .enumerate()
            .map(|(i, &imp)| Task::periodic(format!("t{i}"), 1, 10).importance(imp).line(i as u32 + 1))
            .collect();
        let map = assign_importance_monotonic(&tasks);
        prop_assert_eq!(&map, &assign_importance_monotonic(&tasks));
        let prios: Vec<i64> = (0..tasks.len()).map(|i| map.task_priority(TaskId(i))).collect();
        for i in 0..tasks.len() {
            for j in 0..tasks.len() {
                if i != j {
                    prop_assert_ne!(prios[i], prios[j]);
                    prop_assert_eq!(prios[i] > prios[j], importances[i] > importances[j]);
                }
            }
        }
    }

    #[test]
    fn utilization_is_additive(
        specs in proptest::collection::vec((1u64..5, 0u64..20, any::<bool>(), any::<bool>()), 1..8)
    ) {
        let tasks: Vec<Task> = specs
            .iter()
            .enumerate()
            .map(|(i, &(c, slack, periodic, _))| {
                let t = if periodic {
                    Task::periodic(format!("t{i}"), c, c + slack)
                } else {
                    Task::exception_only(format!("t{i}"), c, c + slack)
                };
                t.importance(i as u32).line(i as u32 + 1)
            })
            .collect();
        let (left, right): (Vec<_>, Vec<_>) = tasks
            .iter()
            .cloned()
            .zip(specs.iter())
            .partition(|(_, s)| s.3);
        let u = |v: Vec<Task>| utilization(&TaskSet::importance_monotonic(v));
        let whole = u(tasks.clone());
        let parts = u(left.into_iter().map(|p| p.0).collect()) + u(right.into_iter().map(|p| p.0).collect());
        prop_assert_eq!(whole, parts);
        let direct = specs
            .iter()
            .filter(|s| s.2)
            .fold(Ratio::from_integer(0), |acc, s| acc + Ratio::new(s.0, s.0 + s.1));
        prop_assert_eq!(whole, direct);
    }

    #[test]
    fn timer_is_always_delivered(
        masks in proptest::collection::vec(any::<bool>(), 3),
        ipl in -5i64..10,
        pending in proptest::collection::vec(any::<bool>(), 3)
    ) {
        let mut vic = Vic::with_lines((1..=3).map(|i| (LineId(i), i64::from(i))));
        for i in 0..3 {
            vic.set_line_mask(LineId(i as u32 + 1), masks[i]).unwrap();
            if pending[i] {
                vic.raise_event(LineId(i as u32 + 1), 0).unwrap();
            }
        }
        vic.set_ipl(ipl);
        vic.raise_event(LineId::TIMER, 0).unwrap();
        prop_assert_eq!(vic.poll_deliverable(), Some(LineId::TIMER));
    }

    #[test]
    fn in_envelope_raises_are_internalized_immediately(seed in any::<u64>()) {
        let base = random_scenario(seed, RandomLimits::default());
        let tasks: Vec<Task> = base
            .task_set
            .tasks()
            .iter()
            .map(|t| {
                let period = t.period.finite().unwrap_or(t.deadline.max(1));
                Task { period: Period::Ticks(period), envelope_w: period, ..t.clone() }
            })
            .collect();
        let workload = tasks
            .iter()
            .map(|t| Workload {
                line: t.line,
                spec: WorkloadSpec::Periodic { offset: seed % 3, period: t.period.finite().unwrap() },
            })
            .collect();
        let policy = Policy { ipl_optimization: false, mask_until_bottom_half: false, ..base.policy };
        let sc = Scenario::new(TaskSet::new(tasks, base.task_set.priorities().clone()), policy, workload)
            .with_horizon(base.horizon);
        let (trace, _) = run_scenario(&sc).unwrap();
        let key = |r: &envelope_core::Record| (r.time, r.line);
        let raises: Vec<_> = trace.of_kind(RecordKind::Raise).map(key).collect();
        let direct: Vec<_> = trace
            .of_kind(RecordKind::Internalize)
            .filter(|r| !r.has_flag("deferred"))
            .map(key)
            .collect();
        prop_assert_eq!(raises, direct);
        prop_assert_eq!(trace.count(RecordKind::Suppress), 0);
    }
}

fn small_task_set(spec: &[(u64, u64, u32)], n_bump: u32) -> TaskSet {
    let tasks = spec
        .iter()
        .enumerate()
        .map(|(i, &(c, t, n))| {
            let n = if i == 0 { n + n_bump } else { n };
            Task::periodic(format!("t{i}"), c, t)
                .importance(i as u32 + 1)
                .line(i as u32 + 1)
                .envelope(n, t)
        })
        .collect();
    TaskSet::importance_monotonic(tasks)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn larger_envelope_never_gains_feasibility(
        spec in proptest::collection::vec((1u64..3, 2u64..7, 1u32..3), 1..3)
    ) {
        let spec: Vec<_> = spec.into_iter().map(|(c, t, n)| (c, t.max(c), n)).collect();
        let bounds = Bounds { max_patterns: 20_000, ..Bounds::default() };
        let verdict = |bump| {
            check_ooe_feasible(&small_task_set(&spec, bump), Policy::default(), bounds, Some(12))
        };
        if let (Ok(small), Ok(large)) = (verdict(0), verdict(1)) {
            let feasible = |v: &OoeVerdict| matches!(v, OoeVerdict::Feasible { .. });
            prop_assert!(!feasible(&large) || feasible(&small));
        }
    }
}
