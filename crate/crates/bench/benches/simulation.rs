use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use envelope_bench::{mixed_load, storm};
use envelope_core::feasibility::{check_ooe_feasible, Bounds};
use envelope_core::model::{Task, TaskSet};
use envelope_core::{run_scenario, Policy};
use std::hint::black_box;

fn engine(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_scenario");
    for horizon in [1_000u64, 10_000] {
        let plain = mixed_load(4, horizon, Policy::default());
        group.bench_with_input(BenchmarkId::new("mixed", horizon), &plain, |b, sc| {
            b.iter(|| run_scenario(black_box(sc)).unwrap())
        });
        let policy = Policy {
            ipl_optimization: true,
            mask_until_bottom_half: true,
            delta_th: 1,
            ..Policy::default()
        };
        let deferred = mixed_load(4, horizon, policy);
        group.bench_with_input(
            BenchmarkId::new("mixed_ipl_bottom_half", horizon),
            &deferred,
            |b, sc| b.iter(|| run_scenario(black_box(sc)).unwrap()),
        );
    }
    let flood = storm(20, 10_000);
    group.bench_function("storm_20_per_tick", |b| {
        b.iter(|| run_scenario(black_box(&flood)).unwrap())
    });
    group.finish();
}

fn feasibility(c: &mut Criterion) {
    let ts = TaskSet::importance_monotonic(vec![
        Task::periodic("low", 2, 6)
            .importance(1)
            .line(1)
            .envelope(2, 6),
        Task::periodic("mid", 1, 4)
            .importance(2)
            .line(2)
            .envelope(2, 4),
        Task::exception_only("alarm", 1, 3)
            .importance(3)
            .line(3)
            .envelope(1, 4),
    ]);
    c.bench_function("check_ooe_feasible_three_tasks", |b| {
        b.iter(|| {
            check_ooe_feasible(
                black_box(&ts),
                Policy::default(),
                Bounds::default(),
                Some(12),
            )
            .unwrap()
        })
    });
}

criterion_group!(benches, engine, feasibility);
criterion_main!(benches);
