use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use raptor_core::sim::sweep_failure;
use raptor_core::{run_sim, DurationDist, SimConfig, Workload};

fn config(workload: &Workload, flight_size: u32) -> SimConfig {
    SimConfig {
        flight_size,
        net_latency: DurationDist::Uniform { min: Duration::from_millis(1), max: Duration::from_millis(5) },
        failure_prob: 0.2,
        ..SimConfig::new(workload.dag())
    }
}

fn single_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_sim");
    for (name, workload) in [("diamond", Workload::Diamond), ("mapreduce-8x4", Workload::MapReduce { mappers: 8, reducers: 4 })] {
        for n in [1, 4] {
            let cfg = config(&workload, n);
            let id = BenchmarkId::new(name, n);
            group.bench_with_input(id, &cfg, |b, cfg| b.iter(|| run_sim(cfg)));
        }
    }
    group.finish();
}

fn sweeps(c: &mut Criterion) {
    let cfg = config(&Workload::ForkJoin { tasks: 4 }, 2);
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    group.bench_function("failure/5x1000", |b| {
        b.iter(|| sweep_failure(&cfg, &[0.0, 0.2, 0.5, 0.8, 0.95], 1000).unwrap())
    });
    group.finish();
}

criterion_group!(benches, single_runs, sweeps);
criterion_main!(benches);
