//! Benchmarks live under `benches/`. This holds the shared graph shapes.

use raptor_core::Workload;

/// Small, medium and large graphs, labelled for benchmark ids.
pub fn shapes() -> Vec<(&'static str, Workload)> {
    vec![
        ("diamond", Workload::Diamond),
        ("media-8", Workload::Media { width: 8 }),
        ("mapreduce-64x16", Workload::MapReduce { mappers: 64, reducers: 16 }),
        ("fork-join-1000", Workload::ForkJoin { tasks: 1000 }),
        ("chain-1000", Workload::Chain { tasks: 1000 }),
    ]
}
