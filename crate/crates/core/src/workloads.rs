//! Task graph shapes used by the simulator, benches and examples.

use serde::{Deserialize, Serialize};

use crate::manifest::{ActionManifest, FunctionEntry, TaskDag};

/// A named graph shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Workload {
    /// `t1 -> {t2, t3} -> t4`.
    Diamond,
    /// `tasks` independent tasks.
    ForkJoin { tasks: usize },
    /// download, `width` parallel processing steps, one upload per step.
    Media { width: usize },
    /// partition, `mappers` maps, `reducers` reduces, one aggregate.
    MapReduce { mappers: usize, reducers: usize },
    Chain { tasks: usize },
}

impl Workload {
    pub fn manifest(&self) -> ActionManifest {
        ActionManifest::from_entries(self.entries()).expect("generated workloads are valid")
    }

    pub fn dag(&self) -> TaskDag {
        self.manifest().build_dag()
    }

    fn entries(&self) -> Vec<FunctionEntry> {
        let entry = |name: String, deps: Vec<String>| FunctionEntry {
            location: format!("{name}.sh"),
            name,
            dependencies: deps,
        };
        match *self {
            Workload::Diamond => vec![
                entry("t1".into(), vec![]),
                entry("t2".into(), vec!["t1".into()]),
                entry("t3".into(), vec!["t1".into()]),
                entry("t4".into(), vec!["t2".into(), "t3".into()]),
            ],
            Workload::ForkJoin { tasks } => (1..=tasks).map(|i| entry(format!("t{i}"), vec![])).collect(),
            Workload::Chain { tasks } => (1..=tasks)
                .map(|i| entry(format!("t{i}"), if i == 1 { vec![] } else { vec![format!("t{}", i - 1)] }))
                .collect(),
            Workload::Media { width } => {
                let mut out = vec![entry("download".into(), vec![])];
                out.extend((1..=width).map(|i| entry(format!("process{i}"), vec!["download".into()])));
                out.extend((1..=width).map(|i| entry(format!("upload{i}"), vec![format!("process{i}")])));
                out
            }
            Workload::MapReduce { mappers, reducers } => {
                let maps: Vec<String> = (1..=mappers).map(|i| format!("map{i}")).collect();
                let reds: Vec<String> = (1..=reducers).map(|i| format!("reduce{i}")).collect();
                let mut out = vec![entry("partition".into(), vec![])];
                out.extend(maps.iter().map(|m| entry(m.clone(), vec!["partition".into()])));
                out.extend(reds.iter().map(|r| entry(r.clone(), maps.clone())));
                out.push(entry("aggregate".into(), reds));
                out
            }
        }
    }
}
