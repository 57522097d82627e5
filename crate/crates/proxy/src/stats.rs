//! Process-wide counters, served at `GET /stats`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Default)]
pub struct Stats {
    pub activations: AtomicU64,
    pub processes_spawned: AtomicU64,
    pub processes_live: AtomicU64,
    pub forks_issued: AtomicU64,
    pub peer_messages_sent: AtomicU64,
    pub peer_messages_received: AtomicU64,
    pub task_executions: Mutex<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub activations: u64,
    pub processes_spawned: u64,
    pub processes_live: u64,
    pub forks_issued: u64,
    pub peer_messages_sent: u64,
    pub peer_messages_received: u64,
    pub task_executions: BTreeMap<String, u64>,
}

impl Stats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let load = |c: &AtomicU64| c.load(Ordering::Relaxed);
        StatsSnapshot {
            activations: load(&self.activations),
            processes_spawned: load(&self.processes_spawned),
            processes_live: load(&self.processes_live),
            forks_issued: load(&self.forks_issued),
            peer_messages_sent: load(&self.peer_messages_sent),
            peer_messages_received: load(&self.peer_messages_received),
            task_executions: self.task_executions.lock().expect("stats lock").clone(),
        }
    }

    pub(crate) fn record_spawn(&self, task: &str) {
        self.processes_spawned.fetch_add(1, Ordering::Relaxed);
        self.processes_live.fetch_add(1, Ordering::Relaxed);
        *self.task_executions.lock().expect("stats lock").entry(task.to_string()).or_default() += 1;
    }

    pub(crate) fn record_exit(&self) {
        self.processes_live.fetch_sub(1, Ordering::Relaxed);
    }
}
