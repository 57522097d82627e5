//! Flight mode versus a coordinator function, cold and warm.

use std::time::Duration;

use serde::Serialize;

use super::{run_sim, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Flight,
    Coordinator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinatorRow {
    pub mode: Mode,
    /// Every container cold, including the coordinator's.
    pub cold_latency: Duration,
    pub warm_latency: Duration,
    pub invocations: u32,
}

/// Runs `cfg` in both modes with all members cold and all members warm.
/// `cfg.cold_members`, `cfg.coordinator_mode` and failures are overridden.
pub fn compare_coordinator(cfg: &SimConfig) -> Vec<CoordinatorRow> {
    [Mode::Flight, Mode::Coordinator]
        .into_iter()
        .map(|mode| {
            let base = SimConfig {
                coordinator_mode: mode == Mode::Coordinator,
                failure_prob: 0.0,
                crashes: Vec::new(),
                ..cfg.clone()
            };
            let cold = run_sim(&SimConfig { cold_members: (0..cfg.flight_size).collect(), ..base.clone() });
            let warm = run_sim(&SimConfig { cold_members: Vec::new(), ..base });
            CoordinatorRow {
                mode,
                cold_latency: cold.job_latency,
                warm_latency: warm.job_latency,
                invocations: warm.invocations,
            }
        })
        .collect()
}
