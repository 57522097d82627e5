//! The TOML config file shared by `simulate`, `sweep` and `serve`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use raptor_core::{ActionManifest, DurationDist, FlightOptions, SimConfig, TaskDag, Workload};
use serde::Deserialize;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub sim: Option<SimSection>,
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub serve: ServeSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ConfigFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        // Manifest paths are relative to the config file.
        if let Some(manifest) = cfg.sim.as_mut().and_then(|s| s.manifest.as_mut()) {
            if manifest.is_relative() {
                *manifest = path.parent().unwrap_or(Path::new(".")).join(&*manifest);
            }
        }
        Ok(cfg)
    }
}

fn one() -> u32 {
    1
}

fn hundred() -> u64 {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    /// A generated graph shape; exclusive with `manifest`.
    pub workload: Option<Workload>,
    /// A manifest file whose DAG is simulated.
    pub manifest: Option<PathBuf>,
    #[serde(default = "one")]
    pub flight_size: u32,
    /// Fixed task duration, or the lower bound when `task_ms_max` is set.
    #[serde(default = "hundred")]
    pub task_ms: u64,
    pub task_ms_max: Option<u64>,
    /// Per-task overrides; every task must be listed when present.
    #[serde(default)]
    pub per_task_ms: BTreeMap<String, u64>,
    #[serde(default)]
    pub net_latency_ms: u64,
    pub net_latency_max_ms: Option<u64>,
    #[serde(default)]
    pub invocation_latency_ms: u64,
    #[serde(default)]
    pub cold_start_ms: u64,
    #[serde(default)]
    pub cold_members: Vec<u32>,
    #[serde(default)]
    pub coordinator_mode: bool,
    #[serde(default)]
    pub failure_prob: f64,
    #[serde(default)]
    pub failure_correlation: f64,
    #[serde(default)]
    pub crashing_tasks: Vec<String>,
    #[serde(default)]
    pub prune_on_remote_error: bool,
}

fn dist(min: u64, max: Option<u64>) -> Result<DurationDist> {
    Ok(match max {
        None => DurationDist::fixed_ms(min),
        Some(max) => {
            ensure!(max >= min, "range maximum {max} ms is below its minimum {min} ms");
            DurationDist::Uniform { min: Duration::from_millis(min), max: Duration::from_millis(max) }
        }
    })
}

impl SimSection {
    pub fn dag(&self) -> Result<TaskDag> {
        Ok(match (&self.workload, &self.manifest) {
            (Some(w), None) => w.dag(),
            (None, Some(path)) => load_manifest(path)?.build_dag(),
            _ => bail!("[sim] needs exactly one of `workload` and `manifest`"),
        })
    }

    pub fn to_sim_config(&self, seed: u64) -> Result<SimConfig> {
        let task_duration = if self.per_task_ms.is_empty() {
            dist(self.task_ms, self.task_ms_max)?
        } else {
            DurationDist::PerTask(self.per_task_ms.iter().map(|(t, ms)| (t.clone(), Duration::from_millis(*ms))).collect())
        };
        let cfg = SimConfig {
            flight_size: self.flight_size,
            task_duration,
            net_latency: dist(self.net_latency_ms, self.net_latency_max_ms)?,
            invocation_latency: Duration::from_millis(self.invocation_latency_ms),
            cold_start_latency: Duration::from_millis(self.cold_start_ms),
            cold_members: self.cold_members.clone(),
            coordinator_mode: self.coordinator_mode,
            failure_prob: self.failure_prob,
            failure_correlation: self.failure_correlation,
            crashing_tasks: self.crashing_tasks.clone(),
            options: FlightOptions { prune_on_remote_error: self.prune_on_remote_error },
            seed,
            ..SimConfig::new(self.dag()?)
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepSection {
    /// Varies the failure probability at the configured flight size.
    Failure { p_values: Vec<f64>, runs_per_point: usize },
    /// Varies the flight size at the configured failure probability.
    FlightSize { flight_sizes: Vec<u32>, runs_per_point: usize },
    /// Flight versus coordinator composition, cold and warm.
    Coordinator,
}

impl SweepSection {
    pub fn validate(&self) -> Result<()> {
        match self {
            SweepSection::Failure { p_values, runs_per_point } => {
                ensure!(*runs_per_point > 0, "runs_per_point must be at least 1");
                ensure!(!p_values.is_empty(), "p_values is empty");
            }
            SweepSection::FlightSize { flight_sizes, runs_per_point } => {
                ensure!(*runs_per_point > 0, "runs_per_point must be at least 1");
                ensure!(!flight_sizes.is_empty(), "flight_sizes is empty");
            }
            SweepSection::Coordinator => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeSection {
    pub listen: Option<String>,
    pub peer_port: Option<u16>,
    pub advertise_host: Option<String>,
    pub controller: Option<String>,
    pub term_kill_delay_ms: Option<u64>,
    pub niceness: Option<i32>,
    pub root: Option<PathBuf>,
    pub allow_reinit: Option<bool>,
    pub activation_timeout_ms: Option<u64>,
    pub peering_timeout_ms: Option<u64>,
}

pub fn load_manifest(path: &Path) -> Result<ActionManifest> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ActionManifest::parse(&raw).with_context(|| format!("invalid manifest {}", path.display()))
}

/// Accepts `host:port`, `:port` (all interfaces) or a bare port.
pub fn parse_listen(s: &str) -> Result<std::net::SocketAddr> {
    let full = if let Some(port) = s.strip_prefix(':') {
        format!("0.0.0.0:{port}")
    } else if s.parse::<u16>().is_ok() {
        format!("0.0.0.0:{s}")
    } else {
        s.to_string()
    };
    match full.parse() {
        Ok(addr) => Ok(addr),
        Err(_) => bail!("invalid listen address `{s}`"),
    }
}
