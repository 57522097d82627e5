//! Parameter sweeps over many seeded runs.
//!
//! Runs are spread over a rayon pool, but every run's seed depends only on
//! the base seed and the run index, and results are folded in run order, so
//! the output does not depend on the thread count. The same run index gets
//! the same seed at every sweep point, which couples the points and keeps
//! trends visible at modest run counts.

use std::io::Write;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use super::{run_sim, SimConfig, SimConfigError};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub flight_size: u32,
    pub p: f64,
    pub runs: usize,
    pub mean_latency_ms: f64,
    pub max_latency_ms: f64,
    pub failure_rate: f64,
    /// Standard error of `failure_rate`.
    pub failure_stderr: f64,
    pub mean_executions: f64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn run_seed(base: u64, run: usize) -> u64 {
    splitmix(base ^ splitmix(run as u64))
}

fn point(cfg: &SimConfig, runs: usize) -> SweepRow {
    let outcomes: Vec<(Duration, bool, u32)> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let r = run_sim(&SimConfig { seed: run_seed(cfg.seed, run), ..cfg.clone() });
            (r.job_latency, r.job_failed, r.total_executions())
        })
        .collect();

    let n = runs as f64;
    let ms = |d: Duration| d.as_secs_f64() * 1e3;
    let mean_latency_ms = outcomes.iter().map(|o| ms(o.0)).sum::<f64>() / n;
    let max_latency_ms = outcomes.iter().map(|o| ms(o.0)).fold(0.0, f64::max);
    let failure_rate = outcomes.iter().filter(|o| o.1).count() as f64 / n;
    let mean_executions = outcomes.iter().map(|o| f64::from(o.2)).sum::<f64>() / n;
    SweepRow {
        flight_size: cfg.flight_size,
        p: cfg.failure_prob,
        runs,
        mean_latency_ms,
        max_latency_ms,
        failure_rate,
        failure_stderr: (failure_rate * (1.0 - failure_rate) / n).sqrt(),
        mean_executions,
    }
}

fn check(cfg: &SimConfig, runs: usize) -> Result<(), SimConfigError> {
    if runs == 0 {
        return Err(SimConfigError::NoRuns);
    }
    cfg.validate()
}

/// One row per failure probability.
pub fn sweep_failure(cfg: &SimConfig, p_values: &[f64], runs: usize) -> Result<Vec<SweepRow>, SimConfigError> {
    p_values
        .iter()
        .map(|&p| {
            let at = SimConfig { failure_prob: p, ..cfg.clone() };
            check(&at, runs)?;
            Ok(point(&at, runs))
        })
        .collect()
}

/// One row per flight size.
pub fn sweep_flight_size(cfg: &SimConfig, sizes: &[u32], runs: usize) -> Result<Vec<SweepRow>, SimConfigError> {
    sizes
        .iter()
        .map(|&n| {
            let at = SimConfig { flight_size: n, ..cfg.clone() };
            check(&at, runs)?;
            Ok(point(&at, runs))
        })
        .collect()
}

pub fn write_csv<W: Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
