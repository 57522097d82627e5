//! Action-proxy compatible service that executes flights.
//!
//! `/init` installs a pack (code plus manifest), `/run` drives one flight
//! member: it forks followers when it leads, runs its list schedule as real
//! processes, and trades results with peers over the peer port.

pub mod executor;
pub mod fork;
pub mod pack;
pub mod peer;
pub mod server;
pub mod stats;

pub use executor::{ExecutorConfig, ExecutorError, Launch, ProcessState, TaskOutcome, TaskProcess};
pub use fork::RunPayload;
pub use pack::{InitError, InitPayload, Pack};
pub use server::{serve, Controller, ProxyConfig, ProxyHandle, ServeError};
pub use stats::StatsSnapshot;
