//! Flight scheduling for DAG-structured serverless workflows.
//!
//! A pack of functions ships with a manifest declaring their dependencies.
//! An activation may run as a *flight*: N cooperating schedulers that each
//! walk a differently permuted list schedule of the same task graph and
//! broadcast completions so the others can skip or stop redundant work.
//!
//! This crate holds the pure parts: manifests and graphs, list schedules,
//! execution contexts, the per-member protocol engine and a deterministic
//! simulator that drives that same engine.

pub mod context;
pub mod flight;
pub mod listsched;
pub mod manifest;
pub mod sim;
pub mod workloads;

pub use context::{infer_context, make_follower_contexts, ContextError, ContextMetadata, Endpoint, ExecutionContext};
pub use flight::{
    Envelope, FlightError, FlightOptions, FlightState, MemberInfo, Message, PeerDirectory, PeeringRequest,
    StateUpdate, TaskStatus, UpdateAction,
};
pub use listsched::{build_schedule, hu_priorities, offset_period, schedule_distance, ListSchedule, PriorityTable};
pub use manifest::{ActionManifest, FunctionEntry, FunctionMask, ManifestError, TaskDag};
pub use sim::{run_sim, DurationDist, SimConfig, SimResult};
pub use workloads::Workload;
