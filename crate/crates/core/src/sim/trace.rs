//! Simulation event log and an independent checker for it.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::Duration;

use serde::Serialize;

use super::{SimConfig, SimResult};
use crate::flight::UpdateAction;
use crate::listsched::build_schedule;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub at: Duration,
    pub member: u32,
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceKind {
    /// An invocation request for this member left the controller.
    Invoke,
    /// The member's runtime started.
    Start,
    Crash,
    Send { to: u32, id: u64, kind: String },
    Deliver { from: u32, id: u64 },
    /// The message arrived at a member that is down or not yet started.
    Drop { from: u32, id: u64 },
    /// `null_inputs` names the dependencies whose output was null here.
    TaskStart { task: String, null_inputs: Vec<String> },
    TaskFinish { task: String, failed: bool },
    Applied { task: String, action: UpdateAction },
    /// The task became terminal on this member.
    Terminal { task: String },
    JobComplete,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceViolation {
    #[error("event {0} goes back in time")]
    TimeReversal(usize),
    #[error("message {id} to member {member} was never sent")]
    PhantomMessage { member: u32, id: u64 },
    #[error("member {member} started `{task}` out of its schedule order")]
    OutOfOrder { member: u32, task: String },
    #[error("member {member} started `{task}` twice")]
    StartedTwice { member: u32, task: String },
    #[error("member {member} started `{task}` before dependency `{dependency}` was terminal")]
    DependencyNotTerminal { member: u32, task: String, dependency: String },
    #[error("`{task}` executed {count} times in a flight of {flight_size}")]
    TooManyExecutions { task: String, count: u32, flight_size: u32 },
    #[error("reported execution counts disagree with the trace")]
    CountMismatch,
}

/// Re-checks the flight safety properties on a finished run using only the
/// trace and an independently built schedule per member.
pub fn validate_trace(cfg: &SimConfig, result: &SimResult) -> Result<(), TraceViolation> {
    let dag = &cfg.dag;
    let mut last = Duration::ZERO;
    let mut sent: HashSet<(u32, u64)> = HashSet::new();
    let mut terminal: HashMap<u32, HashSet<&str>> = HashMap::new();
    let mut started: HashMap<u32, Vec<&str>> = HashMap::new();
    let mut counts: BTreeMap<String, u32> = dag.names().iter().map(|n| (n.clone(), 0)).collect();

    for (i, e) in result.trace.iter().enumerate() {
        if e.at < last {
            return Err(TraceViolation::TimeReversal(i));
        }
        last = e.at;
        match &e.kind {
            TraceKind::Send { to, id, .. } => {
                sent.insert((*to, *id));
            }
            TraceKind::Deliver { id, .. } | TraceKind::Drop { id, .. } => {
                if !sent.contains(&(e.member, *id)) {
                    return Err(TraceViolation::PhantomMessage { member: e.member, id: *id });
                }
            }
            TraceKind::Terminal { task } => {
                terminal.entry(e.member).or_default().insert(task.as_str());
            }
            TraceKind::TaskStart { task, .. } => {
                let done = terminal.entry(e.member).or_default();
                let node = dag.index_of(task).expect("trace names a graph task");
                if let Some(&d) = dag.dependencies(node).iter().find(|&&d| !done.contains(dag.name(d))) {
                    return Err(TraceViolation::DependencyNotTerminal {
                        member: e.member,
                        task: task.clone(),
                        dependency: dag.name(d).to_string(),
                    });
                }
                let list = started.entry(e.member).or_default();
                if list.contains(&task.as_str()) {
                    return Err(TraceViolation::StartedTwice { member: e.member, task: task.clone() });
                }
                list.push(task);
                *counts.get_mut(task).expect("known task") += 1;
            }
            _ => {}
        }
    }

    for (&member, realized) in &started {
        let schedule = build_schedule(dag, u64::from(member));
        let mut rest = schedule.order().iter();
        for task in realized {
            if !rest.any(|s| s == task) {
                return Err(TraceViolation::OutOfOrder { member, task: task.to_string() });
            }
        }
    }

    if let Some((task, &count)) = counts.iter().find(|(_, &c)| c > cfg.flight_size) {
        return Err(TraceViolation::TooManyExecutions { task: task.clone(), count, flight_size: cfg.flight_size });
    }
    if counts != result.executions_per_task {
        return Err(TraceViolation::CountMismatch);
    }
    Ok(())
}
