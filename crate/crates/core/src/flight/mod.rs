//! The per-activation flight protocol engine.
//!
//! A [`FlightState`] is one member's view of a flight: its static list
//! schedule, the status and recorded output of every task, and the peers it
//! knows about. It performs no I/O. Every operation returns the messages it
//! wants sent as [`Envelope`]s; the caller hands them to a [`Port`] (real
//! sockets in the proxy, an event queue in the simulator).
//!
//! Broadcast is best effort. A lost update costs redundant work, never a
//! wrong answer: every member still runs its whole schedule.

pub mod wire;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::context::{Endpoint, ExecutionContext};
use crate::listsched::{build_schedule, ListSchedule};
use crate::manifest::TaskDag;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FlightError {
    #[error("message for activation `{got}` delivered to `{expected}`")]
    WrongActivation { expected: String, got: String },
    #[error("only the flight leader services peering requests")]
    NotLeader,
    #[error("peer offset {0} is not a follower slot of this flight")]
    InvalidPeer(u32),
    #[error("task `{0}` is not part of this schedule")]
    UnknownTask(String),
    #[error("task `{0}` is not running")]
    NotRunning(String),
    #[error("task `{0}` is not runnable")]
    NotRunnable(String),
    #[error("task `{0}` is already running on this member")]
    Busy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Running,
    DoneLocal,
    Preempted,
    PrunedNull,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::DoneLocal | TaskStatus::Preempted | TaskStatus::PrunedNull)
    }
}

/// Broadcast record of one task completion. `is_error` implies a null output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub activation_id: String,
    pub task: String,
    pub output: Value,
    pub is_error: bool,
    pub origin_offset: u32,
    pub sequence: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeeringRequest {
    pub activation_id: String,
    pub sender_offset: u32,
    pub sender_address: Endpoint,
}

/// Offset to endpoint map of known flight members, self included.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PeerDirectory {
    members: BTreeMap<u32, Endpoint>,
}

impl PeerDirectory {
    pub fn contains(&self, offset: u32) -> bool {
        self.members.contains_key(&offset)
    }

    pub fn get(&self, offset: u32) -> Option<&Endpoint> {
        self.members.get(&offset)
    }

    /// Returns true if `offset` was not yet known.
    pub fn insert(&mut self, offset: u32, endpoint: Endpoint) -> bool {
        self.members.insert(offset, endpoint).is_none()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &Endpoint)> {
        self.members.iter().map(|(&o, e)| (o, e))
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl FromIterator<(u32, Endpoint)> for PeerDirectory {
    fn from_iter<I: IntoIterator<Item = (u32, Endpoint)>>(iter: I) -> Self {
        Self { members: iter.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    PeeringRequest(PeeringRequest),
    Membership { activation_id: String, members: PeerDirectory },
    StateUpdate(StateUpdate),
}

impl Message {
    pub fn activation_id(&self) -> &str {
        match self {
            Message::PeeringRequest(r) => &r.activation_id,
            Message::Membership { activation_id, .. } => activation_id,
            Message::StateUpdate(u) => &u.activation_id,
        }
    }
}

/// A message addressed to one member.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub to_offset: u32,
    pub to: Endpoint,
    pub message: Message,
}

/// Outbound side of a transport.
pub trait Port {
    fn send(&mut self, envelope: Envelope);

    fn send_all(&mut self, envelopes: impl IntoIterator<Item = Envelope>)
    where
        Self: Sized,
    {
        for e in envelopes {
            self.send(e);
        }
    }
}

impl Port for Vec<Envelope> {
    fn send(&mut self, envelope: Envelope) {
        self.push(envelope);
    }
}

/// What the caller must do after a state update was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateAction {
    /// The task had not started; it will never start here.
    RemoveFromList,
    /// The task is running here; stop its process group.
    TerminateRunning,
    /// Nothing changed.
    Discard,
    /// A null output was recorded for the task.
    RecordNull,
    /// A local error output was replaced by the peer's result.
    Adopt,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlightOptions {
    /// When set, a peer's error report removes a not-yet-started task from the
    /// local list (it becomes `PrunedNull`). By default the local replica
    /// still runs, which is what gives flights their fault tolerance.
    pub prune_on_remote_error: bool,
}

/// Identity of one member within a flight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberInfo {
    pub flight_id: String,
    pub offset: u32,
    pub flight_size: u32,
    pub address: Endpoint,
    pub leader_address: Endpoint,
}

impl MemberInfo {
    pub fn from_context(ctx: &ExecutionContext, address: Endpoint) -> Self {
        Self {
            flight_id: ctx.flight_id().to_string(),
            offset: ctx.offset(),
            flight_size: ctx.flight_size(),
            leader_address: if ctx.is_leader() { address.clone() } else { ctx.leader_address().clone() },
            address,
        }
    }

    pub fn is_leader(&self) -> bool {
        self.offset == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Record {
    output: Value,
    is_error: bool,
    // The update that produced a non-error record, forwarded to late joiners.
    source: Option<StateUpdate>,
}

/// Result of a local completion: the update and its broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub update: StateUpdate,
    pub envelopes: Vec<Envelope>,
}

/// Result of feeding an inbound message to the engine.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Handled {
    pub envelopes: Vec<Envelope>,
    pub update: Option<(String, UpdateAction)>,
}

#[derive(Debug, Clone)]
pub struct FlightState {
    info: MemberInfo,
    options: FlightOptions,
    dag: TaskDag,
    schedule: ListSchedule,
    schedule_nodes: Vec<usize>,
    status: Vec<TaskStatus>,
    records: Vec<Option<Record>>,
    peers: PeerDirectory,
    serviced: BTreeMap<u32, Endpoint>,
    seen: HashSet<(u32, u64)>,
    sequence: u64,
    running: Option<usize>,
    realized: Vec<usize>,
}

impl FlightState {
    /// `dag` is the already masked task graph.
    pub fn new(info: MemberInfo, dag: TaskDag, options: FlightOptions) -> Self {
        let schedule = build_schedule(&dag, u64::from(info.offset));
        let schedule_nodes = schedule
            .order()
            .iter()
            .map(|n| dag.index_of(n).expect("schedule covers the graph"))
            .collect();
        let mut peers = PeerDirectory::default();
        peers.insert(info.offset, info.address.clone());
        let n = dag.len();
        Self {
            info,
            options,
            dag,
            schedule,
            schedule_nodes,
            status: vec![TaskStatus::Pending; n],
            records: vec![None; n],
            peers,
            serviced: BTreeMap::new(),
            seen: HashSet::new(),
            sequence: 0,
            running: None,
            realized: Vec::new(),
        }
    }

    pub fn info(&self) -> &MemberInfo {
        &self.info
    }

    pub fn dag(&self) -> &TaskDag {
        &self.dag
    }

    pub fn schedule(&self) -> &ListSchedule {
        &self.schedule
    }

    pub fn peers(&self) -> &PeerDirectory {
        &self.peers
    }

    pub fn status(&self, task: &str) -> Option<TaskStatus> {
        self.dag.index_of(task).map(|i| self.status[i])
    }

    /// Recorded output, `Some(Value::Null)` for a recorded null.
    pub fn output(&self, task: &str) -> Option<&Value> {
        self.dag.index_of(task).and_then(|i| self.records[i].as_ref()).map(|r| &r.output)
    }

    pub fn is_error(&self, task: &str) -> Option<bool> {
        self.dag.index_of(task).and_then(|i| self.records[i].as_ref()).map(|r| r.is_error)
    }

    pub fn running(&self) -> Option<&str> {
        self.running.map(|i| self.dag.name(i))
    }

    /// Tasks started on this member, in start order.
    pub fn realized_order(&self) -> Vec<&str> {
        self.realized.iter().map(|&i| self.dag.name(i)).collect()
    }

    pub fn serviced_peering_requests(&self) -> usize {
        self.serviced.len()
    }

    /// Offsets whose peering requests this leader has serviced.
    pub fn serviced_offsets(&self) -> impl Iterator<Item = u32> + '_ {
        self.serviced.keys().copied()
    }

    /// One plus the serviced peering requests minus the failed members.
    pub fn realized_flight_size(&self, failed_members: usize) -> usize {
        (1 + self.serviced.len()).saturating_sub(failed_members)
    }

    fn check_activation(&self, got: &str) -> Result<(), FlightError> {
        if got == self.info.flight_id {
            Ok(())
        } else {
            Err(FlightError::WrongActivation { expected: self.info.flight_id.clone(), got: got.to_string() })
        }
    }

    fn node(&self, task: &str) -> Result<usize, FlightError> {
        self.dag.index_of(task).ok_or_else(|| FlightError::UnknownTask(task.to_string()))
    }

    /// The request a follower sends to its leader; `None` on the leader.
    pub fn peering_request(&self) -> Option<Envelope> {
        if self.info.is_leader() {
            return None;
        }
        Some(Envelope {
            to_offset: 0,
            to: self.info.leader_address.clone(),
            message: Message::PeeringRequest(PeeringRequest {
                activation_id: self.info.flight_id.clone(),
                sender_offset: self.info.offset,
                sender_address: self.info.address.clone(),
            }),
        })
    }

    fn membership_message(&self) -> Message {
        Message::Membership { activation_id: self.info.flight_id.clone(), members: self.peers.clone() }
    }

    fn to_peers(&self, message: &Message) -> Vec<Envelope> {
        self.peers
            .iter()
            .filter(|&(o, _)| o != self.info.offset)
            .map(|(o, e)| Envelope { to_offset: o, to: e.clone(), message: message.clone() })
            .collect()
    }

    // Every non-error output known here, for a member that just joined.
    fn sync_to(&self, offset: u32, endpoint: &Endpoint) -> impl Iterator<Item = Envelope> + '_ {
        let endpoint = endpoint.clone();
        self.records.iter().flatten().filter_map(move |r| {
            r.source.as_ref().filter(|u| u.origin_offset != offset).map(|u| Envelope {
                to_offset: offset,
                to: endpoint.clone(),
                message: Message::StateUpdate(u.clone()),
            })
        })
    }

    /// Leader side of peer discovery. A repeated request is re-acknowledged
    /// without counting twice.
    pub fn leader_serve_peering(&mut self, req: &PeeringRequest) -> Result<Vec<Envelope>, FlightError> {
        if !self.info.is_leader() {
            return Err(FlightError::NotLeader);
        }
        self.check_activation(&req.activation_id)?;
        if req.sender_offset == 0 || req.sender_offset >= self.info.flight_size {
            return Err(FlightError::InvalidPeer(req.sender_offset));
        }

        let mut out = Vec::new();
        if self.serviced.contains_key(&req.sender_offset) {
            tracing::debug!(offset = req.sender_offset, "duplicate peering request, re-acknowledging");
            out.push(Envelope {
                to_offset: req.sender_offset,
                to: req.sender_address.clone(),
                message: self.membership_message(),
            });
        } else {
            self.serviced.insert(req.sender_offset, req.sender_address.clone());
            self.peers.insert(req.sender_offset, req.sender_address.clone());
            out.extend(self.to_peers(&self.membership_message()));
        }
        out.extend(self.sync_to(req.sender_offset, &req.sender_address));
        Ok(out)
    }

    /// Merges a membership snapshot. Snapshots only ever add members, so
    /// reordered or repeated snapshots converge to the same directory.
    pub fn apply_membership(
        &mut self,
        activation_id: &str,
        members: &PeerDirectory,
    ) -> Result<Vec<Envelope>, FlightError> {
        self.check_activation(activation_id)?;
        let mut joined = Vec::new();
        for (offset, endpoint) in members.iter() {
            if offset < self.info.flight_size && self.peers.insert(offset, endpoint.clone()) {
                joined.push((offset, endpoint.clone()));
            }
        }
        Ok(joined.iter().flat_map(|(o, e)| self.sync_to(*o, e).collect::<Vec<_>>()).collect())
    }

    /// Dispatches any inbound message.
    pub fn handle(&mut self, message: &Message) -> Result<Handled, FlightError> {
        match message {
            Message::PeeringRequest(req) => {
                Ok(Handled { envelopes: self.leader_serve_peering(req)?, update: None })
            }
            Message::Membership { activation_id, members } => {
                Ok(Handled { envelopes: self.apply_membership(activation_id, members)?, update: None })
            }
            Message::StateUpdate(u) => {
                self.check_activation(&u.activation_id)?;
                let action = self.apply_state_update(u);
                Ok(Handled { envelopes: Vec::new(), update: Some((u.task.clone(), action)) })
            }
        }
    }

    fn dependencies_terminal(&self, node: usize) -> bool {
        self.dag.dependencies(node).iter().all(|&d| self.status[d].is_terminal())
    }

    /// Earliest pending task in schedule order whose dependencies are all
    /// terminal here.
    pub fn next_runnable(&self) -> Option<&str> {
        self.schedule_nodes
            .iter()
            .copied()
            .find(|&n| self.status[n] == TaskStatus::Pending && self.dependencies_terminal(n))
            .map(|n| self.dag.name(n))
    }

    pub fn start_task(&mut self, task: &str) -> Result<(), FlightError> {
        let node = self.node(task)?;
        if let Some(r) = self.running {
            return Err(FlightError::Busy(self.dag.name(r).to_string()));
        }
        if self.status[node] != TaskStatus::Pending || !self.dependencies_terminal(node) {
            return Err(FlightError::NotRunnable(task.to_string()));
        }
        self.status[node] = TaskStatus::Running;
        self.running = Some(node);
        self.realized.push(node);
        Ok(())
    }

    /// Outputs of the task's direct dependencies, null where pruned.
    pub fn task_inputs(&self, task: &str) -> Result<BTreeMap<String, Value>, FlightError> {
        let node = self.node(task)?;
        Ok(self
            .dag
            .dependencies(node)
            .iter()
            .map(|&d| {
                let value = self.records[d].as_ref().map(|r| r.output.clone()).unwrap_or(Value::Null);
                (self.dag.name(d).to_string(), value)
            })
            .collect())
    }

    pub fn apply_state_update(&mut self, u: &StateUpdate) -> UpdateAction {
        if u.activation_id != self.info.flight_id {
            tracing::warn!(got = %u.activation_id, expected = %self.info.flight_id, "discarding update for another activation");
            return UpdateAction::Discard;
        }
        if u.origin_offset == self.info.offset || !self.seen.insert((u.origin_offset, u.sequence)) {
            return UpdateAction::Discard;
        }
        let Some(node) = self.dag.index_of(&u.task) else {
            tracing::debug!(task = %u.task, "discarding update for a task outside the schedule");
            return UpdateAction::Discard;
        };

        let status = self.status[node];
        let holds_result = self.records[node].as_ref().is_some_and(|r| !r.is_error);

        if u.is_error {
            let null = Record { output: Value::Null, is_error: true, source: None };
            return match status {
                TaskStatus::Pending if self.options.prune_on_remote_error => {
                    self.status[node] = TaskStatus::PrunedNull;
                    self.records[node] = Some(null);
                    UpdateAction::RecordNull
                }
                TaskStatus::Pending | TaskStatus::Running if self.records[node].is_none() => {
                    self.records[node] = Some(null);
                    UpdateAction::RecordNull
                }
                _ => UpdateAction::Discard,
            };
        }

        let record = Record { output: u.output.clone(), is_error: false, source: Some(u.clone()) };
        match status {
            TaskStatus::Pending => {
                self.status[node] = TaskStatus::Preempted;
                self.records[node] = Some(record);
                UpdateAction::RemoveFromList
            }
            TaskStatus::Running => {
                self.status[node] = TaskStatus::Preempted;
                self.records[node] = Some(record);
                self.running = None;
                UpdateAction::TerminateRunning
            }
            _ if holds_result => UpdateAction::Discard,
            TaskStatus::PrunedNull => {
                self.status[node] = TaskStatus::Preempted;
                self.records[node] = Some(record);
                UpdateAction::Adopt
            }
            _ => {
                self.records[node] = Some(record);
                UpdateAction::Adopt
            }
        }
    }

    /// Records a local completion and broadcasts it. A failed task records a
    /// null output flagged as an error so its dependents still run.
    pub fn complete_local(&mut self, task: &str, output: Value, failed: bool) -> Result<Broadcast, FlightError> {
        let node = self.node(task)?;
        if self.status[node] != TaskStatus::Running {
            return Err(FlightError::NotRunning(task.to_string()));
        }
        self.running = None;
        self.status[node] = TaskStatus::DoneLocal;
        self.sequence += 1;
        let update = StateUpdate {
            activation_id: self.info.flight_id.clone(),
            task: task.to_string(),
            output: if failed { Value::Null } else { output },
            is_error: failed,
            origin_offset: self.info.offset,
            sequence: self.sequence,
        };
        self.seen.insert((update.origin_offset, update.sequence));
        if failed {
            if self.records[node].is_none() {
                self.records[node] = Some(Record { output: Value::Null, is_error: true, source: None });
            }
        } else {
            self.records[node] =
                Some(Record { output: update.output.clone(), is_error: false, source: Some(update.clone()) });
        }
        let envelopes = self.to_peers(&Message::StateUpdate(update.clone()));
        Ok(Broadcast { update, envelopes })
    }

    /// Marks the running task preempted without a peer result, e.g. when the
    /// activation is shutting down.
    pub fn abandon_running(&mut self) -> Option<String> {
        let node = self.running.take()?;
        self.status[node] = TaskStatus::PrunedNull;
        if self.records[node].is_none() {
            self.records[node] = Some(Record { output: Value::Null, is_error: true, source: None });
        }
        Some(self.dag.name(node).to_string())
    }

    pub fn is_job_complete(&self) -> bool {
        self.status.iter().all(|s| s.is_terminal())
    }

    /// Outputs of the sink tasks keyed by name, null where none was recorded.
    pub fn job_output(&self) -> BTreeMap<String, Value> {
        self.dag
            .sink_indices()
            .map(|i| {
                let v = self.records[i].as_ref().map(|r| r.output.clone()).unwrap_or(Value::Null);
                (self.dag.name(i).to_string(), v)
            })
            .collect()
    }

    #[cfg(test)]
    pub(crate) fn force_status(&mut self, task: &str, status: TaskStatus) {
        let node = self.node(task).unwrap();
        self.status[node] = status;
        if status.is_terminal() && self.records[node].is_none() {
            self.records[node] = Some(Record { output: Value::Null, is_error: true, source: None });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn diamond() -> TaskDag {
        TaskDag::new([
            ("t1", vec![]),
            ("t2", vec!["t1"]),
            ("t3", vec!["t1"]),
            ("t4", vec!["t2", "t3"]),
        ])
        .unwrap()
    }

    fn member(offset: u32, size: u32) -> FlightState {
        let info = MemberInfo {
            flight_id: "act".into(),
            offset,
            flight_size: size,
            address: format!("10.0.0.{offset}:9000").parse().unwrap(),
            leader_address: "10.0.0.0:9000".parse().unwrap(),
        };
        FlightState::new(info, diamond(), FlightOptions::default())
    }

    fn update(task: &str, output: Value, is_error: bool, origin: u32, seq: u64) -> StateUpdate {
        StateUpdate { activation_id: "act".into(), task: task.into(), output, is_error, origin_offset: origin, sequence: seq }
    }

    fn run(state: &mut FlightState, task: &str, out: Value) -> Broadcast {
        state.start_task(task).unwrap();
        state.complete_local(task, out, false).unwrap()
    }

    #[test]
    fn peering_counts_serviced_requests() {
        let mut leader = member(0, 2);
        let follower = member(1, 2);
        let req = match follower.peering_request().unwrap().message {
            Message::PeeringRequest(r) => r,
            other => panic!("{other:?}"),
        };
        let out = leader.leader_serve_peering(&req).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(leader.realized_flight_size(0), 2);

        // Duplicates are re-acknowledged but not counted.
        let again = leader.leader_serve_peering(&req).unwrap();
        assert_eq!(again.len(), 1);
        assert_eq!(leader.serviced_peering_requests(), 1);

        let wrong = PeeringRequest { activation_id: "other".into(), ..req.clone() };
        assert!(matches!(leader.leader_serve_peering(&wrong), Err(FlightError::WrongActivation { .. })));
        let mut f = member(1, 2);
        assert_eq!(f.leader_serve_peering(&req), Err(FlightError::NotLeader));
        let bad = PeeringRequest { sender_offset: 5, ..req };
        assert_eq!(leader.leader_serve_peering(&bad), Err(FlightError::InvalidPeer(5)));
    }

    #[test]
    fn membership_snapshot_reaches_all_followers() {
        let mut leader = member(0, 3);
        let mut f1 = member(1, 3);
        let mut f2 = member(2, 3);
        let requests: Vec<_> = [&f1, &f2].iter().map(|f| f.peering_request().unwrap().message).collect();
        for request in requests {
            let Message::PeeringRequest(req) = request else { unreachable!() };
            for env in leader.leader_serve_peering(&req).unwrap() {
                let target = if env.to_offset == 1 { &mut f1 } else { &mut f2 };
                target.handle(&env.message).unwrap();
            }
        }
        assert_eq!(f1.peers().len(), 3);
        assert_eq!(f2.peers().len(), 3);
        assert_eq!(leader.realized_flight_size(0), 3);
    }

    #[test]
    fn next_runnable_follows_schedule() {
        let mut leader = member(0, 2);
        assert_eq!(leader.next_runnable(), Some("t1"));
        run(&mut leader, "t1", json!(1));
        assert_eq!(leader.apply_state_update(&update("t3", json!(3), false, 1, 1)), UpdateAction::RemoveFromList);
        assert_eq!(leader.status("t3"), Some(TaskStatus::Preempted));
        assert_eq!(leader.next_runnable(), Some("t2"));
        run(&mut leader, "t2", json!(2));
        run(&mut leader, "t4", json!(4));
        assert_eq!(leader.next_runnable(), None);
        assert!(leader.is_job_complete());
        assert_eq!(leader.job_output(), BTreeMap::from([("t4".to_string(), json!(4))]));
        assert_eq!(leader.realized_order(), ["t1", "t2", "t4"]);
    }

    #[test]
    fn update_on_running_task_terminates_it() {
        let mut s = member(0, 2);
        run(&mut s, "t1", json!(1));
        s.start_task("t3").unwrap();
        assert_eq!(s.apply_state_update(&update("t3", json!(3), false, 1, 1)), UpdateAction::TerminateRunning);
        assert_eq!(s.running(), None);
        assert_eq!(s.output("t3"), Some(&json!(3)));
        assert_eq!(s.complete_local("t3", json!(9), false).unwrap_err(), FlightError::NotRunning("t3".into()));
    }

    #[test]
    fn duplicate_completion_resolution() {
        let mut s = member(0, 2);
        run(&mut s, "t1", json!("local"));
        assert_eq!(s.apply_state_update(&update("t1", json!("remote"), false, 1, 1)), UpdateAction::Discard);
        assert_eq!(s.output("t1"), Some(&json!("local")));

        let mut e = member(0, 2);
        e.start_task("t1").unwrap();
        e.complete_local("t1", json!("ignored"), true).unwrap();
        assert_eq!(e.output("t1"), Some(&Value::Null));
        assert_eq!(e.apply_state_update(&update("t1", json!("remote"), false, 1, 1)), UpdateAction::Adopt);
        assert_eq!(e.output("t1"), Some(&json!("remote")));
        assert_eq!(e.is_error("t1"), Some(false));
        // A later error never overrides a result.
        assert_eq!(e.apply_state_update(&update("t1", Value::Null, true, 1, 2)), UpdateAction::Discard);
        assert_eq!(e.output("t1"), Some(&json!("remote")));
    }

    #[test]
    fn remote_error_records_null_but_keeps_replica() {
        let mut s = member(0, 2);
        assert_eq!(s.apply_state_update(&update("t1", Value::Null, true, 1, 1)), UpdateAction::RecordNull);
        assert_eq!(s.status("t1"), Some(TaskStatus::Pending));
        assert_eq!(s.next_runnable(), Some("t1"));
        run(&mut s, "t1", json!(1));
        assert_eq!(s.output("t1"), Some(&json!(1)));
    }

    #[test]
    fn prune_option_removes_task_on_remote_error() {
        let info = member(0, 2).info().clone();
        let mut s = FlightState::new(info, diamond(), FlightOptions { prune_on_remote_error: true });
        assert_eq!(s.apply_state_update(&update("t1", Value::Null, true, 1, 1)), UpdateAction::RecordNull);
        assert_eq!(s.status("t1"), Some(TaskStatus::PrunedNull));
        assert_eq!(s.next_runnable(), Some("t3"));
        assert_eq!(s.task_inputs("t3").unwrap(), BTreeMap::from([("t1".to_string(), Value::Null)]));
        // A later result still wins over the pruned null.
        assert_eq!(s.apply_state_update(&update("t1", json!(1), false, 1, 2)), UpdateAction::Adopt);
        assert_eq!(s.status("t1"), Some(TaskStatus::Preempted));
    }

    #[test]
    fn failed_task_broadcasts_null_error() {
        let mut s = member(0, 2);
        let mut leader_peer = PeerDirectory::default();
        leader_peer.insert(1, "10.0.0.1:9000".parse().unwrap());
        s.apply_membership("act", &leader_peer).unwrap();
        s.start_task("t1").unwrap();
        let b = s.complete_local("t1", json!({"partial": true}), true).unwrap();
        assert!(b.update.is_error);
        assert_eq!(b.update.output, Value::Null);
        assert_eq!(b.envelopes.len(), 1);
        assert_eq!(s.status("t1"), Some(TaskStatus::DoneLocal));
        // Dependents still run with a null input.
        assert_eq!(s.next_runnable(), Some("t3"));
    }

    #[test]
    fn solo_member_broadcasts_nothing() {
        let mut s = member(0, 1);
        let b = run(&mut s, "t1", json!(1));
        assert!(b.envelopes.is_empty());
    }

    #[test]
    fn terminality() {
        let mut s = member(0, 1);
        assert!(!s.is_job_complete());
        for t in ["t1", "t2", "t3", "t4"] {
            s.force_status(t, TaskStatus::PrunedNull);
        }
        assert!(s.is_job_complete());
        assert_eq!(s.job_output()["t4"], Value::Null);
    }

    #[test]
    fn updates_are_idempotent_and_ignore_strangers() {
        let mut s = member(0, 2);
        let u = update("t3", json!(3), false, 1, 7);
        assert_eq!(s.apply_state_update(&u), UpdateAction::RemoveFromList);
        assert_eq!(s.apply_state_update(&u), UpdateAction::Discard);
        let mut stranger = u.clone();
        stranger.activation_id = "other".into();
        stranger.sequence = 8;
        assert_eq!(s.apply_state_update(&stranger), UpdateAction::Discard);
        let mut unknown = u;
        unknown.task = "zzz".into();
        unknown.sequence = 9;
        assert_eq!(s.apply_state_update(&unknown), UpdateAction::Discard);
    }

    #[test]
    fn late_joiner_receives_known_results() {
        let mut leader = member(0, 2);
        run(&mut leader, "t1", json!(1));
        let follower = member(1, 2);
        let Message::PeeringRequest(req) = follower.peering_request().unwrap().message else { unreachable!() };
        let out = leader.leader_serve_peering(&req).unwrap();
        assert!(out
            .iter()
            .any(|e| matches!(&e.message, Message::StateUpdate(u) if u.task == "t1" && u.output == json!(1))));
    }

    #[test]
    fn start_guards() {
        let mut s = member(0, 1);
        assert_eq!(s.start_task("t2"), Err(FlightError::NotRunnable("t2".into())));
        assert_eq!(s.start_task("nope"), Err(FlightError::UnknownTask("nope".into())));
        s.start_task("t1").unwrap();
        assert_eq!(s.start_task("t1"), Err(FlightError::Busy("t1".into())));
    }
}
