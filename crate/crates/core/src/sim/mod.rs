//! Deterministic discrete-event simulation of flights.
//!
//! Each simulated member drives a real [`FlightState`]; the simulator only
//! supplies a virtual clock, an in-memory transport with sampled latencies,
//! task durations and task failures. Everything random comes from one seeded
//! generator consumed in event order, so a configuration always reproduces
//! the same trace.
//!
//! Within one instant all queued events (finishes, deliveries, starts) are
//! processed before any idle member picks its next task.

mod coordinator;
mod sweep;
mod trace;

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::context::Endpoint;
use crate::flight::{Envelope, FlightOptions, FlightState, MemberInfo, Message, UpdateAction};
use crate::manifest::TaskDag;

pub use coordinator::{compare_coordinator, CoordinatorRow, Mode};
pub use sweep::{sweep_failure, sweep_flight_size, write_csv, SweepRow};
pub use trace::{validate_trace, TraceEvent, TraceKind, TraceViolation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimConfigError {
    #[error("failure probability {0} is outside [0, 1]")]
    FailureProbability(f64),
    #[error("failure correlation {0} is outside [0, 1]")]
    FailureCorrelation(f64),
    #[error("flight size must be at least 1")]
    FlightSize,
    #[error("uniform range has min above max")]
    EmptyRange,
    #[error("no duration given for task `{0}`")]
    MissingTaskDuration(String),
    #[error("crashing task `{0}` is not in the graph")]
    UnknownTask(String),
    #[error("member offset {0} is outside the flight")]
    UnknownMember(u32),
    #[error("runs per point must be at least 1")]
    NoRuns,
}

/// A sampled duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationDist {
    Fixed(Duration),
    Uniform { min: Duration, max: Duration },
    /// Fixed per task name; only meaningful for task durations.
    PerTask(BTreeMap<String, Duration>),
}

impl DurationDist {
    pub fn fixed_ms(ms: u64) -> Self {
        DurationDist::Fixed(Duration::from_millis(ms))
    }

    fn sample(&self, rng: &mut ChaCha8Rng, task: Option<&str>) -> u64 {
        match self {
            DurationDist::Fixed(d) => nanos(*d),
            DurationDist::Uniform { min, max } => rng.random_range(nanos(*min)..=nanos(*max)),
            DurationDist::PerTask(map) => task.and_then(|t| map.get(t)).map(|d| nanos(*d)).unwrap_or(0),
        }
    }

    /// Upper bound of the distribution.
    pub fn max(&self) -> Duration {
        match self {
            DurationDist::Fixed(d) => *d,
            DurationDist::Uniform { max, .. } => *max,
            DurationDist::PerTask(map) => map.values().copied().max().unwrap_or_default(),
        }
    }

    fn validate(&self, dag: Option<&TaskDag>) -> Result<(), SimConfigError> {
        match self {
            DurationDist::Uniform { min, max } if min > max => Err(SimConfigError::EmptyRange),
            DurationDist::PerTask(map) => match dag.and_then(|d| d.names().iter().find(|n| !map.contains_key(*n))) {
                Some(missing) => Err(SimConfigError::MissingTaskDuration(missing.clone())),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// A member that stops at `at` (virtual time since the user request).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crash {
    pub offset: u32,
    pub at: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dag: TaskDag,
    pub flight_size: u32,
    pub task_duration: DurationDist,
    /// Peer message latency.
    pub net_latency: DurationDist,
    /// One invocation hop through the controller.
    pub invocation_latency: Duration,
    /// Each task attempt fails with this probability, decided at attempt start.
    pub failure_prob: f64,
    /// Probability that an attempt reuses the task's shared failure draw
    /// instead of an independent one. 0 gives independent replicas.
    pub failure_correlation: f64,
    /// Tasks whose every attempt crashes, on every member.
    pub crashing_tasks: Vec<String>,
    pub cold_start_latency: Duration,
    /// Offsets whose containers must be cold started.
    pub cold_members: Vec<u32>,
    /// Route the request through a coordinator function that invokes every
    /// member and waits for all of them.
    pub coordinator_mode: bool,
    pub crashes: Vec<Crash>,
    /// Chance that a follower's peering request is sent twice.
    pub peering_duplicate_prob: f64,
    pub options: FlightOptions,
    pub seed: u64,
}

impl SimConfig {
    /// Solo member, 100 ms tasks, zero latencies, no failures.
    pub fn new(dag: TaskDag) -> Self {
        Self {
            dag,
            flight_size: 1,
            task_duration: DurationDist::fixed_ms(100),
            net_latency: DurationDist::fixed_ms(0),
            invocation_latency: Duration::ZERO,
            failure_prob: 0.0,
            failure_correlation: 0.0,
            crashing_tasks: Vec::new(),
            cold_start_latency: Duration::ZERO,
            cold_members: Vec::new(),
            coordinator_mode: false,
            crashes: Vec::new(),
            peering_duplicate_prob: 0.0,
            options: FlightOptions::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SimConfigError> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.failure_prob) {
            return Err(SimConfigError::FailureProbability(self.failure_prob));
        }
        if !unit(self.failure_correlation) {
            return Err(SimConfigError::FailureCorrelation(self.failure_correlation));
        }
        if !unit(self.peering_duplicate_prob) {
            return Err(SimConfigError::FailureProbability(self.peering_duplicate_prob));
        }
        if self.flight_size == 0 {
            return Err(SimConfigError::FlightSize);
        }
        self.task_duration.validate(Some(&self.dag))?;
        self.net_latency.validate(None)?;
        if let Some(t) = self.crashing_tasks.iter().find(|t| !self.dag.contains(t)) {
            return Err(SimConfigError::UnknownTask(t.clone()));
        }
        let offsets = self.cold_members.iter().chain(self.crashes.iter().map(|c| &c.offset));
        if let Some(&bad) = offsets.into_iter().find(|&&o| o >= self.flight_size) {
            return Err(SimConfigError::UnknownMember(bad));
        }
        Ok(())
    }

    fn cold(&self, offset: u32) -> u64 {
        if self.cold_members.contains(&offset) {
            nanos(self.cold_start_latency)
        } else {
            0
        }
    }
}

/// Per-member summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberReport {
    pub offset: u32,
    pub started_at: Option<Duration>,
    pub completed_at: Option<Duration>,
    pub crashed: bool,
    pub schedule: Vec<String>,
    pub realized: Vec<String>,
    /// Offsets in this member's peer directory, self included.
    pub view: Vec<u32>,
    /// Sink outputs at the end of the run; empty if the member never started.
    pub outputs: BTreeMap<String, Value>,
    /// Recorded output of every task that has one.
    pub task_outputs: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    /// Time from the user request until the job's final result is first
    /// held by a member (flight mode), or until the coordinator has heard
    /// from every member (coordinator mode).
    pub job_latency: Duration,
    /// True when any sink output of the final result is null.
    pub job_failed: bool,
    /// Final sink outputs as reported by the leader, or by the lowest live
    /// member if the leader crashed.
    pub outputs: BTreeMap<String, Value>,
    pub executions_per_task: BTreeMap<String, u32>,
    pub messages_sent: u64,
    pub invocations: u32,
    pub serviced_peering_requests: usize,
    /// Crashed members among the leader and the followers it serviced. A
    /// leader that crashed before starting counts too.
    pub failed_members: usize,
    /// Live members that joined the leader's mesh, the live leader included.
    pub realized_flight_size: usize,
    pub members: Vec<MemberReport>,
    pub trace: Vec<TraceEvent>,
}

impl SimResult {
    pub fn total_executions(&self) -> u32 {
        self.executions_per_task.values().sum()
    }
}

pub(crate) fn nanos(d: Duration) -> u64 {
    u64::try_from(d.as_nanos()).unwrap_or(u64::MAX)
}

#[derive(Debug)]
enum Event {
    CoordinatorStart,
    Start(u32),
    Finish { member: u32, attempt: u64 },
    Deliver { to: u32, from: u32, id: u64, message: Message },
    Crash(u32),
}

#[derive(Debug)]
struct Scheduled {
    at: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct Attempt {
    node: usize,
    id: u64,
    fails: bool,
}

struct Member {
    engine: Option<FlightState>,
    alive: bool,
    running: Option<Attempt>,
    attempts: u64,
    started_at: Option<u64>,
    completed_at: Option<u64>,
    // (time, sink outputs) each time a completed member's outputs changed.
    history: Vec<(u64, BTreeMap<String, Value>)>,
}

struct Sim<'a> {
    cfg: &'a SimConfig,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    now: u64,
    members: Vec<Member>,
    shared_failure: Vec<bool>,
    executions: Vec<u32>,
    messages_sent: u64,
    next_message: u64,
    invocations: u32,
    trace: Vec<TraceEvent>,
}

fn member_address(offset: u32) -> Endpoint {
    format!("member-{offset}:7000").parse().expect("valid endpoint")
}

/// Runs one simulation. Panics if the configuration does not validate.
pub fn run_sim(cfg: &SimConfig) -> SimResult {
    cfg.validate().expect("invalid simulation config");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shared_failure = (0..cfg.dag.len()).map(|_| rng.random_bool(cfg.failure_prob)).collect();
    let members = (0..cfg.flight_size)
        .map(|_| Member {
            engine: None,
            alive: true,
            running: None,
            attempts: 0,
            started_at: None,
            completed_at: None,
            history: Vec::new(),
        })
        .collect();
    Sim {
        cfg,
        rng,
        queue: BinaryHeap::new(),
        seq: 0,
        now: 0,
        members,
        shared_failure,
        executions: vec![0; cfg.dag.len()],
        messages_sent: 0,
        next_message: 0,
        invocations: 0,
        trace: Vec::new(),
    }
    .run()
}

impl Sim<'_> {
    fn schedule(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Scheduled { at, seq: self.seq, event });
    }

    fn record(&mut self, member: u32, kind: TraceKind) {
        self.trace.push(TraceEvent { at: Duration::from_nanos(self.now), member, kind });
    }

    fn invoke(&mut self, offset: u32) {
        self.invocations += 1;
        self.record(offset, TraceKind::Invoke);
        let at = self.now + nanos(self.cfg.invocation_latency) + self.cfg.cold(offset);
        self.schedule(at, Event::Start(offset));
    }

    fn run(mut self) -> SimResult {
        let hop = nanos(self.cfg.invocation_latency);
        if self.cfg.coordinator_mode {
            self.invocations += 1;
            self.schedule(hop + self.cfg.cold(0), Event::CoordinatorStart);
        } else {
            self.invoke(0);
        }
        for crash in self.cfg.crashes.clone() {
            self.schedule(nanos(crash.at), Event::Crash(crash.offset));
        }

        while let Some(next) = self.queue.peek().map(|s| s.at) {
            self.now = next;
            while self.queue.peek().is_some_and(|s| s.at == next) {
                let scheduled = self.queue.pop().expect("peeked");
                self.handle(scheduled.event);
            }
            self.start_idle_members();
            self.note_completions();
        }
        self.finish()
    }

    fn handle(&mut self, event: Event) {
        match event {
            Event::CoordinatorStart => {
                for offset in 0..self.cfg.flight_size {
                    self.invoke(offset);
                }
            }
            Event::Start(offset) => self.start_member(offset),
            Event::Finish { member, attempt } => self.finish_attempt(member, attempt),
            Event::Deliver { to, from, id, message } => self.deliver(to, from, id, message),
            Event::Crash(offset) => {
                let m = &mut self.members[offset as usize];
                if m.alive {
                    m.alive = false;
                    m.running = None;
                    self.record(offset, TraceKind::Crash);
                }
            }
        }
    }

    fn start_member(&mut self, offset: u32) {
        if !self.members[offset as usize].alive {
            return;
        }
        let info = MemberInfo {
            flight_id: "sim".into(),
            offset,
            flight_size: self.cfg.flight_size,
            address: member_address(offset),
            leader_address: member_address(0),
        };
        let engine = FlightState::new(info, self.cfg.dag.clone(), self.cfg.options);
        let peering = engine.peering_request();
        let m = &mut self.members[offset as usize];
        m.engine = Some(engine);
        m.started_at = Some(self.now);
        self.record(offset, TraceKind::Start);

        if offset == 0 && !self.cfg.coordinator_mode {
            // Forks are fire-and-forget: issued at once, never awaited.
            for follower in 1..self.cfg.flight_size {
                self.invoke(follower);
            }
        }
        if let Some(request) = peering {
            let duplicate = self.rng.random_bool(self.cfg.peering_duplicate_prob);
            self.send(offset, vec![request.clone()]);
            if duplicate {
                self.send(offset, vec![request]);
            }
        }
    }

    fn send(&mut self, from: u32, envelopes: Vec<Envelope>) {
        for envelope in envelopes {
            self.next_message += 1;
            let id = self.next_message;
            let latency = self.cfg.net_latency.sample(&mut self.rng, None);
            self.messages_sent += 1;
            self.record(from, TraceKind::Send { to: envelope.to_offset, id, kind: kind_name(&envelope.message) });
            self.schedule(self.now + latency, Event::Deliver { to: envelope.to_offset, from, id, message: envelope.message });
        }
    }

    fn deliver(&mut self, to: u32, from: u32, id: u64, message: Message) {
        let m = &mut self.members[to as usize];
        let Some(engine) = m.engine.as_mut().filter(|_| m.alive) else {
            self.record(to, TraceKind::Drop { from, id });
            return;
        };
        let task_before = match &message {
            Message::StateUpdate(u) => engine.status(&u.task).map(|s| (u.task.clone(), s)),
            _ => None,
        };
        let handled = engine.handle(&message);
        let task_after = task_before.as_ref().and_then(|(t, _)| engine.status(t));
        self.record(to, TraceKind::Deliver { from, id });
        let handled = match handled {
            Ok(h) => h,
            Err(e) => {
                tracing::debug!(member = to, error = %e, "message rejected");
                return;
            }
        };
        if let Some((task, action)) = handled.update {
            if action == UpdateAction::TerminateRunning {
                self.members[to as usize].running = None;
            }
            self.record(to, TraceKind::Applied { task: task.clone(), action });
            let became_terminal = matches!((&task_before, task_after), (Some((_, b)), Some(a)) if !b.is_terminal() && a.is_terminal());
            if became_terminal {
                self.record(to, TraceKind::Terminal { task });
            }
        }
        self.send(to, handled.envelopes);
    }

    fn finish_attempt(&mut self, member: u32, attempt: u64) {
        let m = &mut self.members[member as usize];
        let Some(run) = m.running.filter(|r| r.id == attempt && m.alive) else {
            return;
        };
        m.running = None;
        let engine = m.engine.as_mut().expect("running member has an engine");
        let task = self.cfg.dag.name(run.node).to_string();
        let output = json!({ "task": task });
        let broadcast = engine.complete_local(&task, output, run.fails).expect("attempt was running");
        self.record(member, TraceKind::TaskFinish { task: task.clone(), failed: run.fails });
        self.record(member, TraceKind::Terminal { task });
        self.send(member, broadcast.envelopes);
    }

    fn start_idle_members(&mut self) {
        for offset in 0..self.cfg.flight_size {
            let m = &self.members[offset as usize];
            if !m.alive || m.running.is_some() {
                continue;
            }
            let Some(task) = m.engine.as_ref().and_then(|e| e.next_runnable()).map(str::to_string) else {
                continue;
            };
            let node = self.cfg.dag.index_of(&task).expect("task in graph");
            let drawn = if self.rng.random_bool(self.cfg.failure_correlation) {
                self.shared_failure[node]
            } else {
                self.rng.random_bool(self.cfg.failure_prob)
            };
            let fails = drawn || self.cfg.crashing_tasks.contains(&task);
            let duration = self.cfg.task_duration.sample(&mut self.rng, Some(&task));

            let m = &mut self.members[offset as usize];
            let engine = m.engine.as_mut().expect("checked");
            let null_inputs = engine
                .task_inputs(&task)
                .expect("task in graph")
                .into_iter()
                .filter_map(|(dep, v)| v.is_null().then_some(dep))
                .collect();
            engine.start_task(&task).expect("next_runnable is startable");
            m.attempts += 1;
            let id = m.attempts;
            m.running = Some(Attempt { node, id, fails });
            self.executions[node] += 1;
            self.record(offset, TraceKind::TaskStart { task, null_inputs });
            self.schedule(self.now + duration, Event::Finish { member: offset, attempt: id });
        }
    }

    fn note_completions(&mut self) {
        let now = self.now;
        for offset in 0..self.cfg.flight_size {
            let m = &mut self.members[offset as usize];
            let Some(engine) = m.engine.as_ref().filter(|e| m.alive && e.is_job_complete()) else {
                continue;
            };
            let outputs = engine.job_output();
            if m.history.last().map(|(_, o)| o) != Some(&outputs) {
                m.history.push((now, outputs));
            }
            if m.completed_at.is_none() {
                m.completed_at = Some(now);
                self.record(offset, TraceKind::JobComplete);
            }
        }
    }

    fn finish(self) -> SimResult {
        let cfg = self.cfg;
        let live = |m: &Member| m.alive && m.engine.is_some();

        let reporter = self.members.iter().find(|m| live(m) && m.completed_at.is_some());
        let outputs: BTreeMap<String, Value> = match reporter.and_then(|m| m.engine.as_ref()) {
            Some(engine) => engine.job_output(),
            None => cfg.dag.sinks().into_iter().map(|s| (s.to_string(), Value::Null)).collect(),
        };
        let job_failed = reporter.is_none() || outputs.values().any(Value::is_null);

        let latency = if cfg.coordinator_mode {
            self.members
                .iter()
                .filter(|m| m.engine.is_some() && m.alive)
                .map(|m| m.completed_at.unwrap_or(self.now))
                .max()
                .unwrap_or(self.now)
        } else {
            self.members
                .iter()
                .filter_map(|m| m.history.iter().find(|(_, o)| *o == outputs).map(|(t, _)| *t))
                .min()
                .unwrap_or(self.now)
        };

        let leader = self.members[0].engine.as_ref();
        let serviced: Vec<u32> = leader.map(|l| l.serviced_offsets().collect()).unwrap_or_default();
        let failed_members = std::iter::once(0)
            .chain(serviced.iter().copied())
            .filter(|&o| !self.members[o as usize].alive)
            .count();
        let realized_flight_size = self
            .members
            .iter()
            .filter(|m| live(m) && m.engine.as_ref().is_some_and(|e| e.peers().contains(0)))
            .count();

        let members = self
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| MemberReport {
                offset: i as u32,
                started_at: m.started_at.map(Duration::from_nanos),
                completed_at: m.completed_at.map(Duration::from_nanos),
                crashed: !m.alive,
                schedule: m.engine.as_ref().map(|e| e.schedule().order().to_vec()).unwrap_or_default(),
                realized: m
                    .engine
                    .as_ref()
                    .map(|e| e.realized_order().into_iter().map(str::to_string).collect())
                    .unwrap_or_default(),
                view: m.engine.as_ref().map(|e| e.peers().iter().map(|(o, _)| o).collect()).unwrap_or_default(),
                outputs: m.engine.as_ref().map(FlightState::job_output).unwrap_or_default(),
                task_outputs: m
                    .engine
                    .as_ref()
                    .map(|e| {
                        cfg.dag
                            .names()
                            .iter()
                            .filter_map(|t| e.output(t).map(|v| (t.clone(), v.clone())))
                            .collect()
                    })
                    .unwrap_or_default(),
            })
            .collect();

        SimResult {
            job_latency: Duration::from_nanos(latency),
            job_failed,
            outputs,
            executions_per_task: cfg
                .dag
                .names()
                .iter()
                .cloned()
                .zip(self.executions.iter().copied())
                .collect(),
            messages_sent: self.messages_sent,
            invocations: self.invocations,
            serviced_peering_requests: serviced.len(),
            failed_members,
            realized_flight_size,
            members,
            trace: self.trace,
        }
    }
}

fn kind_name(message: &Message) -> String {
    match message {
        Message::PeeringRequest(_) => "peering_request",
        Message::Membership { .. } => "membership",
        Message::StateUpdate(_) => "state_update",
    }
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workloads::Workload;

    fn ideal(dag: TaskDag, flight_size: u32) -> SimConfig {
        SimConfig { flight_size, ..SimConfig::new(dag) }
    }

    #[test]
    fn two_member_diamond_executes_six_tasks() {
        let r = run_sim(&ideal(Workload::Diamond.dag(), 2));
        assert_eq!(r.members[0].realized, ["t1", "t3", "t4"]);
        assert_eq!(r.members[1].realized, ["t1", "t2", "t4"]);
        assert_eq!(r.total_executions(), 6);
        assert_eq!(r.job_latency, Duration::from_millis(300));
        assert!(!r.job_failed);
        validate_trace(&ideal(Workload::Diamond.dag(), 2), &r).unwrap();
    }

    #[test]
    fn solo_member_runs_everything_once() {
        for w in [Workload::Diamond, Workload::MapReduce { mappers: 3, reducers: 2 }, Workload::Chain { tasks: 5 }] {
            let dag = w.dag();
            let n = dag.len() as u64;
            let r = run_sim(&ideal(dag, 1));
            assert!(r.executions_per_task.values().all(|&c| c == 1));
            assert_eq!(r.job_latency, Duration::from_millis(100 * n));
            assert_eq!(r.messages_sent, 0);
            assert_eq!(r.invocations, 1);
        }
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = SimConfig {
            flight_size: 3,
            failure_prob: 0.3,
            net_latency: DurationDist::Uniform { min: Duration::from_millis(1), max: Duration::from_millis(9) },
            task_duration: DurationDist::Uniform { min: Duration::from_millis(50), max: Duration::from_millis(150) },
            seed: 42,
            ..SimConfig::new(Workload::Media { width: 3 }.dag())
        };
        assert_eq!(run_sim(&cfg), run_sim(&cfg));
        let other = SimConfig { seed: 43, ..cfg.clone() };
        assert_ne!(run_sim(&cfg).trace, run_sim(&other).trace);
    }

    #[test]
    fn failed_task_yields_null_downstream() {
        // Every attempt of every task fails: the sink still runs and the job
        // completes with a null result.
        let cfg = SimConfig { failure_prob: 1.0, ..ideal(Workload::Diamond.dag(), 1) };
        let r = run_sim(&cfg);
        assert_eq!(r.members[0].realized, ["t1", "t3", "t2", "t4"]);
        assert!(r.job_failed);
        assert_eq!(r.outputs["t4"], Value::Null);
    }

    #[test]
    fn config_validation() {
        let base = SimConfig::new(Workload::Diamond.dag());
        assert!(SimConfig { failure_prob: 1.5, ..base.clone() }.validate().is_err());
        assert!(SimConfig { flight_size: 0, ..base.clone() }.validate().is_err());
        assert!(SimConfig { cold_members: vec![3], ..base.clone() }.validate().is_err());
        let per_task = DurationDist::PerTask(BTreeMap::from([("t1".to_string(), Duration::from_millis(1))]));
        assert_eq!(
            SimConfig { task_duration: per_task, ..base.clone() }.validate(),
            Err(SimConfigError::MissingTaskDuration("t2".into()))
        );
        assert!(base.validate().is_ok());
    }
}
