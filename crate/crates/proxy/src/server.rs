//! The HTTP face (`/init`, `/run`, `/stats`) and the per-activation member
//! loop that drives a flight engine with real processes.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{DefaultBodyLimit, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use raptor_core::{infer_context, make_follower_contexts, Endpoint, FlightOptions, FlightState, MemberInfo, Message};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, RwLock};
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use crate::executor::{spawn_task, supervise, ExecutorConfig, Launch, TaskOutcome};
use crate::fork::{fork_followers, RunPayload};
use crate::pack::{install, InitError, InitPayload, Pack, LEGACY_ENTRY};
use crate::peer::{serve_peers, Inbox, PeerClient, PeerRouter};
use crate::stats::{Stats, StatsSnapshot};

const MAX_INIT_BODY: usize = 256 * 1024 * 1024;

/// Where follower invocations go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Controller {
    /// URL accepting the `/run` body, e.g. a controller's invoke route.
    Url(String),
    /// This proxy's own `/run`, for single-host flights.
    Loopback,
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    pub peer_listen: SocketAddr,
    /// Host peers use to reach this proxy. Defaults to the peer listener's
    /// address, or loopback when that is unspecified.
    pub advertise_host: Option<String>,
    /// Without one, flights degrade to leader-only.
    pub controller: Option<Controller>,
    pub executor: ExecutorConfig,
    pub code_root: PathBuf,
    pub allow_reinit: bool,
    pub activation_timeout: Duration,
    pub peering_timeout: Duration,
    /// How long a member keeps answering peers after it has responded.
    pub linger: Duration,
    pub flight: FlightOptions,
}

impl ProxyConfig {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        let local = |port| SocketAddr::new(IpAddr::V4(Ipv4Addr::LOCALHOST), port);
        Self {
            listen: local(0),
            peer_listen: local(0),
            advertise_host: None,
            controller: None,
            executor: ExecutorConfig::new(root.join("work")),
            code_root: root.join("code"),
            allow_reinit: false,
            activation_timeout: Duration::from_secs(300),
            peering_timeout: Duration::from_secs(1),
            linger: Duration::from_secs(2),
            flight: FlightOptions::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Executor(#[from] crate::executor::ExecutorError),
    #[error("invalid advertised peer endpoint: {0}")]
    Endpoint(#[from] raptor_core::ContextError),
    #[error("http client: {0}")]
    Http(#[from] reqwest::Error),
}

struct AppState {
    cfg: ProxyConfig,
    controller_url: Option<String>,
    pack: Arc<RwLock<Option<Arc<Pack>>>>,
    packs_installed: AtomicU64,
    peer_endpoint: Endpoint,
    router: PeerRouter,
    client: PeerClient,
    http: reqwest::Client,
    stats: Arc<Stats>,
    cancel: CancellationToken,
}

/// A running proxy.
pub struct ProxyHandle {
    pub http_addr: SocketAddr,
    pub peer_endpoint: Endpoint,
    pub stats: Arc<Stats>,
    cancel: CancellationToken,
    server: JoinHandle<()>,
}

impl ProxyHandle {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.http_addr)
    }

    /// Stops accepting requests and preempts running activations.
    pub async fn shutdown(self) {
        self.cancel.cancel();
        let _ = self.server.await;
    }

    /// Resolves when the server stops.
    pub async fn wait(self) {
        let _ = self.server.await;
    }

    pub fn cancel_token(&self) -> CancellationToken {
        self.cancel.clone()
    }
}

pub async fn serve(cfg: ProxyConfig) -> Result<ProxyHandle, ServeError> {
    cfg.executor.validate()?;
    let bind = |addr: SocketAddr| async move {
        TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })
    };
    let http_listener = bind(cfg.listen).await?;
    let peer_listener = bind(cfg.peer_listen).await?;
    let http_addr = http_listener.local_addr().map_err(|source| ServeError::Bind { addr: cfg.listen, source })?;
    let peer_addr =
        peer_listener.local_addr().map_err(|source| ServeError::Bind { addr: cfg.peer_listen, source })?;

    let host = match &cfg.advertise_host {
        Some(h) => h.clone(),
        None if peer_addr.ip().is_unspecified() => "127.0.0.1".to_string(),
        None => peer_addr.ip().to_string(),
    };
    let peer_endpoint: Endpoint = format!("{host}:{}", peer_addr.port()).parse()?;

    let controller_url = match &cfg.controller {
        Some(Controller::Url(u)) => Some(u.clone()),
        Some(Controller::Loopback) => {
            let ip = if http_addr.ip().is_unspecified() { IpAddr::V4(Ipv4Addr::LOCALHOST) } else { http_addr.ip() };
            Some(format!("http://{}/run", SocketAddr::new(ip, http_addr.port())))
        }
        None => {
            tracing::warn!("no controller configured; flights with more than one member run leader-only");
            None
        }
    };

    let stats = Arc::new(Stats::default());
    let cancel = CancellationToken::new();
    let router = PeerRouter::default();
    let state = Arc::new(AppState {
        client: PeerClient::new(cfg.peering_timeout, stats.clone()),
        http: reqwest::Client::builder().connect_timeout(cfg.peering_timeout).build()?,
        cfg,
        controller_url,
        pack: Default::default(),
        packs_installed: AtomicU64::new(0),
        peer_endpoint: peer_endpoint.clone(),
        router: router.clone(),
        stats: stats.clone(),
        cancel: cancel.clone(),
    });

    tokio::spawn(serve_peers(peer_listener, router, stats.clone(), cancel.clone()));

    let app = Router::new()
        .route("/init", post(handle_init))
        .route("/run", post(handle_run))
        .route("/stats", get(handle_stats))
        .layer(DefaultBodyLimit::max(MAX_INIT_BODY))
        .with_state(state);
    let shutdown = cancel.clone();
    let server = tokio::spawn(async move {
        let served = axum::serve(http_listener, app).with_graceful_shutdown(shutdown.cancelled_owned()).await;
        if let Err(e) = served {
            tracing::error!(error = %e, "http server failed");
        }
    });
    tracing::info!(%http_addr, peer = %peer_endpoint, "proxy listening");
    Ok(ProxyHandle { http_addr, peer_endpoint, stats, cancel, server })
}

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

#[derive(Debug, Deserialize)]
struct InitRequest {
    value: InitPayload,
}

async fn handle_init(State(state): State<Arc<AppState>>, Json(req): Json<InitRequest>) -> Response {
    let mut slot = state.pack.write().await;
    if slot.is_some() && !state.cfg.allow_reinit {
        return error(StatusCode::FORBIDDEN, "cannot initialize the action more than once");
    }
    let n = state.packs_installed.fetch_add(1, Ordering::Relaxed);
    let root = state.cfg.code_root.join(format!("pack-{n}"));
    let payload = req.value;
    let installed = tokio::task::spawn_blocking(move || {
        let result = install(&payload, &root);
        if result.is_err() {
            let _ = std::fs::remove_dir_all(&root);
        }
        result
    })
    .await
    .expect("install task panicked");
    match installed {
        Ok(pack) => {
            tracing::info!(functions = pack.manifest.len(), id = pack.manifest.manifest_id(), "initialized");
            let functions: Vec<&str> = pack.manifest.names().collect();
            let body = json!({ "ok": true, "functions": functions });
            *slot = Some(Arc::new(pack));
            (StatusCode::OK, Json(body)).into_response()
        }
        Err(e @ InitError::Io(_)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::BAD_REQUEST, e),
    }
}

async fn handle_stats(State(state): State<Arc<AppState>>) -> Json<StatsSnapshot> {
    Json(state.stats.snapshot())
}

async fn handle_run(State(state): State<Arc<AppState>>, Json(payload): Json<RunPayload>) -> Response {
    // Held for the whole activation so /init cannot swap the pack underneath.
    let guard = state.pack.clone().read_owned().await;
    let Some(pack) = guard.as_ref().cloned() else {
        return error(StatusCode::FORBIDDEN, "action not initialized");
    };
    state.stats.activations.fetch_add(1, Ordering::Relaxed);

    let ctx = match infer_context(&payload.context, &pack.manifest, &state.peer_endpoint) {
        Ok(ctx) => ctx,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let dag = match pack.dag.apply_mask(ctx.mask()) {
        Ok(dag) => dag,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let engine = FlightState::new(MemberInfo::from_context(&ctx, state.peer_endpoint.clone()), dag, state.cfg.flight);
    // Registered before forking so no follower can reach us first.
    let inbox = state.router.register(ctx.flight_id(), ctx.offset());

    if ctx.is_leader() && ctx.flight_size() > 1 {
        match &state.controller_url {
            Some(url) => {
                let followers = make_follower_contexts(&ctx).expect("leader context");
                fork_followers(&state.http, url, &followers, &payload.value, state.cfg.activation_timeout, &state.stats);
            }
            None => tracing::warn!(flight = ctx.flight_id(), "no controller, running the flight leader-only"),
        }
    }

    let member = Member { state: state.clone(), pack: pack.clone(), engine, inbox, value: payload.value };
    let (engine, inbox, ended) = member.run(ctx.activation_id().to_string()).await;
    drop(guard);

    let response = match ended {
        Ended::Complete => {
            let outputs = engine.job_output();
            if pack.legacy {
                match outputs.get(LEGACY_ENTRY) {
                    Some(v) if !v.is_null() => (StatusCode::OK, Json(v.clone())).into_response(),
                    _ => error(StatusCode::BAD_GATEWAY, "the action did not produce a valid result"),
                }
            } else {
                (StatusCode::OK, Json(outputs)).into_response()
            }
        }
        Ended::TimedOut => error(StatusCode::BAD_GATEWAY, "activation timed out"),
        Ended::Shutdown => error(StatusCode::SERVICE_UNAVAILABLE, "proxy shutting down"),
    };
    if ctx.flight_size() > 1 {
        tokio::spawn(linger(state, engine, inbox));
    }
    response
}

/// Keeps serving peers for a while, so members that join after this one
/// finished still learn every result.
async fn linger(state: Arc<AppState>, mut engine: FlightState, mut inbox: Inbox) {
    let deadline = tokio::time::sleep(state.cfg.linger);
    tokio::pin!(deadline);
    loop {
        tokio::select! {
            _ = &mut deadline => return,
            _ = state.cancel.cancelled() => return,
            msg = inbox.recv() => match msg {
                Some(msg) => match engine.handle(&msg) {
                    Ok(handled) => state.client.send_all(handled.envelopes),
                    Err(e) => tracing::debug!(error = %e, "ignoring peer message"),
                },
                None => return,
            },
        }
    }
}

enum Ended {
    Complete,
    TimedOut,
    Shutdown,
}

struct Attempt {
    id: u64,
    preempt: Option<oneshot::Sender<()>>,
    supervisor: JoinHandle<()>,
}

struct Finished {
    attempt: u64,
    task: String,
    outcome: TaskOutcome,
}

struct Member {
    state: Arc<AppState>,
    pack: Arc<Pack>,
    engine: FlightState,
    inbox: Inbox,
    value: Value,
}

impl Member {
    async fn run(mut self, activation_id: String) -> (FlightState, Inbox, Ended) {
        let state = self.state.clone();
        if let Some(req) = self.engine.peering_request() {
            state.client.send_all([req]);
        }
        let (done_tx, mut done_rx) = mpsc::channel::<Finished>(16);
        let mut current: Option<Attempt> = None;
        let mut attempts = 0u64;
        // Supervisors of preempted attempts, awaited on shutdown.
        let mut preempted: Vec<JoinHandle<()>> = Vec::new();
        let deadline = tokio::time::sleep(state.cfg.activation_timeout);
        tokio::pin!(deadline);

        let ended = loop {
            if current.is_none() {
                while let Some(task) = self.engine.next_runnable().map(String::from) {
                    self.engine.start_task(&task).expect("runnable task starts");
                    attempts += 1;
                    match self.launch(&activation_id, &task, attempts, done_tx.clone()) {
                        Ok(attempt) => {
                            current = Some(attempt);
                            break;
                        }
                        Err(e) => {
                            tracing::warn!(task, error = %e, "spawn failed, recording a null result");
                            let b = self.engine.complete_local(&task, Value::Null, true).expect("task running");
                            state.client.send_all(b.envelopes);
                        }
                    }
                }
            }
            if self.engine.is_job_complete() {
                break Ended::Complete;
            }

            tokio::select! {
                Some(done) = done_rx.recv() => {
                    if current.as_ref().is_some_and(|a| a.id == done.attempt) {
                        current = None;
                        if let TaskOutcome::Finished { output, failed } = done.outcome {
                            let b = self.engine.complete_local(&done.task, output, failed).expect("task running");
                            state.client.send_all(b.envelopes);
                        }
                    }
                }
                msg = self.inbox.recv() => {
                    let Some(msg) = msg else { break Ended::Shutdown };
                    self.on_message(&msg, &mut current, &mut preempted);
                }
                _ = &mut deadline => {
                    tracing::warn!(activation = %activation_id, "activation timed out");
                    break Ended::TimedOut;
                }
                _ = state.cancel.cancelled() => break Ended::Shutdown,
            }
        };

        if let Some(mut attempt) = current.take() {
            if let Some(tx) = attempt.preempt.take() {
                let _ = tx.send(());
            }
            self.engine.abandon_running();
            preempted.push(attempt.supervisor);
        }
        if !matches!(ended, Ended::Complete) {
            for handle in preempted {
                let _ = handle.await;
            }
        }
        (self.engine, self.inbox, ended)
    }

    fn on_message(&mut self, msg: &Message, current: &mut Option<Attempt>, preempted: &mut Vec<JoinHandle<()>>) {
        let handled = match self.engine.handle(msg) {
            Ok(h) => h,
            Err(e) => {
                tracing::debug!(error = %e, "ignoring peer message");
                return;
            }
        };
        self.state.client.send_all(handled.envelopes);
        if let Some((task, raptor_core::UpdateAction::TerminateRunning)) = handled.update {
            if let Some(mut attempt) = current.take() {
                tracing::debug!(task, "peer finished first, preempting local attempt");
                if let Some(tx) = attempt.preempt.take() {
                    let _ = tx.send(());
                }
                preempted.retain(|h| !h.is_finished());
                preempted.push(attempt.supervisor);
            }
        }
    }

    fn launch(
        &self,
        activation_id: &str,
        task: &str,
        id: u64,
        done: mpsc::Sender<Finished>,
    ) -> Result<Attempt, crate::executor::ExecutorError> {
        let dag = self.engine.dag();
        let node = dag.index_of(task).expect("scheduled task");
        let input = if dag.dependencies(node).is_empty() {
            self.value.clone()
        } else {
            serde_json::to_value(self.engine.task_inputs(task).expect("scheduled task")).expect("inputs serialize")
        };
        let entrypoint = self
            .pack
            .entrypoint(task)
            .ok_or_else(|| crate::executor::ExecutorError::MissingEntrypoint(PathBuf::from(task)))?;
        let launch = Launch { activation_id, task, entrypoint, interpreter: self.pack.interpreter.as_deref() };
        let process = spawn_task(&launch, &input, &self.state.cfg.executor)?;
        self.state.stats.record_spawn(task);

        let (preempt_tx, preempt_rx) = oneshot::channel::<()>();
        let delay = self.state.cfg.executor.term_to_kill_delay;
        let stats = self.state.stats.clone();
        let task = task.to_string();
        let supervisor = tokio::spawn(async move {
            // A dropped sender means the member is gone; stop the task too.
            let outcome = supervise(process, delay, async {
                let _ = preempt_rx.await;
            })
            .await;
            stats.record_exit();
            let _ = done.send(Finished { attempt: id, task, outcome }).await;
        });
        Ok(Attempt { id, preempt: Some(preempt_tx), supervisor })
    }
}
