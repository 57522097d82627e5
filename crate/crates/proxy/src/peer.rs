//! Peer transport: length-prefixed JSON frames over TCP.
//!
//! One listener serves every activation hosted by this process. Inbound
//! messages are routed by flight id to the local members registered for it,
//! so several members of one flight may share a proxy.

use std::collections::HashMap;
use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use raptor_core::flight::wire::{encode_frame, from_json, MAX_FRAME_LEN};
use raptor_core::{Endpoint, Envelope, Message};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_util::sync::CancellationToken;

use crate::stats::Stats;

const INBOX_CAPACITY: usize = 1024;
const OUTBOX_CAPACITY: usize = 1024;

type Members = HashMap<String, Vec<(u32, mpsc::Sender<Message>)>>;

/// Routes inbound peer messages to registered local members.
#[derive(Debug, Clone, Default)]
pub struct PeerRouter {
    members: Arc<Mutex<Members>>,
}

/// A member's inbound queue. Unregisters itself when dropped.
#[derive(Debug)]
pub struct Inbox {
    router: PeerRouter,
    flight_id: String,
    offset: u32,
    rx: mpsc::Receiver<Message>,
}

impl Inbox {
    pub async fn recv(&mut self) -> Option<Message> {
        self.rx.recv().await
    }
}

impl Drop for Inbox {
    fn drop(&mut self) {
        let mut members = self.router.members.lock().expect("router lock");
        if let Some(list) = members.get_mut(&self.flight_id) {
            list.retain(|(o, _)| *o != self.offset);
            if list.is_empty() {
                members.remove(&self.flight_id);
            }
        }
    }
}

impl PeerRouter {
    pub fn register(&self, flight_id: &str, offset: u32) -> Inbox {
        let (tx, rx) = mpsc::channel(INBOX_CAPACITY);
        let mut members = self.members.lock().expect("router lock");
        let list = members.entry(flight_id.to_string()).or_default();
        list.retain(|(o, _)| *o != offset);
        list.push((offset, tx));
        Inbox { router: self.clone(), flight_id: flight_id.to_string(), offset, rx }
    }

    /// Delivers to the local members the message is meant for. Peering
    /// requests go to the leader only; everything else to every member but
    /// its origin. Returns the number of members reached.
    pub fn route(&self, message: Message) -> usize {
        let members = self.members.lock().expect("router lock");
        let Some(list) = members.get(message.activation_id()) else {
            tracing::debug!(flight = message.activation_id(), "no local member for peer message");
            return 0;
        };
        let wanted = |offset: u32| match &message {
            Message::PeeringRequest(_) => offset == 0,
            Message::StateUpdate(u) => offset != u.origin_offset,
            Message::Membership { .. } => true,
        };
        let mut reached = 0;
        for (offset, tx) in list.iter().filter(|(o, _)| wanted(*o)) {
            match tx.try_send(message.clone()) {
                Ok(()) => reached += 1,
                Err(e) => tracing::warn!(offset, error = %e, "dropping peer message for a full or closed inbox"),
            }
        }
        reached
    }
}

/// Accepts peer connections until cancelled.
pub async fn serve_peers(listener: TcpListener, router: PeerRouter, stats: Arc<Stats>, cancel: CancellationToken) {
    loop {
        let (stream, from) = tokio::select! {
            _ = cancel.cancelled() => return,
            accepted = listener.accept() => match accepted {
                Ok(pair) => pair,
                Err(e) => {
                    tracing::warn!(error = %e, "peer accept failed");
                    continue;
                }
            },
        };
        let (router, stats, cancel) = (router.clone(), stats.clone(), cancel.clone());
        tokio::spawn(async move {
            tokio::select! {
                _ = cancel.cancelled() => {}
                result = read_frames(stream, &router, &stats) => {
                    if let Err(e) = result {
                        tracing::debug!(%from, error = %e, "peer connection closed");
                    }
                }
            }
        });
    }
}

async fn read_frames(mut stream: TcpStream, router: &PeerRouter, stats: &Stats) -> std::io::Result<()> {
    let mut body = Vec::new();
    loop {
        let len = match stream.read_u32().await {
            Ok(len) => len as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(()),
            Err(e) => return Err(e),
        };
        if len > MAX_FRAME_LEN {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
        }
        body.resize(len, 0);
        stream.read_exact(&mut body).await?;
        match from_json(&body) {
            Ok(message) => {
                stats.peer_messages_received.fetch_add(1, Ordering::Relaxed);
                router.route(message);
            }
            Err(e) => tracing::warn!(error = %e, "discarding malformed peer frame"),
        }
    }
}

/// Best-effort sender. Keeps one lazily connected stream per endpoint;
/// messages to an unreachable peer are dropped.
#[derive(Debug, Clone)]
pub struct PeerClient {
    writers: Arc<Mutex<HashMap<Endpoint, mpsc::Sender<Arc<Vec<u8>>>>>>,
    connect_timeout: Duration,
    stats: Arc<Stats>,
}

impl PeerClient {
    pub fn new(connect_timeout: Duration, stats: Arc<Stats>) -> Self {
        Self { writers: Default::default(), connect_timeout, stats }
    }

    /// Sends a batch. Envelopes carrying the same message to the same
    /// endpoint collapse into one frame, since the receiving side fans out
    /// to every local member itself.
    pub fn send_all(&self, envelopes: impl IntoIterator<Item = Envelope>) {
        let mut sent: Vec<(Endpoint, Message)> = Vec::new();
        for env in envelopes {
            if sent.iter().any(|(to, m)| *to == env.to && *m == env.message) {
                continue;
            }
            self.send(&env.to, &env.message);
            sent.push((env.to, env.message));
        }
    }

    pub fn send(&self, to: &Endpoint, message: &Message) {
        let frame = Arc::new(encode_frame(message));
        let tx = {
            let mut writers = self.writers.lock().expect("writer lock");
            let tx = writers
                .entry(to.clone())
                .and_modify(|tx| {
                    if tx.is_closed() {
                        *tx = spawn_writer(to.clone(), self.connect_timeout);
                    }
                })
                .or_insert_with(|| spawn_writer(to.clone(), self.connect_timeout));
            tx.clone()
        };
        match tx.try_send(frame) {
            Ok(()) => {
                self.stats.peer_messages_sent.fetch_add(1, Ordering::Relaxed);
            }
            Err(e) => tracing::warn!(%to, error = %e, "dropping outbound peer message"),
        }
    }
}

fn spawn_writer(to: Endpoint, connect_timeout: Duration) -> mpsc::Sender<Arc<Vec<u8>>> {
    let (tx, mut rx) = mpsc::channel::<Arc<Vec<u8>>>(OUTBOX_CAPACITY);
    tokio::spawn(async move {
        let mut stream = None;
        while let Some(frame) = rx.recv().await {
            if stream.is_none() {
                match tokio::time::timeout(connect_timeout, TcpStream::connect(to.as_str())).await {
                    Ok(Ok(s)) => {
                        let _ = s.set_nodelay(true);
                        stream = Some(s);
                    }
                    Ok(Err(e)) => tracing::debug!(%to, error = %e, "peer unreachable"),
                    Err(_) => tracing::debug!(%to, "peer connect timed out"),
                }
            }
            if let Some(s) = stream.as_mut() {
                if let Err(e) = s.write_all(&frame).await {
                    tracing::debug!(%to, error = %e, "peer write failed, reconnecting on next message");
                    stream = None;
                }
            }
        }
    });
    tx
}
