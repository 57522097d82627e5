//! Follower invocations: N-1 fire-and-forget requests to the controller.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use raptor_core::{ContextMetadata, ExecutionContext};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::stats::Stats;

/// Body of `/run`, and of every forked follower request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunPayload {
    #[serde(default = "empty_object")]
    pub value: Value,
    #[serde(flatten)]
    pub context: ContextMetadata,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

/// Dispatches one invocation per follower and returns at once. Responses are
/// only logged; failures are never retried.
pub fn fork_followers(
    http: &reqwest::Client,
    controller: &str,
    followers: &[ExecutionContext],
    value: &Value,
    timeout: Duration,
    stats: &Arc<Stats>,
) {
    for follower in followers {
        let body = RunPayload { value: value.clone(), context: follower.to_metadata() };
        let request = http.post(controller).json(&body).timeout(timeout);
        let offset = follower.offset();
        stats.forks_issued.fetch_add(1, Ordering::Relaxed);
        tokio::spawn(async move {
            match request.send().await {
                Ok(resp) => tracing::debug!(offset, status = %resp.status(), "follower invocation answered"),
                Err(e) => tracing::info!(offset, error = %e, "follower invocation failed"),
            }
        });
    }
}
