//! Execution contexts: the per-activation scheduling metadata.
//!
//! Every field of the incoming metadata is optional. Missing fields fall back
//! to a single local leader that schedules the whole manifest, which is
//! exactly what a request without any flight metadata means.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::manifest::{ActionManifest, FunctionMask, ManifestError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ContextError {
    #[error("offset {offset} is outside a flight of size {flight_size}")]
    InvalidOffset { offset: u32, flight_size: u32 },
    #[error("flight size must be at least 1")]
    InvalidFlightSize,
    #[error("mask names unknown function `{0}`")]
    UnknownMaskedFunction(String),
    #[error("follower context (offset {0}) carries no leader address")]
    MissingLeaderAddress(u32),
    #[error("context is not a flight leader")]
    NotALeader,
    #[error("invalid endpoint `{0}`, expected host:port")]
    InvalidEndpoint(String),
    #[error(transparent)]
    Mask(#[from] ManifestError),
}

/// A `host:port` network endpoint.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Endpoint(String);

impl Endpoint {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn host(&self) -> &str {
        self.0.rsplit_once(':').map(|(h, _)| h).unwrap_or_default()
    }

    pub fn port(&self) -> u16 {
        self.0.rsplit_once(':').and_then(|(_, p)| p.parse().ok()).unwrap_or_default()
    }
}

impl FromStr for Endpoint {
    type Err = ContextError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => Ok(Self(s.to_string())),
            _ => Err(ContextError::InvalidEndpoint(s.to_string())),
        }
    }
}

impl TryFrom<String> for Endpoint {
    type Error = ContextError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> Self {
        e.0
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Optional metadata fields as they arrive on an activation request.
///
/// `activation_id` is the flight correlation id: absent on user requests,
/// set by the leader on every forked follower request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flight_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader_address: Option<Endpoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionContext {
    offset: u32,
    mask: FunctionMask,
    flight_size: u32,
    leader_address: Endpoint,
    flight_id: String,
    activation_id: String,
}

impl ExecutionContext {
    /// 0 for the leader.
    pub fn offset(&self) -> u32 {
        self.offset
    }

    pub fn mask(&self) -> &FunctionMask {
        &self.mask
    }

    pub fn flight_size(&self) -> u32 {
        self.flight_size
    }

    pub fn leader_address(&self) -> &Endpoint {
        &self.leader_address
    }

    /// Shared by every member of the flight; peer messages carry this id.
    pub fn flight_id(&self) -> &str {
        &self.flight_id
    }

    /// Unique per member: the flight id for the leader, `<flight id>-<offset>`
    /// for followers.
    pub fn activation_id(&self) -> &str {
        &self.activation_id
    }

    pub fn is_leader(&self) -> bool {
        self.offset == 0
    }

    /// Metadata that reproduces this context on another member.
    pub fn to_metadata(&self) -> ContextMetadata {
        ContextMetadata {
            offset: Some(self.offset),
            mask: Some(self.mask.selected().iter().cloned().collect()),
            flight_size: Some(self.flight_size),
            leader_address: Some(self.leader_address.clone()),
            activation_id: Some(self.flight_id.clone()),
        }
    }
}

pub fn infer_context(
    metadata: &ContextMetadata,
    manifest: &ActionManifest,
    local_address: &Endpoint,
) -> Result<ExecutionContext, ContextError> {
    let flight_size = metadata.flight_size.unwrap_or(1);
    if flight_size == 0 {
        return Err(ContextError::InvalidFlightSize);
    }
    let offset = metadata.offset.unwrap_or(0);
    if offset >= flight_size {
        return Err(ContextError::InvalidOffset { offset, flight_size });
    }

    let mask = match &metadata.mask {
        Some(names) => {
            let mask = FunctionMask::new(names.iter().cloned())?;
            if let Some(unknown) = mask.selected().iter().find(|n| manifest.entry(n).is_none()) {
                return Err(ContextError::UnknownMaskedFunction(unknown.clone()));
            }
            mask
        }
        None => FunctionMask::all(manifest),
    };

    let leader_address = if offset == 0 {
        if let Some(given) = metadata.leader_address.as_ref().filter(|a| *a != local_address) {
            tracing::debug!(%given, local = %local_address, "leader context names a foreign leader address; using local");
        }
        local_address.clone()
    } else {
        metadata.leader_address.clone().ok_or(ContextError::MissingLeaderAddress(offset))?
    };

    let flight_id = metadata.activation_id.clone().unwrap_or_else(fresh_activation_id);
    let activation_id = member_activation_id(&flight_id, offset);
    Ok(ExecutionContext { offset, mask, flight_size, leader_address, flight_id, activation_id })
}

pub fn make_follower_contexts(leader: &ExecutionContext) -> Result<Vec<ExecutionContext>, ContextError> {
    if !leader.is_leader() {
        return Err(ContextError::NotALeader);
    }
    Ok((1..leader.flight_size)
        .map(|offset| ExecutionContext {
            offset,
            mask: leader.mask.clone(),
            flight_size: leader.flight_size,
            leader_address: leader.leader_address.clone(),
            flight_id: leader.flight_id.clone(),
            activation_id: member_activation_id(&leader.flight_id, offset),
        })
        .collect())
}

fn fresh_activation_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn member_activation_id(flight_id: &str, offset: u32) -> String {
    if offset == 0 {
        flight_id.to_string()
    } else {
        format!("{flight_id}-{offset}")
    }
}
