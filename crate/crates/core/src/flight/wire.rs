//! Peer wire format: a 4-byte big-endian length followed by one JSON object.
//!
//! Field names are fixed: `activation_id`, `kind`, `task`, `output`,
//! `is_error`, `origin_offset`, `sequence`, `members`. A peering request
//! carries the sender's own `{offset: endpoint}` entry in `members`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Message, PeerDirectory, PeeringRequest, StateUpdate};

/// Frames larger than this are rejected.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    PeeringRequest,
    Membership,
    StateUpdate,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireMessage {
    activation_id: String,
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<String>,
    // Present (possibly null) on state updates only.
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "present")]
    output: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    is_error: Option<bool>,
    origin_offset: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sequence: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    members: Option<PeerDirectory>,
}

// Distinguishes `"output": null` (Some(Null)) from a missing field (None).
fn present<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl From<&Message> for WireMessage {
    fn from(m: &Message) -> Self {
        match m {
            Message::PeeringRequest(r) => WireMessage {
                activation_id: r.activation_id.clone(),
                kind: Kind::PeeringRequest,
                task: None,
                output: None,
                is_error: None,
                origin_offset: r.sender_offset,
                sequence: None,
                members: Some([(r.sender_offset, r.sender_address.clone())].into_iter().collect()),
            },
            Message::Membership { activation_id, members } => WireMessage {
                activation_id: activation_id.clone(),
                kind: Kind::Membership,
                task: None,
                output: None,
                is_error: None,
                origin_offset: 0,
                sequence: None,
                members: Some(members.clone()),
            },
            Message::StateUpdate(u) => WireMessage {
                activation_id: u.activation_id.clone(),
                kind: Kind::StateUpdate,
                task: Some(u.task.clone()),
                output: Some(u.output.clone()),
                is_error: Some(u.is_error),
                origin_offset: u.origin_offset,
                sequence: Some(u.sequence),
                members: None,
            },
        }
    }
}

impl TryFrom<WireMessage> for Message {
    type Error = WireError;

    fn try_from(w: WireMessage) -> Result<Self, Self::Error> {
        let missing = |field: &str| WireError::Malformed(format!("{:?} message without `{field}`", w.kind));
        Ok(match w.kind {
            Kind::PeeringRequest => {
                let members = w.members.as_ref().ok_or_else(|| missing("members"))?;
                let sender_address = members.get(w.origin_offset).ok_or_else(|| missing("members[origin_offset]"))?;
                Message::PeeringRequest(PeeringRequest {
                    activation_id: w.activation_id.clone(),
                    sender_offset: w.origin_offset,
                    sender_address: sender_address.clone(),
                })
            }
            Kind::Membership => Message::Membership {
                members: w.members.clone().ok_or_else(|| missing("members"))?,
                activation_id: w.activation_id,
            },
            Kind::StateUpdate => {
                let is_error = w.is_error.ok_or_else(|| missing("is_error"))?;
                let output = w.output.clone().ok_or_else(|| missing("output"))?;
                Message::StateUpdate(StateUpdate {
                    task: w.task.clone().ok_or_else(|| missing("task"))?,
                    sequence: w.sequence.ok_or_else(|| missing("sequence"))?,
                    output: if is_error { Value::Null } else { output },
                    is_error,
                    origin_offset: w.origin_offset,
                    activation_id: w.activation_id,
                })
            }
        })
    }
}

pub fn to_json(message: &Message) -> Vec<u8> {
    serde_json::to_vec(&WireMessage::from(message)).expect("wire messages always serialize")
}

pub fn from_json(bytes: &[u8]) -> Result<Message, WireError> {
    let wire: WireMessage = serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    wire.try_into()
}

pub fn encode_frame(message: &Message) -> Vec<u8> {
    let body = to_json(message);
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&(body.len() as u32).to_be_bytes());
    frame.extend_from_slice(&body);
    frame
}

/// Decodes one frame from the front of `buf`. Returns `Ok(None)` when `buf`
/// does not yet hold a whole frame, otherwise the message and bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>, WireError> {
    let Some(header) = buf.get(..4) else {
        return Ok(None);
    };
    let len = u32::from_be_bytes(header.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let Some(body) = buf.get(4..4 + len) else {
        return Ok(None);
    };
    Ok(Some((from_json(body)?, 4 + len)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn state_update_field_names() {
        let m = Message::StateUpdate(StateUpdate {
            activation_id: "a".into(),
            task: "t1".into(),
            output: Value::Null,
            is_error: true,
            origin_offset: 1,
            sequence: 3,
        });
        let v: Value = serde_json::from_slice(&to_json(&m)).unwrap();
        assert_eq!(
            v,
            json!({"activation_id":"a","kind":"state_update","task":"t1","output":null,
                   "is_error":true,"origin_offset":1,"sequence":3})
        );
    }

    #[test]
    fn peering_request_carries_sender_entry() {
        let m = Message::PeeringRequest(PeeringRequest {
            activation_id: "a".into(),
            sender_offset: 2,
            sender_address: "h:1".parse().unwrap(),
        });
        let v: Value = serde_json::from_slice(&to_json(&m)).unwrap();
        assert_eq!(v, json!({"activation_id":"a","kind":"peering_request","origin_offset":2,"members":{"2":"h:1"}}));
        assert_eq!(from_json(&to_json(&m)).unwrap(), m);
    }

    #[test]
    fn rejects_incomplete_messages() {
        assert!(from_json(br#"{"activation_id":"a","kind":"state_update","origin_offset":1}"#).is_err());
        assert!(from_json(br#"{"activation_id":"a","kind":"membership","origin_offset":0}"#).is_err());
        assert!(from_json(br#"{"activation_id":"a","kind":"bogus","origin_offset":0}"#).is_err());
        let huge = (MAX_FRAME_LEN as u32 + 1).to_be_bytes();
        assert!(matches!(decode_frame(&huge), Err(WireError::FrameTooLarge(_))));
    }

    #[test]
    fn partial_frames_wait_for_more_bytes() {
        let m = Message::Membership {
            activation_id: "a".into(),
            members: [(0, "h:1".parse().unwrap())].into_iter().collect(),
        };
        let frame = encode_frame(&m);
        assert!(decode_frame(&frame[..3]).unwrap().is_none());
        assert!(decode_frame(&frame[..frame.len() - 1]).unwrap().is_none());
        let (decoded, used) = decode_frame(&frame).unwrap().unwrap();
        assert_eq!((decoded, used), (m, frame.len()));
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            Just(Value::Null),
            any::<i64>().prop_map(Value::from),
            "[a-z]{0,8}".prop_map(Value::from),
            prop::collection::btree_map("[a-z]{1,4}", any::<bool>(), 0..4)
                .prop_map(|m| serde_json::to_value(m).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn frames_round_trip(task in "[a-z0-9:]{1,12}", output in arb_value(), is_error: bool,
                             origin in 0u32..16, seq: u64) {
            let m = Message::StateUpdate(StateUpdate {
                activation_id: "act".into(),
                task,
                output: if is_error { Value::Null } else { output },
                is_error,
                origin_offset: origin,
                sequence: seq,
            });
            let mut stream = encode_frame(&m);
            stream.extend(encode_frame(&m));
            let (first, used) = decode_frame(&stream).unwrap().unwrap();
            prop_assert_eq!(&first, &m);
            let (second, _) = decode_frame(&stream[used..]).unwrap().unwrap();
            prop_assert_eq!(second, m);
        }
    }
}
