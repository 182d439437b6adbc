use serde::{Deserialize, Serialize};

use super::ShadowId;
use crate::trace::ApiClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MessageKind {
    Request,
    Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub kind: MessageKind,
    /// Per-connection ordinal; a response echoes its request's seq.
    pub seq: u64,
    pub api_name: String,
    pub class: ApiClass,
    pub shadow_refs: Vec<ShadowId>,
    pub new_shadow_id: Option<ShadowId>,
    pub payload_len: u64,
    pub issue_timestamp: f64,
    /// Simulation only: device time the request costs. Not on the wire.
    #[serde(skip)]
    pub device_time_us: f64,
    /// Simulation only: size of the response a sync request produces.
    #[serde(skip)]
    pub response_len: u64,
}

impl Message {
    pub fn request(seq: u64, api_name: impl Into<String>, class: ApiClass) -> Self {
        Message {
            kind: MessageKind::Request,
            seq,
            api_name: api_name.into(),
            class,
            shadow_refs: Vec::new(),
            new_shadow_id: None,
            payload_len: 0,
            issue_timestamp: 0.0,
            device_time_us: 0.0,
            response_len: 0,
        }
    }

    pub fn response_to(req: &Message, at: f64) -> Self {
        Message {
            kind: MessageKind::Response,
            seq: req.seq,
            api_name: req.api_name.clone(),
            class: req.class,
            shadow_refs: Vec::new(),
            new_shadow_id: None,
            payload_len: req.response_len,
            issue_timestamp: at,
            device_time_us: 0.0,
            response_len: 0,
        }
    }
}

/// What goes over the link in one send: one message, or a batch.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Packet {
    pub messages: Vec<Message>,
}

impl Packet {
    pub fn payload_len(&self) -> u64 {
        self.messages.iter().map(|m| m.payload_len).sum()
    }
}
