use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{role_of, Message, Packet, ProtocolError, Proxy, Role, ShadowTable};
use crate::cost_model::StartOverhead;
use crate::device::DeviceTimeline;
use crate::trace::{ApiCall, ApiClass};
use crate::transport::{Link, LinkEvent, TransportKind};

/// How async requests leave the client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dispatch {
    /// Send each request immediately and keep going.
    OutstandingRequests,
    /// Buffer async requests until `n` accumulate or a sync call flushes.
    Batch(usize),
}

impl fmt::Display for Dispatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dispatch::OutstandingRequests => f.write_str("or"),
            Dispatch::Batch(n) => write!(f, "batch:{n}"),
        }
    }
}

impl FromStr for Dispatch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "or" {
            return Ok(Dispatch::OutstandingRequests);
        }
        let n = s
            .strip_prefix("batch:")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| format!("expected `or` or `batch:N`, got {s:?}"))?;
        if n == 0 {
            return Err("batch size must be at least 1".into());
        }
        Ok(Dispatch::Batch(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallOutcome {
    /// When control returns to the caller.
    pub return_time: f64,
    /// Whether a request was created for the call.
    pub dispatched: bool,
    pub message_seq: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub messages_sent: u64,
    pub packets_sent: u64,
    pub responses: u64,
    pub local_answers: u64,
    pub max_outstanding: usize,
}

/// Client stub, connection and proxy under one simulated clock.
pub struct Session {
    dispatch: Dispatch,
    start: StartOverhead,
    shadows: ShadowTable,
    next_seq: u64,
    buffer: Vec<Message>,
    outstanding: VecDeque<f64>,
    uplink: Link<Packet>,
    downlink: Link<Message>,
    proxy: Proxy,
    packets: Vec<Vec<u64>>,
    requests: Vec<Message>,
    stats: SessionStats,
    closed: bool,
}

impl Session {
    pub fn new(
        transport: TransportKind,
        dispatch: Dispatch,
        start: StartOverhead,
    ) -> Result<Self, ProtocolError> {
        if dispatch == Dispatch::Batch(0) {
            return Err(ProtocolError::InvalidBatch);
        }
        Ok(Session {
            dispatch,
            start,
            shadows: ShadowTable::new(),
            next_seq: 0,
            buffer: Vec::new(),
            outstanding: VecDeque::new(),
            uplink: Link::new(transport.clone()),
            downlink: Link::new(transport),
            proxy: Proxy::new(),
            packets: Vec::new(),
            requests: Vec::new(),
            stats: SessionStats::default(),
            closed: false,
        })
    }

    /// Issues one call at `now` using its effective class.
    pub fn client_call(&mut self, api: &ApiCall, now: f64) -> Result<CallOutcome, ProtocolError> {
        if self.closed {
            return Err(ProtocolError::Closed);
        }
        let result = self.call_inner(api, now);
        if result.is_err() {
            self.closed = true;
        }
        result
    }

    fn call_inner(&mut self, api: &ApiCall, now: f64) -> Result<CallOutcome, ProtocolError> {
        if api.class == ApiClass::Local {
            if role_of(&api.name) == Role::Query {
                let _ = self.shadows.current_device();
            }
            self.stats.local_answers += 1;
            return Ok(CallOutcome {
                return_time: now + api.local_exec_us,
                dispatched: false,
                message_seq: None,
            });
        }
        let msg = self.make_request(api, now);
        let seq = msg.seq;
        let outcome = |return_time| CallOutcome {
            return_time,
            dispatched: true,
            message_seq: Some(seq),
        };
        if api.class == ApiClass::Async {
            return match self.dispatch {
                Dispatch::OutstandingRequests => {
                    let sent = now + self.start.for_api(&msg.api_name);
                    self.send_packet(vec![msg], sent)?;
                    Ok(outcome(sent))
                }
                Dispatch::Batch(n) => {
                    self.buffer.push(msg);
                    if self.buffer.len() >= n {
                        let sent = now + self.buffer_start();
                        self.flush(sent)?;
                        Ok(outcome(sent))
                    } else {
                        Ok(outcome(now))
                    }
                }
            };
        }
        // Sync: rides with whatever is buffered, then blocks on the reply.
        self.buffer.push(msg);
        let sent = now + self.buffer_start();
        let arrival = self.flush(sent)?;
        self.pump(arrival)?;
        let mut replies = self.downlink.deliver(f64::INFINITY);
        let (reply, at) = replies.pop().ok_or(ProtocolError::MissingResponse(seq))?;
        if reply.seq != seq || !replies.is_empty() {
            return Err(ProtocolError::SeqMismatch {
                expected: seq,
                got: reply.seq,
            });
        }
        self.stats.responses += 1;
        Ok(outcome(at))
    }

    fn make_request(&mut self, api: &ApiCall, now: f64) -> Message {
        let seq = self.next_seq;
        self.next_seq += 1;
        let mut msg = Message::request(seq, api.name.clone(), api.class);
        match role_of(&api.name) {
            Role::Create(kind) => msg.new_shadow_id = Some(self.shadows.mint(kind, seq)),
            Role::Destroy(kind) => msg.shadow_refs.extend(self.shadows.release_latest(kind)),
            Role::Use => msg.shadow_refs = self.shadows.recent(2),
            Role::Query | Role::Plain => {}
        }
        msg.payload_len = api.payload_req;
        msg.issue_timestamp = now;
        msg.device_time_us = api.gpu_exec_us;
        if api.class == ApiClass::Sync {
            msg.response_len = api.payload_resp;
        }
        msg
    }

    fn buffer_start(&self) -> f64 {
        self.buffer
            .iter()
            .map(|m| self.start.for_api(&m.api_name))
            .fold(0.0, f64::max)
    }

    fn flush(&mut self, at: f64) -> Result<f64, ProtocolError> {
        let messages = std::mem::take(&mut self.buffer);
        self.send_packet(messages, at)
    }

    fn send_packet(&mut self, messages: Vec<Message>, at: f64) -> Result<f64, ProtocolError> {
        let packet = Packet { messages };
        let asyncs = packet.messages.iter().filter(|m| m.class == ApiClass::Async).count();
        self.stats.messages_sent += packet.messages.len() as u64;
        self.stats.packets_sent += 1;
        self.packets.push(packet.messages.iter().map(|m| m.seq).collect());
        self.requests.extend(packet.messages.iter().cloned());
        let len = packet.payload_len();
        let arrival = self.uplink.send(packet, len, at)?;
        while self.outstanding.front().is_some_and(|&a| a <= at) {
            self.outstanding.pop_front();
        }
        self.outstanding.extend(std::iter::repeat_n(arrival, asyncs));
        self.stats.max_outstanding = self.stats.max_outstanding.max(self.outstanding.len());
        Ok(arrival)
    }

    /// Lets the proxy process everything that has arrived by `until`.
    fn pump(&mut self, until: f64) -> Result<(), ProtocolError> {
        for (packet, arrival) in self.uplink.deliver(until) {
            for msg in &packet.messages {
                if let Some(reply) = self.proxy.handle(msg, arrival)? {
                    let len = reply.payload_len;
                    let at = reply.issue_timestamp;
                    self.downlink.send(reply, len, at)?;
                }
            }
        }
        Ok(())
    }

    /// Sends anything still buffered at `now` and drains the connection.
    pub fn close(&mut self, now: f64) -> Result<(), ProtocolError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        if !self.buffer.is_empty() {
            let sent = now + self.buffer_start();
            self.flush(sent)?;
        }
        self.pump(f64::INFINITY)?;
        self.stats.responses += self.downlink.deliver(f64::INFINITY).len() as u64;
        Ok(())
    }

    pub fn device(&self) -> &DeviceTimeline {
        self.proxy.device()
    }

    pub fn device_mut(&mut self) -> &mut DeviceTimeline {
        self.proxy.device_mut()
    }

    pub fn proxy(&self) -> &Proxy {
        &self.proxy
    }

    pub fn shadows(&self) -> &ShadowTable {
        &self.shadows
    }

    /// Request seqs grouped by the packet that carried them.
    pub fn packets(&self) -> &[Vec<u64>] {
        &self.packets
    }

    /// Every request sent, in send order.
    pub fn requests(&self) -> &[Message] {
        &self.requests
    }

    pub fn stats(&self) -> SessionStats {
        self.stats
    }

    pub fn uplink_events(&self) -> &[LinkEvent] {
        self.uplink.events()
    }

    pub fn downlink_events(&self) -> &[LinkEvent] {
        self.downlink.events()
    }

    /// Packets sent but not yet handed to the proxy.
    pub fn in_flight(&self) -> usize {
        self.uplink.in_flight()
    }
}

/// The packet plan batching produces for a call sequence: groups of call
/// seqs. Local calls send nothing; a sync call joins and flushes the
/// pending batch; leftovers are flushed at the end.
pub fn batch_dispatch(calls: &[ApiCall], n: usize) -> Vec<Vec<u64>> {
    let n = n.max(1);
    let mut out = Vec::new();
    let mut pending = Vec::new();
    for call in calls {
        match call.class {
            ApiClass::Local => continue,
            ApiClass::Async => {
                pending.push(call.seq);
                if pending.len() >= n {
                    out.push(std::mem::take(&mut pending));
                }
            }
            ApiClass::Sync => {
                pending.push(call.seq);
                out.push(std::mem::take(&mut pending));
            }
        }
    }
    if !pending.is_empty() {
        out.push(pending);
    }
    out
}
