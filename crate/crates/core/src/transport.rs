//! FIFO message links with an ideal and an emulated backend.
//!
//! The emulated backend assigns every message an expected arrival time:
//! the message waits for the link to finish serializing earlier traffic,
//! serializes at the configured bandwidth, then propagates for half the
//! RTT. Pending messages sit in a priority queue keyed by
//! `(arrival, send order)` until [`Link::deliver`] hands them over.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::NetworkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TransportKind {
    Ideal,
    Emulated(NetworkConfig),
}

#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    #[error("send at {now} precedes previous send at {last}")]
    NonMonotonicSend { now: f64, last: f64 },
}

/// One row of the transport event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkEvent {
    pub seq: u64,
    pub send_time: f64,
    pub serialize_start: f64,
    pub arrival_time: f64,
}

struct Pending<M> {
    arrival: f64,
    send_seq: u64,
    msg: M,
}

impl<M> PartialEq for Pending<M> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<M> Eq for Pending<M> {}

impl<M> PartialOrd for Pending<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<M> Ord for Pending<M> {
    // Reversed: BinaryHeap is a max-heap.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .arrival
            .total_cmp(&self.arrival)
            .then(other.send_seq.cmp(&self.send_seq))
    }
}

/// One direction of a connection.
pub struct Link<M> {
    kind: TransportKind,
    busy_until: f64,
    last_send: f64,
    next_seq: u64,
    delivered: u64,
    pending: BinaryHeap<Pending<M>>,
    events: Vec<LinkEvent>,
}

impl<M> Link<M> {
    pub fn new(kind: TransportKind) -> Self {
        Link {
            kind,
            busy_until: 0.0,
            last_send: f64::NEG_INFINITY,
            next_seq: 0,
            delivered: 0,
            pending: BinaryHeap::new(),
            events: Vec::new(),
        }
    }

    pub fn kind(&self) -> &TransportKind {
        &self.kind
    }

    pub fn busy_until(&self) -> f64 {
        self.busy_until
    }

    /// Queues `msg` and returns its arrival time.
    pub fn send(&mut self, msg: M, payload_len: u64, now: f64) -> Result<f64, TransportError> {
        if now < self.last_send {
            return Err(TransportError::NonMonotonicSend {
                now,
                last: self.last_send,
            });
        }
        self.last_send = now;
        let (serialize_start, arrival) = match &self.kind {
            TransportKind::Ideal => (now, now),
            TransportKind::Emulated(net) => {
                let start = now.max(self.busy_until);
                if payload_len > 0 {
                    self.busy_until = start + payload_len as f64 / net.bandwidth;
                    (start, self.busy_until + net.rtt_us / 2.0)
                } else {
                    (start, start + net.rtt_us / 2.0)
                }
            }
        };
        let seq = self.next_seq;
        self.next_seq += 1;
        self.events.push(LinkEvent {
            seq,
            send_time: now,
            serialize_start,
            arrival_time: arrival,
        });
        self.pending.push(Pending {
            arrival,
            send_seq: seq,
            msg,
        });
        Ok(arrival)
    }

    /// Removes and returns every message with `arrival <= until`, in
    /// arrival order, ties in send order.
    pub fn deliver(&mut self, until: f64) -> Vec<(M, f64)> {
        let mut out = Vec::new();
        while self.pending.peek().is_some_and(|p| p.arrival <= until) {
            let p = self.pending.pop().expect("peeked");
            out.push((p.msg, p.arrival));
        }
        self.delivered += out.len() as u64;
        out
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    pub fn sent(&self) -> u64 {
        self.next_seq
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn events(&self) -> &[LinkEvent] {
        &self.events
    }
}

pub fn write_events_csv<W: Write>(events: &[LinkEvent], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
