//! Binary framing.
//!
//! ```text
//! kind:u8 seq:u64 name_len:u16 n_refs:u16 payload_len:u64 timestamp:f64
//! name bytes | n_refs x u64 shadow ids | payload bytes
//! ```
//!
//! Little-endian, 29-byte header. The kind byte packs bit 0 = response,
//! bits 1-2 = class (0 async, 1 sync, 2 local) and bit 3 = creates a
//! resource, in which case the new shadow id is the last ref.
//!
//! Message logs are sequences of frames with the payload bytes elided;
//! `payload_len` is kept.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{Message, MessageKind, ShadowId};
use crate::trace::ApiClass;

pub const HEADER_LEN: usize = 29;

const RESPONSE_BIT: u8 = 0b0001;
const CLASS_SHIFT: u8 = 1;
const CLASS_MASK: u8 = 0b0110;
const CREATES_BIT: u8 = 0b1000;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("bad kind byte {0:#04x}")]
    BadKind(u8),
    #[error("api name is not UTF-8")]
    BadName,
    #[error("{0} too long for its length field")]
    TooLong(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    /// Zero-filled payload bytes follow the refs.
    Include,
    Elide,
}

fn class_bits(class: ApiClass) -> u8 {
    (class.index() as u8) << CLASS_SHIFT
}

pub fn encode(msg: &Message, payload: Payload) -> Result<Vec<u8>, WireError> {
    let name = msg.api_name.as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| WireError::TooLong("name"))?;
    let mut refs = msg.shadow_refs.clone();
    refs.extend(msg.new_shadow_id);
    let n_refs = u16::try_from(refs.len()).map_err(|_| WireError::TooLong("ref list"))?;
    let mut kind = class_bits(msg.class);
    if msg.kind == MessageKind::Response {
        kind |= RESPONSE_BIT;
    }
    if msg.new_shadow_id.is_some() {
        kind |= CREATES_BIT;
    }
    let body = match payload {
        Payload::Include => msg.payload_len as usize,
        Payload::Elide => 0,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + name.len() + 8 * refs.len() + body);
    out.push(kind);
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(&n_refs.to_le_bytes());
    out.extend_from_slice(&msg.payload_len.to_le_bytes());
    out.extend_from_slice(&msg.issue_timestamp.to_le_bytes());
    out.extend_from_slice(name);
    for r in refs {
        out.extend_from_slice(&r.0.to_le_bytes());
    }
    out.resize(out.len() + body, 0);
    Ok(out)
}

fn take<'a>(buf: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8], WireError> {
    let end = *at + n;
    if end > buf.len() {
        return Err(WireError::Truncated {
            need: end,
            have: buf.len(),
        });
    }
    let s = &buf[*at..end];
    *at = end;
    Ok(s)
}

fn u64_at(buf: &[u8], at: &mut usize) -> Result<u64, WireError> {
    Ok(u64::from_le_bytes(take(buf, at, 8)?.try_into().expect("8 bytes")))
}

fn u16_at(buf: &[u8], at: &mut usize) -> Result<u16, WireError> {
    Ok(u16::from_le_bytes(take(buf, at, 2)?.try_into().expect("2 bytes")))
}

/// Decodes one frame; returns the message and the bytes consumed.
pub fn decode(buf: &[u8], payload: Payload) -> Result<(Message, usize), WireError> {
    let mut at = 0;
    let kind = take(buf, &mut at, 1)?[0];
    if kind & !(RESPONSE_BIT | CLASS_MASK | CREATES_BIT) != 0 {
        return Err(WireError::BadKind(kind));
    }
    let class = match (kind & CLASS_MASK) >> CLASS_SHIFT {
        0 => ApiClass::Async,
        1 => ApiClass::Sync,
        2 => ApiClass::Local,
        _ => return Err(WireError::BadKind(kind)),
    };
    let seq = u64_at(buf, &mut at)?;
    let name_len = u16_at(buf, &mut at)? as usize;
    let n_refs = u16_at(buf, &mut at)? as usize;
    let payload_len = u64_at(buf, &mut at)?;
    let issue_timestamp = f64::from_bits(u64_at(buf, &mut at)?);
    let name = std::str::from_utf8(take(buf, &mut at, name_len)?).map_err(|_| WireError::BadName)?;
    let mut refs = Vec::with_capacity(n_refs);
    for _ in 0..n_refs {
        refs.push(ShadowId(u64_at(buf, &mut at)?));
    }
    let new_shadow_id = if kind & CREATES_BIT != 0 {
        Some(refs.pop().ok_or(WireError::BadKind(kind))?)
    } else {
        None
    };
    if payload == Payload::Include {
        take(buf, &mut at, payload_len as usize)?;
    }
    let mut msg = Message::request(seq, name, class);
    msg.kind = if kind & RESPONSE_BIT != 0 {
        MessageKind::Response
    } else {
        MessageKind::Request
    };
    msg.shadow_refs = refs;
    msg.new_shadow_id = new_shadow_id;
    msg.payload_len = payload_len;
    msg.issue_timestamp = issue_timestamp;
    Ok((msg, at))
}

pub fn write_log<W: Write>(messages: &[Message], mut out: W) -> Result<(), WireError> {
    for m in messages {
        out.write_all(&encode(m, Payload::Elide)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_log<R: Read>(mut input: R) -> Result<Vec<Message>, WireError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let mut out = Vec::new();
    let mut at = 0;
    while at < buf.len() {
        let (msg, used) = decode(&buf[at..], Payload::Elide)?;
        out.push(msg);
        at += used;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Message {
        let mut m = Message::request(9, "ConvolutionForward", ApiClass::Async);
        m.shadow_refs = vec![ShadowId(1), ShadowId(4)];
        m.payload_len = 5;
        m.issue_timestamp = 12.25;
        m
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample(), Payload::Include).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 18 + 16 + 5);
        assert_eq!(bytes[0], 0);
        assert_eq!(&bytes[1..9], &9u64.to_le_bytes());
        assert_eq!(&bytes[9..11], &18u16.to_le_bytes());
        assert_eq!(&bytes[11..13], &2u16.to_le_bytes());
        assert_eq!(&bytes[13..21], &5u64.to_le_bytes());
        assert_eq!(&bytes[21..29], &12.25f64.to_le_bytes());
    }

    #[test]
    fn round_trip_with_new_id() {
        let mut m = Message::request(3, "Malloc", ApiClass::Async);
        m.new_shadow_id = Some(ShadowId(7));
        let r = Message::response_to(&sample(), 99.0);
        for msg in [sample(), m, r] {
            for mode in [Payload::Include, Payload::Elide] {
                let bytes = encode(&msg, mode).unwrap();
                let (back, used) = decode(&bytes, mode).unwrap();
                assert_eq!(used, bytes.len());
                assert_eq!(back, Message { device_time_us: 0.0, response_len: 0, ..msg.clone() });
            }
        }
    }

    #[test]
    fn truncated_and_bad_kind() {
        let bytes = encode(&sample(), Payload::Include).unwrap();
        assert!(matches!(decode(&bytes[..20], Payload::Include), Err(WireError::Truncated { .. })));
        let mut bad = bytes.clone();
        bad[0] = 0x80;
        assert!(matches!(decode(&bad, Payload::Include), Err(WireError::BadKind(0x80))));
    }

    #[test]
    fn log_round_trip() {
        let msgs = vec![sample(), Message::response_to(&sample(), 1.0)];
        let mut buf = Vec::new();
        write_log(&msgs, &mut buf).unwrap();
        let back = read_log(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].shadow_refs, msgs[0].shadow_refs);
        assert_eq!(back[1].kind, MessageKind::Response);
    }
}
