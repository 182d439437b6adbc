//! The remoting engine.
//!
//! A [`Session`] joins a client stub and a [`Proxy`] through two FIFO
//! [`Link`](crate::transport::Link)s. The client sends async requests as
//! outstanding requests (or buffers them in batching mode), mints shadow
//! ids for resource-creating calls so those never wait for the proxy, and
//! answers local calls from its [`ShadowTable`]. The proxy remaps shadow
//! ids to real ids through its [`IdMap`] before submitting work to the
//! mock device, and faults on any reference it cannot resolve.

mod message;
mod proxy;
mod session;
mod shadow;
pub mod wire;

use thiserror::Error;

use crate::device::DeviceError;
use crate::transport::TransportError;

pub use message::{Message, MessageKind, Packet};
pub use proxy::{replay_log, Proxy};
pub use session::{batch_dispatch, CallOutcome, Dispatch, Session, SessionStats};
pub use shadow::{role_of, IdMap, Role, ShadowId, ShadowResource, ShadowTable};

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("request {seq} references unmapped shadow id {id}")]
    UnmappedShadow { seq: u64, id: ShadowId },
    #[error("request {seq} re-creates shadow id {id}")]
    DuplicateShadow { seq: u64, id: ShadowId },
    #[error("request {got} delivered after request {last}")]
    FifoViolation { last: u64, got: u64 },
    #[error("response {got} does not answer request {expected}")]
    SeqMismatch { expected: u64, got: u64 },
    #[error("no response for request {0}")]
    MissingResponse(u64),
    #[error("batch size must be at least 1")]
    InvalidBatch,
    #[error("session closed")]
    Closed,
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}
