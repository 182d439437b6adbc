//! A laboratory for GPU API remoting.
//!
//! The crate models an application's GPU API stream as a [`trace::Trace`],
//! prices it under a network configuration with an analytic remoting cost
//! model ([`cost_model`]), searches for the loosest network that keeps the
//! remoting overhead inside a budget ([`solver`]) and replays traces through
//! a simulated client stub / proxy / device stack ([`protocol`],
//! [`transport`], [`device`], [`replay`]) to cross-check the model.
//!
//! Time is measured in microseconds (`f64`) and sizes in bytes (`u64`)
//! throughout. Bandwidth is bytes per microsecond; `1 Gbps == 125 B/us`.

pub mod cost_model;
pub mod device;
pub mod profiles;
pub mod protocol;
pub mod replay;
pub mod solver;
pub mod trace;
pub mod transport;

pub use cost_model::{CostBreakdown, NetworkConfig, StartOverhead};
pub use replay::{Dispatch, ReplayOptions, ReplayResult};
pub use solver::{Budget, Grid, RequirementFrontier};
pub use trace::{ApiCall, ApiClass, Trace, TraceSummary};
pub use transport::TransportKind;

/// Bytes per microsecond carried by one gigabit per second.
pub const BYTES_PER_US_PER_GBPS: f64 = 125.0;

/// Converts a bandwidth in Gbps to bytes per microsecond.
pub fn gbps_to_bytes_per_us(gbps: f64) -> f64 {
    gbps * BYTES_PER_US_PER_GBPS
}

/// Converts a bandwidth in bytes per microsecond to Gbps.
pub fn bytes_per_us_to_gbps(bw: f64) -> f64 {
    bw / BYTES_PER_US_PER_GBPS
}
