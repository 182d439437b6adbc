//! API traces: ingestion, validation, shadow-resource reclassification and
//! per-class summaries.

mod io;
mod summary;
pub mod synth;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_trace, parse_trace, write_trace};
pub use summary::{summarize, ClassTotals, TraceSummary};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: field `{field}` {message}")]
    Field {
        line: usize,
        field: &'static str,
        message: String,
    },
    #[error("call {seq}: field `{field}` {message}")]
    Invalid {
        seq: u64,
        field: &'static str,
        message: String,
    },
    #[error("infeasible profile: {0}")]
    Profile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Remoting class of an API call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiClass {
    Async,
    Sync,
    Local,
}

impl ApiClass {
    pub const ALL: [ApiClass; 3] = [ApiClass::Async, ApiClass::Sync, ApiClass::Local];

    pub fn as_str(self) -> &'static str {
        match self {
            ApiClass::Async => "async",
            ApiClass::Sync => "sync",
            ApiClass::Local => "local",
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            ApiClass::Async => 0,
            ApiClass::Sync => 1,
            ApiClass::Local => 2,
        }
    }
}

impl fmt::Display for ApiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApiClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "async" => Ok(ApiClass::Async),
            "sync" => Ok(ApiClass::Sync),
            "local" => Ok(ApiClass::Local),
            other => Err(format!("unknown class {other:?}")),
        }
    }
}

/// One recorded GPU API invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCall {
    pub seq: u64,
    pub name: String,
    /// Class without shadow resources applied.
    pub base_class: ApiClass,
    /// Class after shadow-resource conversion, if it differs.
    pub sr_class: Option<ApiClass>,
    /// Effective class, as resolved by [`apply_sr`]. Equal to `base_class`
    /// for freshly loaded traces.
    pub class: ApiClass,
    pub payload_req: u64,
    /// Response bytes; only transferred when the effective class is sync.
    pub payload_resp: u64,
    /// Time(api): execution time against the real device.
    pub gpu_exec_us: f64,
    /// Time_local(api): execution time against the shadow state.
    pub local_exec_us: f64,
    /// CPU think time between the previous call's return and this issue.
    pub cpu_gap_us: f64,
}

impl ApiCall {
    pub fn new(name: impl Into<String>, class: ApiClass) -> Self {
        ApiCall {
            seq: 0,
            name: name.into(),
            base_class: class,
            sr_class: None,
            class,
            payload_req: 0,
            payload_resp: 0,
            gpu_exec_us: 0.0,
            local_exec_us: 0.0,
            cpu_gap_us: 0.0,
        }
    }

    pub fn with_sr(mut self, sr: ApiClass) -> Self {
        self.sr_class = Some(sr);
        self
    }

    pub fn with_payload(mut self, req: u64, resp: u64) -> Self {
        self.payload_req = req;
        self.payload_resp = resp;
        self
    }

    pub fn with_exec(mut self, gpu_us: f64, local_us: f64) -> Self {
        self.gpu_exec_us = gpu_us;
        self.local_exec_us = local_us;
        self
    }

    pub fn with_gap(mut self, gap_us: f64) -> Self {
        self.cpu_gap_us = gap_us;
        self
    }

    /// Checks the per-call invariants.
    pub fn validate(&self) -> Result<(), TraceError> {
        let invalid = |field, message: &str| TraceError::Invalid {
            seq: self.seq,
            field,
            message: message.to_string(),
        };
        if self.name.is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        for (field, v) in [
            ("gpu_exec_us", self.gpu_exec_us),
            ("local_exec_us", self.local_exec_us),
            ("cpu_gap_us", self.cpu_gap_us),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        match (self.base_class, self.sr_class) {
            (ApiClass::Local, Some(_)) => {
                return Err(invalid("sr_class", "must be absent when class is local"))
            }
            (_, Some(ApiClass::Sync)) => {
                return Err(invalid("sr_class", "must be async or local"))
            }
            _ => {}
        }
        let reachable = self.class == self.base_class || Some(self.class) == self.sr_class;
        if !reachable {
            return Err(invalid("class", "effective class not reachable from base/sr classes"));
        }
        Ok(())
    }
}

/// Descriptive metadata carried in a trace header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub app: Option<String>,
    pub batch_size: Option<u32>,
    pub source: Option<String>,
}

/// An ordered, validated sequence of API calls.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    calls: Vec<ApiCall>,
    pub meta: TraceMeta,
}

impl Trace {
    /// Builds a trace, renumbering `seq` densely in the given order.
    pub fn from_calls(mut calls: Vec<ApiCall>, meta: TraceMeta) -> Result<Self, TraceError> {
        for (i, call) in calls.iter_mut().enumerate() {
            call.seq = i as u64;
            call.validate()?;
        }
        Ok(Trace { calls, meta })
    }

    pub fn empty() -> Self {
        Trace::default()
    }

    pub fn calls(&self) -> &[ApiCall] {
        &self.calls
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn into_calls(self) -> Vec<ApiCall> {
        self.calls
    }

    /// Number of calls per effective class, in `[async, sync, local]` order.
    pub fn class_counts(&self) -> [u64; 3] {
        let mut counts = [0u64; 3];
        for c in &self.calls {
            counts[c.class.index()] += 1;
        }
        counts
    }

    /// Appends a zero-cost synchronous barrier unless the trace already
    /// ends with a sync call, so that results are read back at the end.
    pub fn with_trailing_barrier(&self) -> Trace {
        let mut out = self.clone();
        if out.calls.last().map(|c| c.class) != Some(ApiClass::Sync) {
            let mut barrier = ApiCall::new(BARRIER_NAME, ApiClass::Sync);
            barrier.seq = out.calls.len() as u64;
            out.calls.push(barrier);
        }
        out
    }
}

/// API name used for the appended end-of-trace barrier.
pub const BARRIER_NAME: &str = "DeviceSynchronize";

/// Resolves effective classes with shadow resources on or off.
pub fn apply_sr(trace: &Trace, enabled: bool) -> Trace {
    resolve_classes(trace, enabled, enabled)
}

/// Resolves effective classes with separate switches for shadow resources
/// and locality. Conversions to Local are only taken with locality on.
pub fn resolve_classes(trace: &Trace, sr: bool, locality: bool) -> Trace {
    let mut out = trace.clone();
    for call in &mut out.calls {
        call.class = effective_class(call, sr, locality);
    }
    out
}

fn effective_class(call: &ApiCall, sr: bool, locality: bool) -> ApiClass {
    if !sr {
        return call.base_class;
    }
    match call.sr_class {
        Some(ApiClass::Local) if !locality => call.base_class,
        Some(c) => c,
        None => call.base_class,
    }
}

/// SR conversion for the CUDA API names the remoting design discusses.
/// Unknown names are not convertible.
pub fn default_sr_class(name: &str) -> Option<ApiClass> {
    match name {
        "Malloc" | "CreateTensorDescriptor" => Some(ApiClass::Async),
        "GetDevice" => Some(ApiClass::Local),
        _ => None,
    }
}

/// Fills missing `sr_class` flags of sync calls from [`default_sr_class`].
/// Explicit flags are left untouched.
pub fn annotate_default_sr(trace: &Trace) -> Trace {
    let mut out = trace.clone();
    for call in &mut out.calls {
        if call.sr_class.is_none() && call.base_class == ApiClass::Sync {
            call.sr_class = default_sr_class(&call.name);
        }
    }
    out
}
