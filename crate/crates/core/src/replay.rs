//! Discrete-event replay of traces.
//!
//! [`replay_local`] runs a trace against the device with no remoting: the
//! CPU waits out each call's device time. [`replay_remote`] drives the same
//! trace through a [`Session`] under chosen protocol options and transport.
//! Both append a zero-cost `DeviceSynchronize` when the trace does not end
//! with a sync call, so that measured time includes reading results back.
//! [`compare_model`] sets the replayed degradation against the analytic
//! cost model on identical inputs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost_model::{total_cost, CostBreakdown, NetworkConfig, StartOverhead};
use crate::device::{DeviceTimeline, ExecRecord};
use crate::protocol::{ProtocolError, Session};
use crate::trace::{resolve_classes, ApiClass, Trace};
use crate::transport::{LinkEvent, TransportKind};

pub use crate::protocol::Dispatch;

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("invalid replay options: {0}")]
    InvalidOptions(String),
    #[error("protocol fault: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("model comparison needs a positive baseline, got {0}")]
    Baseline(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayOptions {
    pub sr: bool,
    pub locality: bool,
    pub dispatch: Dispatch,
    pub transport: TransportKind,
    pub start: StartOverhead,
}

impl ReplayOptions {
    /// All optimizations on, outstanding requests, over `net`.
    pub fn emulated(net: &NetworkConfig) -> Self {
        ReplayOptions {
            sr: true,
            locality: true,
            dispatch: Dispatch::OutstandingRequests,
            transport: TransportKind::Emulated(net.clone()),
            start: net.start.clone(),
        }
    }

    pub fn ideal() -> Self {
        ReplayOptions {
            sr: true,
            locality: true,
            dispatch: Dispatch::OutstandingRequests,
            transport: TransportKind::Ideal,
            start: StartOverhead::default(),
        }
    }

    pub fn with_dispatch(mut self, dispatch: Dispatch) -> Self {
        self.dispatch = dispatch;
        self
    }

    pub fn with_sr(mut self, sr: bool, locality: bool) -> Self {
        self.sr = sr;
        self.locality = locality;
        self
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        if self.locality && !self.sr {
            return Err(ReplayError::InvalidOptions("locality requires sr".into()));
        }
        if self.dispatch == Dispatch::Batch(0) {
            return Err(ReplayError::InvalidOptions("batch size must be at least 1".into()));
        }
        if let TransportKind::Emulated(net) = &self.transport {
            net.validate()
                .map_err(|e| ReplayError::InvalidOptions(e.to_string()))?;
        }
        Ok(())
    }

    /// The network the analytic model should price these options with.
    pub fn network(&self) -> NetworkConfig {
        let base = match &self.transport {
            TransportKind::Ideal => NetworkConfig::ideal(),
            TransportKind::Emulated(net) => net.clone(),
        };
        base.with_start(self.start.clone())
    }

    /// The trace with effective classes as these options resolve them and
    /// the trailing barrier appended.
    pub fn prepare(&self, trace: &Trace) -> Trace {
        resolve_classes(trace, self.sr, self.locality).with_trailing_barrier()
    }
}

/// Protocol and harness invariants checked on a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Device executed requests in client issue order.
    pub fifo_device_order: bool,
    /// Every message was delivered, in send order, exactly once.
    pub link_fifo: bool,
    /// No device operation ran with an unresolved reference.
    pub shadow_sound: bool,
    /// Messages sent equals the number of non-local calls.
    pub locality_silence: bool,
    /// Async calls returned after their start overhead only.
    pub or_liveness: bool,
    /// Device busy time equals the summed device time of what it ran.
    pub busy_conserved: bool,
    /// End-to-end time covers the device's busy time.
    pub end_covers_busy: bool,
}

impl InvariantReport {
    fn all_true() -> Self {
        InvariantReport {
            fifo_device_order: true,
            link_fifo: true,
            shadow_sound: true,
            locality_silence: true,
            or_liveness: true,
            busy_conserved: true,
            end_covers_busy: true,
        }
    }

    pub fn all_hold(&self) -> bool {
        *self == Self::all_true()
    }

    pub fn violations(&self) -> Vec<&'static str> {
        let checks = [
            ("fifo_device_order", self.fifo_device_order),
            ("link_fifo", self.link_fifo),
            ("shadow_sound", self.shadow_sound),
            ("locality_silence", self.locality_silence),
            ("or_liveness", self.or_liveness),
            ("busy_conserved", self.busy_conserved),
            ("end_covers_busy", self.end_covers_busy),
        ];
        checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResult {
    pub end_to_end_us: f64,
    pub device_busy_us: f64,
    /// Calls replayed, including an appended barrier.
    pub calls: usize,
    /// Per call: when it reached the device, if it did.
    pub device_submit_us: Vec<Option<f64>>,
    /// Per call: remote device submit time minus local device submit time.
    pub arrival_delays_us: Vec<Option<f64>>,
    /// Per call: when control returned to the CPU.
    pub return_us: Vec<f64>,
    pub message_count: u64,
    pub packet_count: u64,
    pub max_outstanding: usize,
    pub invariants: InvariantReport,
    #[serde(skip)]
    pub device_log: Vec<ExecRecord>,
    #[serde(skip)]
    pub link_events: Vec<LinkEvent>,
    /// Packets as groups of call seqs.
    #[serde(skip)]
    pub packets: Vec<Vec<u64>>,
}

impl ReplayResult {
    pub fn total_arrival_delay_us(&self) -> f64 {
        self.arrival_delays_us.iter().flatten().sum()
    }
}

/// Local execution: every call runs on the device and the CPU waits for it.
pub fn replay_local(trace: &Trace) -> ReplayResult {
    let trace = trace.with_trailing_barrier();
    let mut device = DeviceTimeline::new();
    let mut now = 0.0;
    let mut submits = Vec::with_capacity(trace.len());
    let mut returns = Vec::with_capacity(trace.len());
    for call in trace.calls() {
        now += call.cpu_gap_us;
        submits.push(Some(now));
        now = device
            .submit(&call.name, call.seq, call.gpu_exec_us, now, &[])
            .expect("local submissions are ordered and reference nothing");
        returns.push(now);
    }
    let mut log = device.log().to_vec();
    for r in &mut log {
        r.delay_vs_local = Some(0.0);
    }
    ReplayResult {
        end_to_end_us: now,
        device_busy_us: device.busy_total(),
        calls: trace.len(),
        arrival_delays_us: vec![Some(0.0); trace.len()],
        device_submit_us: submits,
        return_us: returns,
        message_count: 0,
        packet_count: 0,
        max_outstanding: 0,
        invariants: InvariantReport::all_true(),
        device_log: log,
        link_events: Vec::new(),
        packets: Vec::new(),
    }
}

/// Remote execution through the protocol stack.
pub fn replay_remote(trace: &Trace, opts: &ReplayOptions) -> Result<ReplayResult, ReplayError> {
    opts.validate()?;
    let prepared = opts.prepare(trace);
    let local = replay_local(&prepared);
    let mut session = Session::new(opts.transport.clone(), opts.dispatch, opts.start.clone())?;
    let calls = prepared.calls();
    let mut now = 0.0;
    let mut call_of_msg = Vec::with_capacity(calls.len());
    let mut returns = Vec::with_capacity(calls.len());
    let mut or_liveness = true;
    for call in calls {
        now += call.cpu_gap_us;
        let out = session.client_call(call, now)?;
        if call.class == ApiClass::Async && opts.dispatch == Dispatch::OutstandingRequests {
            or_liveness &= out.return_time == now + opts.start.for_api(&call.name);
        }
        if let Some(seq) = out.message_seq {
            debug_assert_eq!(seq as usize, call_of_msg.len());
            call_of_msg.push(call.seq);
        }
        now = out.return_time;
        returns.push(now);
    }
    session.close(now)?;

    let stats = session.stats();
    let non_local = calls.iter().filter(|c| c.class != ApiClass::Local).count() as u64;
    let mut device_submit = vec![None; calls.len()];
    let mut delays = vec![None; calls.len()];
    let mut fifo = session.device().log().len() == call_of_msg.len();
    let mut expected_busy = 0.0;
    let mut last_seq = None;
    for rec in session.device_mut().log_mut() {
        let call_idx = call_of_msg[rec.seq as usize] as usize;
        fifo &= last_seq.is_none_or(|l| rec.seq == l + 1) && (last_seq.is_some() || rec.seq == 0);
        last_seq = Some(rec.seq);
        expected_busy += calls[call_idx].gpu_exec_us;
        let delay = rec.submit - local.device_submit_us[call_idx].expect("local runs every call");
        rec.delay_vs_local = Some(delay);
        device_submit[call_idx] = Some(rec.submit);
        delays[call_idx] = Some(delay);
    }
    let events = session.uplink_events().to_vec();
    let link_fifo = session.in_flight() == 0
        && events
            .windows(2)
            .all(|w| w[0].arrival_time <= w[1].arrival_time && w[0].seq < w[1].seq);
    let device = session.device();
    let busy = device.busy_total();
    let packets = session
        .packets()
        .iter()
        .map(|p| p.iter().map(|&m| call_of_msg[m as usize]).collect())
        .collect();
    Ok(ReplayResult {
        end_to_end_us: now,
        device_busy_us: busy,
        calls: calls.len(),
        device_submit_us: device_submit,
        arrival_delays_us: delays,
        return_us: returns,
        message_count: stats.messages_sent,
        packet_count: stats.packets_sent,
        max_outstanding: stats.max_outstanding,
        invariants: InvariantReport {
            fifo_device_order: fifo,
            link_fifo,
            shadow_sound: session.proxy().handled() == stats.messages_sent,
            locality_silence: stats.messages_sent == non_local,
            or_liveness,
            busy_conserved: busy == expected_busy,
            end_covers_busy: now >= busy,
        },
        device_log: device.log().to_vec(),
        link_events: events,
        packets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub baseline_us: f64,
    pub local_end_us: f64,
    pub remote_end_us: f64,
    pub replay_degradation: f64,
    pub model_degradation: f64,
    /// `replay_degradation - model_degradation`.
    pub gap: f64,
    pub model: CostBreakdown,
    pub replay: ReplayResult,
}

/// Replays under outstanding requests and prices the same prepared trace
/// with the cost model. The baseline defaults to the local replay time.
pub fn compare_model(
    trace: &Trace,
    opts: &ReplayOptions,
    baseline_us: Option<f64>,
) -> Result<ModelComparison, ReplayError> {
    if opts.dispatch != Dispatch::OutstandingRequests {
        return Err(ReplayError::InvalidOptions(
            "model comparison requires outstanding-request dispatch".into(),
        ));
    }
    let remote = replay_remote(trace, opts)?;
    let local_end = replay_local(trace).end_to_end_us;
    let baseline = baseline_us.unwrap_or(local_end);
    if !(baseline > 0.0) || !baseline.is_finite() {
        return Err(ReplayError::Baseline(baseline));
    }
    let model = total_cost(&opts.prepare(trace), &opts.network());
    let replay_degradation = (remote.end_to_end_us - local_end) / baseline;
    let model_degradation = model.total_cost / baseline;
    Ok(ModelComparison {
        baseline_us: baseline,
        local_end_us: local_end,
        remote_end_us: remote.end_to_end_us,
        replay_degradation,
        model_degradation,
        gap: replay_degradation - model_degradation,
        model,
        replay: remote,
    })
}
