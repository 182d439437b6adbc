//! Deterministic trace synthesis.
//!
//! [`synth_trace`] turns aggregate per-class targets (counts, cumulative
//! times, cumulative payloads) into a per-call trace: each target is split
//! across the group's calls by a uniformly random partition, so the sums
//! are met exactly while individual calls vary. Calls of all groups are
//! then interleaved by a seeded shuffle.
//!
//! [`training_trace`] and [`random_trace`] build structured and fully
//! random workloads for replay experiments and property tests.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{apply_sr, ApiCall, ApiClass, Trace, TraceError, TraceMeta};

/// Aggregate targets for one group of calls sharing a base class and an
/// SR conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthGroup {
    pub base: ApiClass,
    pub sr: Option<ApiClass>,
    pub count: u64,
    pub total_gpu_us: f64,
    pub total_local_us: f64,
    pub total_payload_req: u64,
    pub total_payload_resp: u64,
    /// API names assigned round-robin; defaults depend on the group.
    pub names: Vec<String>,
}

impl SynthGroup {
    pub fn new(base: ApiClass, sr: Option<ApiClass>, count: u64) -> Self {
        SynthGroup {
            base,
            sr,
            count,
            total_gpu_us: 0.0,
            total_local_us: 0.0,
            total_payload_req: 0,
            total_payload_resp: 0,
            names: Vec::new(),
        }
    }

    fn default_names(&self) -> &'static [&'static str] {
        match (self.base, self.sr) {
            (ApiClass::Async, None) => &["LaunchKernel"],
            (ApiClass::Async, Some(_)) => &["GetLastError"],
            (ApiClass::Sync, None) => &["MemcpyD2H"],
            (ApiClass::Sync, Some(ApiClass::Async)) => &["Malloc", "CreateTensorDescriptor"],
            (ApiClass::Sync, Some(_)) => &["GetDevice"],
            (ApiClass::Local, _) => &["GetDevice"],
        }
    }

    pub fn label(&self) -> String {
        match self.sr {
            None => self.base.to_string(),
            Some(sr) => format!("{}_to_{}", self.base, sr),
        }
    }
}

/// Aggregate description of a workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub cpu_gap_mean_us: f64,
    pub groups: Vec<SynthGroup>,
    pub meta: TraceMeta,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    count: u64,
    #[serde(default)]
    total_gpu_us: f64,
    #[serde(default)]
    total_local_us: f64,
    #[serde(default)]
    total_payload_req: u64,
    #[serde(default)]
    total_payload_resp: u64,
    #[serde(default)]
    names: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    #[serde(default)]
    cpu_gap_mean_us: f64,
    app: Option<String>,
    batch_size: Option<u32>,
    source: Option<String>,
    #[serde(rename = "async")]
    async_group: Option<GroupFile>,
    sync: Option<GroupFile>,
    local: Option<GroupFile>,
    sync_to_async: Option<GroupFile>,
    sync_to_local: Option<GroupFile>,
    async_to_local: Option<GroupFile>,
}

impl SynthProfile {
    /// Parses the key/value profile format:
    ///
    /// ```toml
    /// cpu_gap_mean_us = 1.9
    /// app = "resnet"
    ///
    /// [async]
    /// count = 414
    /// total_gpu_us = 510.0
    ///
    /// [sync_to_local]
    /// count = 937
    /// total_gpu_us = 831.4
    /// total_local_us = 30.0
    /// ```
    ///
    /// Sections are named by base class (`async`, `sync`, `local`) or by
    /// SR conversion (`sync_to_async`, `sync_to_local`, `async_to_local`).
    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let file: ProfileFile =
            toml::from_str(text).map_err(|e| TraceError::Profile(e.to_string()))?;
        let mut groups = Vec::new();
        let sections = [
            (file.async_group, ApiClass::Async, None),
            (file.sync_to_async, ApiClass::Sync, Some(ApiClass::Async)),
            (file.sync_to_local, ApiClass::Sync, Some(ApiClass::Local)),
            (file.async_to_local, ApiClass::Async, Some(ApiClass::Local)),
            (file.local, ApiClass::Local, None),
            (file.sync, ApiClass::Sync, None),
        ];
        for (g, base, sr) in sections {
            if let Some(g) = g {
                groups.push(SynthGroup {
                    base,
                    sr,
                    count: g.count,
                    total_gpu_us: g.total_gpu_us,
                    total_local_us: g.total_local_us,
                    total_payload_req: g.total_payload_req,
                    total_payload_resp: g.total_payload_resp,
                    names: g.names,
                });
            }
        }
        let profile = SynthProfile {
            cpu_gap_mean_us: file.cpu_gap_mean_us,
            groups,
            meta: TraceMeta {
                app: file.app,
                batch_size: file.batch_size,
                source: file.source,
            },
        };
        profile.check()?;
        Ok(profile)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn total_count(&self) -> u64 {
        self.groups.iter().map(|g| g.count).sum()
    }

    /// Rejects targets that no trace can meet.
    pub fn check(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::Profile(m));
        if !self.cpu_gap_mean_us.is_finite() || self.cpu_gap_mean_us < 0.0 {
            return bad("cpu_gap_mean_us must be finite and non-negative".into());
        }
        for g in &self.groups {
            let label = g.label();
            if g.base == ApiClass::Local && g.sr.is_some() {
                return bad(format!("{label}: local calls cannot carry an SR conversion"));
            }
            if g.sr == Some(ApiClass::Sync) || g.sr == Some(g.base) {
                return bad(format!("{label}: invalid SR conversion"));
            }
            for (field, v) in [("total_gpu_us", g.total_gpu_us), ("total_local_us", g.total_local_us)] {
                if !v.is_finite() || v < 0.0 {
                    return bad(format!("{label}: {field} must be finite and non-negative"));
                }
            }
            let nonzero = g.total_gpu_us > 0.0
                || g.total_local_us > 0.0
                || g.total_payload_req > 0
                || g.total_payload_resp > 0;
            if g.count == 0 && nonzero {
                return bad(format!("{label}: zero count with nonzero targets"));
            }
        }
        Ok(())
    }
}

/// Splits `total` into `n` non-negative parts drawn uniformly from the
/// simplex.
fn partition_f64(total: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let weights = simplex(n, rng);
    weights.into_iter().map(|w| total * w).collect()
}

fn simplex(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = draws.iter().sum();
    if sum > 0.0 {
        draws.into_iter().map(|d| d / sum).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

/// Integer version of [`partition_f64`] whose parts sum to `total` exactly
/// (largest remainder rounding).
fn partition_u64(total: u64, n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let weights = simplex(n, rng);
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut parts: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = parts.iter().sum();
    let mut leftover = total.saturating_sub(assigned) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        parts[i] += 1;
        leftover -= 1;
    }
    parts
}

/// Generates a trace meeting the profile's per-group targets. The returned
/// trace has SR applied, so its summary reports effective-class totals.
pub fn synth_trace(profile: &SynthProfile, seed: u64) -> Result<Trace, TraceError> {
    profile.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut calls = Vec::with_capacity(profile.total_count() as usize);
    for g in &profile.groups {
        let n = g.count as usize;
        if n == 0 {
            continue;
        }
        let gpu = partition_f64(g.total_gpu_us, n, &mut rng);
        let local = partition_f64(g.total_local_us, n, &mut rng);
        let req = partition_u64(g.total_payload_req, n, &mut rng);
        let resp = partition_u64(g.total_payload_resp, n, &mut rng);
        let defaults = g.default_names();
        for i in 0..n {
            let name = if g.names.is_empty() {
                defaults[i % defaults.len()].to_string()
            } else {
                g.names[i % g.names.len()].clone()
            };
            let mut call = ApiCall::new(name, g.base)
                .with_payload(req[i], resp[i])
                .with_exec(gpu[i], local[i]);
            call.sr_class = g.sr;
            calls.push(call);
        }
    }
    calls.shuffle(&mut rng);
    let gaps = partition_f64(profile.cpu_gap_mean_us * calls.len() as f64, calls.len(), &mut rng);
    for (call, gap) in calls.iter_mut().zip(gaps) {
        call.cpu_gap_us = gap;
    }
    let trace = Trace::from_calls(calls, profile.meta.clone())?;
    Ok(apply_sr(&trace, true))
}

/// Shape of a synthetic training iteration: a forward pass, a loss read,
/// a backward pass, a gradient-norm read and an unfused optimizer step of
/// many tiny kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingShape {
    pub iterations: usize,
    pub input_bytes: u64,
    pub forward_kernels: usize,
    pub backward_kernels: usize,
    pub optimizer_kernels: usize,
    /// Device time range of forward/backward kernels.
    pub kernel_exec_us: (f64, f64),
    /// CPU gap range between forward/backward launches.
    pub kernel_gap_us: (f64, f64),
    pub optimizer_exec_us: (f64, f64),
    pub optimizer_gap_us: (f64, f64),
    /// One `GetDevice` query every this many launches (0 disables).
    pub query_every: usize,
    /// Fresh buffers allocated per iteration.
    pub allocs_per_iteration: usize,
}

impl Default for TrainingShape {
    fn default() -> Self {
        TrainingShape {
            iterations: 3,
            input_bytes: 64 * 3 * 224 * 224,
            forward_kernels: 120,
            backward_kernels: 240,
            optimizer_kernels: 480,
            kernel_exec_us: (8.0, 40.0),
            kernel_gap_us: (2.0, 6.0),
            optimizer_exec_us: (0.5, 2.0),
            optimizer_gap_us: (0.2, 1.0),
            query_every: 8,
            allocs_per_iteration: 4,
        }
    }
}

pub fn training_trace(shape: &TrainingShape, seed: u64) -> Result<Trace, TraceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut calls = Vec::new();
    let mut launches = 0usize;
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let mut launch = |calls: &mut Vec<ApiCall>, rng: &mut ChaCha8Rng, exec: f64, gap: f64| {
        launches += 1;
        if shape.query_every > 0 && launches % shape.query_every == 0 {
            calls.push(
                ApiCall::new("GetDevice", ApiClass::Sync)
                    .with_sr(ApiClass::Local)
                    .with_exec(0.6, 0.03)
                    .with_gap(0.1),
            );
        }
        let name = if rng.random_bool(0.3) { "ConvolutionForward" } else { "LaunchKernel" };
        calls.push(
            ApiCall::new(name, ApiClass::Async)
                .with_payload(256, 0)
                .with_exec(exec, 0.0)
                .with_gap(gap),
        );
    };
    for _ in 0..shape.iterations {
        for _ in 0..shape.allocs_per_iteration {
            calls.push(
                ApiCall::new("Malloc", ApiClass::Sync)
                    .with_sr(ApiClass::Async)
                    .with_payload(16, 8)
                    .with_exec(1.5, 0.0)
                    .with_gap(1.0),
            );
        }
        // Host-to-device copy of the input batch over PCIe (~12 GB/s).
        calls.push(
            ApiCall::new("MemcpyH2D", ApiClass::Async)
                .with_payload(shape.input_bytes, 0)
                .with_exec(shape.input_bytes as f64 / 12_000.0, 0.0)
                .with_gap(5.0),
        );
        for _ in 0..shape.forward_kernels {
            let (e, g) = (uniform(&mut rng, shape.kernel_exec_us), uniform(&mut rng, shape.kernel_gap_us));
            launch(&mut calls, &mut rng, e, g);
        }
        calls.push(
            ApiCall::new("MemcpyD2H", ApiClass::Sync)
                .with_payload(16, 4)
                .with_exec(2.0, 0.0)
                .with_gap(3.0),
        );
        for _ in 0..shape.backward_kernels {
            let (e, g) = (uniform(&mut rng, shape.kernel_exec_us), uniform(&mut rng, shape.kernel_gap_us));
            launch(&mut calls, &mut rng, e, g);
        }
        // Gradient-norm readback before the optimizer step.
        calls.push(
            ApiCall::new("MemcpyD2H", ApiClass::Sync)
                .with_payload(16, 4)
                .with_exec(2.0, 0.0)
                .with_gap(1.0),
        );
        for _ in 0..shape.optimizer_kernels {
            let (e, g) = (
                uniform(&mut rng, shape.optimizer_exec_us),
                uniform(&mut rng, shape.optimizer_gap_us),
            );
            launch(&mut calls, &mut rng, e, g);
        }
        calls.push(
            ApiCall::new("StreamSynchronize", ApiClass::Sync)
                .with_exec(0.5, 0.0)
                .with_gap(2.0),
        );
    }
    let meta = TraceMeta {
        app: Some("training".into()),
        batch_size: None,
        source: Some(format!("synthetic training shape, seed {seed}")),
    };
    Trace::from_calls(calls, meta)
}

/// Parameters of a fully random mixed-class trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomTraceSpec {
    pub min_calls: usize,
    pub max_calls: usize,
    /// Copy payloads of sync calls are log-uniform in `[0, max_payload]`.
    pub max_payload: u64,
    /// Argument payloads of async calls are log-uniform in
    /// `[0, max_async_payload]`.
    pub max_async_payload: u64,
    pub max_gap_us: f64,
    pub max_exec_us: f64,
    /// Relative weights of async, sync, sync-to-async, sync-to-local and
    /// local groups.
    pub mix: [f64; 5],
}

impl Default for RandomTraceSpec {
    fn default() -> Self {
        RandomTraceSpec {
            min_calls: 20,
            max_calls: 200,
            max_payload: 16 << 20,
            max_async_payload: 4096,
            max_gap_us: 1000.0,
            max_exec_us: 500.0,
            mix: [0.4, 0.15, 0.1, 0.3, 0.05],
        }
    }
}

/// Generates a random trace with SR flags; effective classes are the base
/// classes (apply [`apply_sr`] to turn conversions on).
pub fn random_trace(spec: &RandomTraceSpec, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = if spec.max_calls > spec.min_calls {
        rng.random_range(spec.min_calls..=spec.max_calls)
    } else {
        spec.min_calls
    };
    let total_weight: f64 = spec.mix.iter().sum();
    let mut calls = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pick = rng.random::<f64>() * total_weight;
        let mut group = 0;
        for (i, w) in spec.mix.iter().enumerate() {
            if pick < *w {
                group = i;
                break;
            }
            pick -= w;
            group = i;
        }
        let payload = log_uniform(&mut rng, spec.max_payload);
        let args = log_uniform(&mut rng, spec.max_async_payload);
        let exec = rng.random::<f64>() * spec.max_exec_us;
        let gap = rng.random::<f64>() * spec.max_gap_us;
        let call = match group {
            0 => {
                let name = match rng.random_range(0..10) {
                    0..4 => "LaunchKernel",
                    4..6 => "ConvolutionForward",
                    6..8 => "MemcpyH2D",
                    8 => "Free",
                    _ => "DestroyTensorDescriptor",
                };
                ApiCall::new(name, ApiClass::Async).with_payload(args, 0)
            }
            1 => {
                match rng.random_range(0..3) {
                    0 => ApiCall::new("MemcpyD2H", ApiClass::Sync).with_payload(64, payload),
                    1 => ApiCall::new("MemcpyH2D", ApiClass::Sync).with_payload(payload, 8),
                    _ => ApiCall::new("StreamSynchronize", ApiClass::Sync).with_payload(16, 8),
                }
            }
            2 => {
                let name = if rng.random_bool(0.5) { "Malloc" } else { "CreateTensorDescriptor" };
                ApiCall::new(name, ApiClass::Sync)
                    .with_sr(ApiClass::Async)
                    .with_payload(64, 8)
            }
            3 => ApiCall::new("GetDevice", ApiClass::Sync)
                .with_sr(ApiClass::Local)
                .with_payload(16, 8),
            _ => ApiCall::new("GetDevice", ApiClass::Local),
        };
        let local = match call.sr_class.or(Some(call.base_class)) {
            Some(ApiClass::Local) => exec * rng.random::<f64>(),
            _ => 0.0,
        };
        calls.push(call.with_exec(exec, local).with_gap(gap));
    }
    Trace::from_calls(calls, TraceMeta::default()).expect("generated calls are valid")
}

fn log_uniform(rng: &mut ChaCha8Rng, max: u64) -> u64 {
    if max == 0 {
        return 0;
    }
    let u = rng.random::<f64>();
    let v = ((max as f64 + 1.0).ln() * u).exp() - 1.0;
    (v.round() as u64).min(max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{summarize, write_trace};

    fn resnet_sr() -> SynthProfile {
        SynthProfile::parse(
            r#"
cpu_gap_mean_us = 2.0
[async]
count = 534
total_gpu_us = 580.0
[local]
count = 937
total_gpu_us = 600.0
total_local_us = 30.0
[sync]
count = 4
total_gpu_us = 50.0
total_payload_resp = 4000
"#,
        )
        .unwrap()
    }

    #[test]
    fn counts_exact_and_times_within_one_percent() {
        let t = synth_trace(&resnet_sr(), 7).unwrap();
        let s = summarize(&t);
        assert_eq!(s.async_calls.count, 534);
        assert_eq!(s.local_calls.count, 937);
        assert_eq!(s.sync_calls.count, 4);
        for (got, want) in [
            (s.api_time_us(ApiClass::Async), 580.0),
            (s.api_time_us(ApiClass::Local), 30.0),
            (s.api_time_us(ApiClass::Sync), 50.0),
        ] {
            assert!((got - want).abs() <= 0.01 * want, "{got} vs {want}");
        }
        assert_eq!(s.sync_calls.payload_resp, 4000);
    }

    #[test]
    fn all_zero_profile_is_empty() {
        let p = SynthProfile::parse("[async]\ncount = 0\n[sync]\ncount = 0\n").unwrap();
        assert!(synth_trace(&p, 1).unwrap().is_empty());
    }

    #[test]
    fn zero_count_with_time_is_infeasible() {
        let err = SynthProfile::parse("[sync]\ncount = 0\ntotal_gpu_us = 5.0\n").unwrap_err();
        assert!(err.to_string().contains("zero count"), "{err}");
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(SynthProfile::parse("[weird]\ncount = 1\n").is_err());
    }

    #[test]
    fn same_seed_same_bytes() {
        let p = resnet_sr();
        let render = |seed| {
            let mut buf = Vec::new();
            write_trace(&synth_trace(&p, seed).unwrap(), &mut buf).unwrap();
            buf
        };
        assert_eq!(render(11), render(11));
        assert_ne!(render(11), render(12));
    }

    #[test]
    fn integer_partition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for total in [0u64, 1, 7, 1_083_900] {
            let parts = partition_u64(total, 13, &mut rng);
            assert_eq!(parts.iter().sum::<u64>(), total);
        }
    }

    #[test]
    fn random_trace_respects_bounds() {
        let spec = RandomTraceSpec::default();
        let t = random_trace(&spec, 5);
        assert!(t.len() >= spec.min_calls && t.len() <= spec.max_calls);
        for c in t.calls() {
            assert!(c.payload_req <= spec.max_payload && c.payload_resp <= spec.max_payload);
            assert!(c.cpu_gap_us <= spec.max_gap_us);
        }
    }

    #[test]
    fn training_trace_has_phases() {
        let t = training_trace(&TrainingShape::default(), 1).unwrap();
        let syncs = t.calls().iter().filter(|c| c.base_class == ApiClass::Sync && c.sr_class.is_none()).count();
        assert_eq!(syncs, 3 * TrainingShape::default().iterations);
    }
}
