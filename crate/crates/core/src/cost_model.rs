//! Analytic remoting cost.
//!
//! Every call of a trace is priced by its effective class:
//!
//! * async: `C = Start + RTT/2 + req/bw`, credited `E = Time(api)`;
//! * sync:  `C = Start + RTT + (req + resp)/bw`, no credit;
//! * local: no network terms, credited `E = Time(api) - Time_local(api)`.
//!
//! The application cost is `sum(C_async - E_async) + sum(C_sync) - sum(E_local)`
//! and may be negative.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{ApiCall, ApiClass, Trace};
use crate::gbps_to_bytes_per_us;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("call {seq} ({name}) is {actual}, expected {expected}")]
    WrongClass {
        seq: u64,
        name: String,
        expected: ApiClass,
        actual: ApiClass,
    },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
}

/// Per-request software overhead: a constant with per-API overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StartOverhead {
    pub default_us: f64,
    pub overrides: BTreeMap<String, f64>,
}

impl StartOverhead {
    pub fn constant(us: f64) -> Self {
        StartOverhead {
            default_us: us,
            overrides: BTreeMap::new(),
        }
    }

    pub fn for_api(&self, name: &str) -> f64 {
        self.overrides.get(name).copied().unwrap_or(self.default_us)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub rtt_us: f64,
    /// Bytes per microsecond.
    pub bandwidth: f64,
    pub start: StartOverhead,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    rtt_us: f64,
    bandwidth_gbps: f64,
    #[serde(default)]
    start_us: f64,
    #[serde(default)]
    start_overrides: BTreeMap<String, f64>,
}

impl NetworkConfig {
    pub fn new(rtt_us: f64, bandwidth: f64, start_us: f64) -> Result<Self, CostError> {
        let net = NetworkConfig {
            rtt_us,
            bandwidth,
            start: StartOverhead::constant(start_us),
        };
        net.validate()?;
        Ok(net)
    }

    pub fn from_gbps(rtt_us: f64, gbps: f64, start_us: f64) -> Result<Self, CostError> {
        Self::new(rtt_us, gbps_to_bytes_per_us(gbps), start_us)
    }

    /// Zero RTT, unbounded bandwidth, zero start.
    pub fn ideal() -> Self {
        NetworkConfig {
            rtt_us: 0.0,
            bandwidth: f64::INFINITY,
            start: StartOverhead::default(),
        }
    }

    pub fn with_start(mut self, start: StartOverhead) -> Self {
        self.start = start;
        self
    }

    pub fn with_rtt(&self, rtt_us: f64) -> Self {
        NetworkConfig { rtt_us, ..self.clone() }
    }

    pub fn with_bandwidth(&self, bandwidth: f64) -> Self {
        NetworkConfig { bandwidth, ..self.clone() }
    }

    pub fn bandwidth_gbps(&self) -> f64 {
        crate::bytes_per_us_to_gbps(self.bandwidth)
    }

    /// RTT must be finite and non-negative (zero is the ideal limit),
    /// bandwidth positive (infinite allowed), start terms finite and
    /// non-negative.
    pub fn validate(&self) -> Result<(), CostError> {
        let bad = |m: String| Err(CostError::InvalidConfig(m));
        if !self.rtt_us.is_finite() || self.rtt_us < 0.0 {
            return bad(format!("rtt_us must be finite and non-negative, got {}", self.rtt_us));
        }
        if self.bandwidth.is_nan() || self.bandwidth <= 0.0 {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth));
        }
        let starts = std::iter::once(("start_us", self.start.default_us))
            .chain(self.start.overrides.values().map(|v| ("start_overrides", *v)));
        for (field, v) in starts {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{field} must be finite and non-negative, got {v}"));
            }
        }
        Ok(())
    }

    /// Parses the key/value config format:
    ///
    /// ```toml
    /// rtt_us = 5.0
    /// bandwidth_gbps = 200.0
    /// start_us = 0.27
    ///
    /// [start_overrides]
    /// LaunchKernel = 0.4
    /// ```
    pub fn parse(text: &str) -> Result<Self, CostError> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| CostError::InvalidConfig(e.to_string()))?;
        if !file.bandwidth_gbps.is_finite() {
            return Err(CostError::InvalidConfig("bandwidth_gbps must be finite".into()));
        }
        let net = NetworkConfig {
            rtt_us: file.rtt_us,
            bandwidth: gbps_to_bytes_per_us(file.bandwidth_gbps),
            start: StartOverhead {
                default_us: file.start_us,
                overrides: file.start_overrides,
            },
        };
        net.validate()?;
        Ok(net)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CostError> {
        let text = fs::read_to_string(path.as_ref())
            .map_err(|e| CostError::InvalidConfig(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    fn transfer(&self, bytes: u64) -> f64 {
        if bytes == 0 {
            0.0
        } else {
            bytes as f64 / self.bandwidth
        }
    }
}

fn expect(api: &ApiCall, expected: ApiClass) -> Result<(), CostError> {
    if api.class != expected {
        return Err(CostError::WrongClass {
            seq: api.seq,
            name: api.name.clone(),
            expected,
            actual: api.class,
        });
    }
    Ok(())
}

pub fn cost_async(api: &ApiCall, net: &NetworkConfig) -> Result<f64, CostError> {
    expect(api, ApiClass::Async)?;
    Ok(net.start.for_api(&api.name) + net.rtt_us / 2.0 + net.transfer(api.payload_req))
}

pub fn cost_sync(api: &ApiCall, net: &NetworkConfig) -> Result<f64, CostError> {
    expect(api, ApiClass::Sync)?;
    Ok(net.start.for_api(&api.name)
        + net.rtt_us
        + net.transfer(api.payload_req + api.payload_resp))
}

pub fn accel_async(api: &ApiCall) -> Result<f64, CostError> {
    expect(api, ApiClass::Async)?;
    Ok(api.gpu_exec_us)
}

pub fn accel_local(api: &ApiCall) -> Result<f64, CostError> {
    expect(api, ApiClass::Local)?;
    Ok(api.gpu_exec_us - api.local_exec_us)
}

/// Contribution of one class to the total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassContribution {
    pub class: Option<ApiClass>,
    pub count: u64,
    pub cost_us: f64,
    pub accel_us: f64,
    /// `cost_us - accel_us`.
    pub net_us: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub sum_c_async: f64,
    pub sum_c_sync: f64,
    pub sum_e_async: f64,
    pub sum_e_local: f64,
    pub total_cost: f64,
    pub per_class: Vec<ClassContribution>,
}

impl CostBreakdown {
    /// Recombines the sums; equals `total_cost` bit for bit.
    pub fn recombined(&self) -> f64 {
        self.sum_c_async - self.sum_e_async + self.sum_c_sync - self.sum_e_local
    }
}

pub fn total_cost(trace: &Trace, net: &NetworkConfig) -> CostBreakdown {
    let mut per = [ClassContribution::default(); 3];
    for (i, class) in ApiClass::ALL.iter().enumerate() {
        per[i].class = Some(*class);
    }
    for api in trace.calls() {
        let slot = &mut per[api.class.index()];
        slot.count += 1;
        match api.class {
            ApiClass::Async => {
                slot.cost_us += cost_async(api, net).expect("class checked");
                slot.accel_us += accel_async(api).expect("class checked");
            }
            ApiClass::Sync => slot.cost_us += cost_sync(api, net).expect("class checked"),
            ApiClass::Local => slot.accel_us += accel_local(api).expect("class checked"),
        }
    }
    for slot in &mut per {
        slot.net_us = slot.cost_us - slot.accel_us;
    }
    let [a, s, l] = per;
    let mut out = CostBreakdown {
        sum_c_async: a.cost_us,
        sum_c_sync: s.cost_us,
        sum_e_async: a.accel_us,
        sum_e_local: l.accel_us,
        total_cost: 0.0,
        per_class: per.to_vec(),
    };
    out.total_cost = out.recombined();
    out
}

/// `total_cost / baseline_us`; negative means remoting is faster.
pub fn degradation(trace: &Trace, net: &NetworkConfig, baseline_us: f64) -> Result<f64, CostError> {
    if !(baseline_us > 0.0) || !baseline_us.is_finite() {
        return Err(CostError::NonPositiveBaseline(baseline_us));
    }
    Ok(total_cost(trace, net).total_cost / baseline_us)
}
