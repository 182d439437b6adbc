//! Built-in workload profiles.
//!
//! * `resnet-inference`, `gpt2-inference`: per-class API counts and API
//!   times with and without shadow resources.
//! * `resnet-v100`, `gpt2-v100`: device-time profiles for cost modeling on
//!   a V100 host, with CPU gaps sized so local execution takes
//!   [`RESNET_V100_BASELINE_US`] and [`GPT2_V100_BASELINE_US`].

use crate::trace::synth::SynthProfile;

pub const RESNET_V100_BASELINE_US: f64 = 4300.0;
pub const GPT2_V100_BASELINE_US: f64 = 580_000.0;

/// One RDMA post, 600 cycles at 2.2 GHz.
pub const V100_START_US: f64 = 600.0 / 2200.0;

/// RTT of the V100 testbed's RDMA network.
pub const V100_RTT_US: f64 = 2.6;

const BUILTIN: &[(&str, &str)] = &[
    ("resnet-inference", include_str!("../profiles/resnet_inference.toml")),
    ("gpt2-inference", include_str!("../profiles/gpt2_inference.toml")),
    ("resnet-v100", include_str!("../profiles/resnet_v100.toml")),
    ("gpt2-v100", include_str!("../profiles/gpt2_v100.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin(name: &str) -> Option<SynthProfile> {
    source(name).map(|s| SynthProfile::parse(s).expect("built-in profiles parse"))
}
