use remoting_lab::cost_model::{accel_async, degradation, total_cost, NetworkConfig};
use remoting_lab::profiles::{self, GPT2_V100_BASELINE_US, RESNET_V100_BASELINE_US, V100_RTT_US, V100_START_US};
use remoting_lab::replay::{compare_model, replay_local, replay_remote, Dispatch, ReplayOptions};
use remoting_lab::solver::{rtt_slope, sweep, Grid};
use remoting_lab::trace::synth::{synth_trace, training_trace, SynthProfile, TrainingShape};
use remoting_lab::trace::{apply_sr, summarize, write_trace, ApiCall, ApiClass, Trace, TraceMeta};
use remoting_lab::StartOverhead;

fn v100(name: &str) -> Trace {
    synth_trace(&profiles::builtin(name).unwrap(), 11).unwrap()
}

fn v100_net(rtt: f64, gbps: f64) -> NetworkConfig {
    NetworkConfig::from_gbps(rtt, gbps, V100_START_US).unwrap()
}

#[test]
fn resnet_sr_async_time() {
    let t = apply_sr(&v100("resnet-inference"), true);
    let ms: f64 = t
        .calls()
        .iter()
        .filter(|c| c.class == ApiClass::Async)
        .map(|c| accel_async(c).unwrap())
        .sum::<f64>()
        / 1000.0;
    assert!((ms - 0.58).abs() / 0.58 < 0.01, "{ms}");
}

#[test]
fn get_device_locality_reduction() {
    let t = v100("resnet-inference");
    let queries: Vec<&ApiCall> = t.calls().iter().filter(|c| c.sr_class == Some(ApiClass::Local)).collect();
    assert_eq!(queries.len(), 937);
    let remote: f64 = queries.iter().map(|c| c.gpu_exec_us).sum();
    let local: f64 = queries.iter().map(|c| c.local_exec_us).sum();
    let reduction = 1.0 - local / remote;
    assert!(reduction >= 0.95, "{reduction}");
}

#[test]
fn gpt2_summary_counts() {
    let t = v100("gpt2-inference");
    let plain = summarize(&apply_sr(&t, false));
    assert_eq!(plain.sync_calls.count, 38_145);
    assert!((plain.sync_calls.gpu_exec_us / 1000.0 - 110.80).abs() < 1.108);
    let sr = summarize(&apply_sr(&t, true));
    assert_eq!(sr.local_calls.count, 37_634);
    assert_eq!(sr.sync_calls.count, 511);
}

#[test]
fn degradation_sign_and_ratio() {
    let one_sync = Trace::from_calls(vec![ApiCall::new("MemcpyD2H", ApiClass::Sync)], TraceMeta::default()).unwrap();
    let net = NetworkConfig::new(215.0 - 1.0, f64::INFINITY, 1.0).unwrap();
    assert!((degradation(&one_sync, &net, 4300.0).unwrap() - 0.05).abs() < 1e-12);
    let launch = Trace::from_calls(
        vec![ApiCall::new("LaunchKernel", ApiClass::Async).with_exec(250.0, 0.0)],
        TraceMeta::default(),
    )
    .unwrap();
    assert!(degradation(&launch, &NetworkConfig::new(10.0, 1000.0, 1.0).unwrap(), 4300.0).unwrap() < 0.0);
}

#[test]
fn resnet_rtt_slope() {
    let t = v100("resnet-v100");
    assert_eq!(rtt_slope(&t), 534.0 / 2.0 + 4.0);
    let rise = rtt_slope(&t) * (100.0 - 5.0) / RESNET_V100_BASELINE_US;
    assert!((rise - 5.99).abs() < 0.01, "{rise}");
}

#[test]
fn gpt2_sweep_cell() {
    let t = v100("gpt2-v100");
    let base = NetworkConfig::ideal().with_start(StartOverhead::constant(V100_START_US));
    let s = sweep(&t, &base, &Grid::standard(), GPT2_V100_BASELINE_US);
    let i = s.rtts_us.iter().position(|r| *r == 10.0).unwrap();
    let j = s.bandwidths_gbps.iter().position(|b| *b == 1.0).unwrap();
    assert!(s.cells[i][j] <= 0.05, "{}", s.cells[i][j]);
}

#[test]
fn v100_profiles_reproduce_local_baselines() {
    for (name, baseline) in [("resnet-v100", RESNET_V100_BASELINE_US), ("gpt2-v100", GPT2_V100_BASELINE_US)] {
        let local = replay_local(&v100(name)).end_to_end_us;
        assert!((local - baseline).abs() / baseline < 0.01, "{name}: {local}");
    }
}

#[test]
fn resnet_v100_model_in_rdma_band() {
    let t = v100("resnet-v100");
    let net = v100_net(V100_RTT_US, 200.0);
    let d = degradation(&t, &net, RESNET_V100_BASELINE_US).unwrap();
    assert!((-0.14..=-0.07).contains(&d), "{d}");
    let c = compare_model(&t, &ReplayOptions::emulated(&net), Some(RESNET_V100_BASELINE_US)).unwrap();
    assert!(c.replay_degradation < 0.0);
    assert!(c.replay.invariants.all_hold());
}

#[test]
fn all_sync_gap_is_exactly_zero() {
    let calls = (0..40)
        .map(|i| {
            ApiCall::new("MemcpyD2H", ApiClass::Sync)
                .with_payload(25_000 * (i % 7), 50_000 * (i % 3))
                .with_exec((1 + i % 13) as f64, 0.0)
        })
        .collect();
    let t = Trace::from_calls(calls, TraceMeta::default()).unwrap();
    let c = compare_model(&t, &ReplayOptions::emulated(&NetworkConfig::from_gbps(10.0, 40.0, 1.0).unwrap()), None).unwrap();
    assert_eq!(c.gap, 0.0);
}

#[test]
fn descriptor_used_while_creation_in_flight() {
    let calls = vec![
        ApiCall::new("CreateTensorDescriptor", ApiClass::Sync).with_sr(ApiClass::Async),
        ApiCall::new("ConvolutionForward", ApiClass::Async).with_exec(30.0, 0.0),
        ApiCall::new("DestroyTensorDescriptor", ApiClass::Async),
        ApiCall::new("MemcpyD2H", ApiClass::Sync).with_payload(0, 4096),
    ];
    let t = Trace::from_calls(calls, TraceMeta::default()).unwrap();
    let r = replay_remote(&t, &ReplayOptions::emulated(&NetworkConfig::from_gbps(50.0, 10.0, 1.0).unwrap())).unwrap();
    assert!(r.invariants.all_hold());
    assert_eq!(r.return_us[0], 1.0);
    assert_eq!(r.message_count, 4);
}

#[test]
fn synth_is_deterministic_and_handles_empty_profiles() {
    let p = profiles::builtin("resnet-inference").unwrap();
    let encode = |t: &Trace| {
        let mut buf = Vec::new();
        write_trace(t, &mut buf).unwrap();
        buf
    };
    assert_eq!(encode(&synth_trace(&p, 3).unwrap()), encode(&synth_trace(&p, 3).unwrap()));
    let empty = SynthProfile::parse("cpu_gap_mean_us = 1.0\n").unwrap();
    assert!(synth_trace(&empty, 3).unwrap().is_empty());
}

#[test]
fn large_batches_delay_training_kernels() {
    let t = training_trace(&TrainingShape::default(), 0).unwrap();
    let net = NetworkConfig::from_gbps(5.0, 200.0, 1.0).unwrap();
    let or = replay_remote(&t, &ReplayOptions::emulated(&net)).unwrap();
    let b64 = replay_remote(&t, &ReplayOptions::emulated(&net).with_dispatch(Dispatch::Batch(64))).unwrap();
    let first_kernel = |r: &remoting_lab::ReplayResult| {
        t.calls()
            .iter()
            .position(|c| c.name == "LaunchKernel")
            .and_then(|i| r.device_submit_us[i])
            .unwrap()
    };
    assert!(first_kernel(&b64) > first_kernel(&or));
    assert!(b64.end_to_end_us > or.end_to_end_us);
}

#[test]
fn ideal_zero_network_costs_nothing() {
    let t = v100("resnet-v100");
    assert_eq!(total_cost(&apply_sr(&t, false), &NetworkConfig::ideal()).sum_c_sync, 0.0);
}
