use proptest::prelude::*;
use remoting_lab::cost_model::{
    accel_async, accel_local, cost_async, cost_sync, total_cost, NetworkConfig,
};
use remoting_lab::device::DeviceTimeline;
use remoting_lab::replay::{replay_local, replay_remote, Dispatch, ReplayOptions};
use remoting_lab::solver::{derive_requirements, rtt_slope, Budget, Grid};
use remoting_lab::trace::synth::{random_trace, RandomTraceSpec};
use remoting_lab::trace::{apply_sr, summarize, ApiCall, ApiClass, Trace, TraceMeta};
use remoting_lab::transport::{Link, TransportKind};
use remoting_lab::{gbps_to_bytes_per_us, StartOverhead};

fn class() -> impl Strategy<Value = ApiClass> {
    prop_oneof![Just(ApiClass::Async), Just(ApiClass::Sync), Just(ApiClass::Local)]
}

fn call() -> impl Strategy<Value = ApiCall> {
    (
        class(),
        prop_oneof![Just(None), Just(Some(ApiClass::Async)), Just(Some(ApiClass::Local))],
        0u64..20_000_000,
        0u64..20_000_000,
        0.0f64..1000.0,
        0.0f64..50.0,
        0.0f64..500.0,
    )
        .prop_map(|(base, sr, req, resp, gpu, local, gap)| {
            let mut c = ApiCall::new("Op", base)
                .with_payload(req, resp)
                .with_exec(gpu, local)
                .with_gap(gap);
            if base != ApiClass::Local {
                if let Some(sr) = sr {
                    c = c.with_sr(sr);
                }
            }
            c
        })
}

fn trace() -> impl Strategy<Value = Trace> {
    prop::collection::vec(call(), 0..60)
        .prop_map(|calls| Trace::from_calls(calls, TraceMeta::default()).unwrap())
}

fn net() -> impl Strategy<Value = NetworkConfig> {
    (0.0f64..200.0, 1.0f64..25_000.0, 0.0f64..5.0)
        .prop_map(|(rtt, bw, start)| NetworkConfig::new(rtt, bw, start).unwrap())
}

fn replay_opts() -> impl Strategy<Value = ReplayOptions> {
    (
        0.0f64..100.0,
        prop::sample::select(vec![1.0, 10.0, 40.0, 100.0, 200.0]),
        0.0f64..3.0,
        any::<bool>(),
        any::<bool>(),
        prop_oneof![Just(Dispatch::OutstandingRequests), (1usize..40).prop_map(Dispatch::Batch)],
    )
        .prop_map(|(rtt, gbps, start, sr, locality, dispatch)| ReplayOptions {
            sr,
            locality: sr && locality,
            dispatch,
            transport: TransportKind::Emulated(NetworkConfig::from_gbps(rtt, gbps, 0.0).unwrap()),
            start: StartOverhead::constant(start),
        })
}

fn small_spec() -> RandomTraceSpec {
    RandomTraceSpec {
        min_calls: 1,
        max_calls: 80,
        ..RandomTraceSpec::default()
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn apply_sr_is_idempotent(t in trace(), on in any::<bool>()) {
        let once = apply_sr(&t, on);
        prop_assert_eq!(apply_sr(&once, on), once);
    }

    #[test]
    fn apply_sr_only_touches_classes(t in trace(), on in any::<bool>()) {
        let out = apply_sr(&t, on);
        prop_assert_eq!(out.len(), t.len());
        for (a, b) in t.calls().iter().zip(out.calls()) {
            prop_assert_eq!(a.seq, b.seq);
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(a.payload_req, b.payload_req);
            prop_assert_eq!(a.payload_resp, b.payload_resp);
            prop_assert_eq!(a.gpu_exec_us, b.gpu_exec_us);
            prop_assert_eq!(a.base_class, b.base_class);
        }
        prop_assert_eq!(summarize(&out).total.count, summarize(&t).total.count);
    }

    #[test]
    fn summarize_matches_naive_loop(t in trace(), on in any::<bool>()) {
        let t = apply_sr(&t, on);
        let s = summarize(&t);
        for class in ApiClass::ALL {
            let mine: Vec<&ApiCall> = t.calls().iter().filter(|c| c.class == class).collect();
            let got = s.class(class);
            prop_assert_eq!(got.count, mine.len() as u64);
            prop_assert_eq!(got.payload_req, mine.iter().map(|c| c.payload_req).sum::<u64>());
            prop_assert_eq!(got.payload_resp, mine.iter().map(|c| c.payload_resp).sum::<u64>());
            let mut gpu = 0.0;
            let mut local = 0.0;
            for c in &mine {
                gpu += c.gpu_exec_us;
                local += c.local_exec_us;
            }
            prop_assert_eq!(got.gpu_exec_us, gpu);
            prop_assert_eq!(got.local_exec_us, local);
        }
        prop_assert_eq!(s.total.count, t.len() as u64);
    }

    #[test]
    fn cost_recombines_and_matches_per_call_loop(t in trace(), n in net(), on in any::<bool>()) {
        let t = apply_sr(&t, on);
        let b = total_cost(&t, &n);
        prop_assert_eq!(b.recombined(), b.total_cost);
        let mut naive = 0.0;
        for c in t.calls() {
            naive += match c.class {
                ApiClass::Async => cost_async(c, &n).unwrap() - accel_async(c).unwrap(),
                ApiClass::Sync => cost_sync(c, &n).unwrap(),
                ApiClass::Local => -accel_local(c).unwrap(),
            };
        }
        prop_assert!(close(naive, b.total_cost), "{naive} vs {}", b.total_cost);
    }

    #[test]
    fn cost_monotone_in_network(t in trace(), n in net(), d_rtt in 0.0f64..100.0, k in 1.0f64..8.0) {
        let base = total_cost(&t, &n).total_cost;
        prop_assert!(total_cost(&t, &n.with_rtt(n.rtt_us + d_rtt)).total_cost >= base);
        prop_assert!(total_cost(&t, &n.with_bandwidth(n.bandwidth * k)).total_cost <= base);
    }

    #[test]
    fn cost_affine_in_rtt(t in trace(), n in net(), r1 in 0.0f64..100.0, r2 in 100.0f64..200.0) {
        let c1 = total_cost(&t, &n.with_rtt(r1)).total_cost;
        let c2 = total_cost(&t, &n.with_rtt(r2)).total_cost;
        let slope = rtt_slope(&t);
        let scale = c1.abs().max(c2.abs()).max(1.0);
        prop_assert!(((c2 - c1) - slope * (r2 - r1)).abs() <= 1e-9 * scale);
    }

    #[test]
    fn sr_never_costs_more_when_conversions_are_cheaper(t in trace(), n in net()) {
        prop_assume!(n.rtt_us > 0.0);
        // Converted calls must be cheaper per call: shadow execution within
        // one Start + RTT, and async targets cost no more than the round trip.
        let eligible = t.calls().iter().all(|c| c.local_exec_us <= n.start.default_us + n.rtt_us);
        prop_assume!(eligible);
        let off = total_cost(&apply_sr(&t, false), &n).total_cost;
        let on = total_cost(&apply_sr(&t, true), &n).total_cost;
        prop_assert!(on <= off + 1e-9 * off.abs().max(1.0), "sr {on} > plain {off}");
    }

    #[test]
    fn frontier_sound_and_tight(seed in 0u64..10_000, eps in 0.001f64..0.5, start in 0.0f64..2.0) {
        let t = apply_sr(&random_trace(&small_spec(), seed), true);
        let baseline = replay_local(&t).end_to_end_us;
        prop_assume!(baseline > 0.0);
        let grid = Grid::standard();
        let base = NetworkConfig::ideal().with_start(StartOverhead::constant(start));
        let budget = Budget::new(eps, baseline).unwrap();
        let f = derive_requirements(&t, &base, budget, &grid);
        let eval = |rtt: f64, gbps: f64| {
            let n = NetworkConfig::new(rtt, gbps_to_bytes_per_us(gbps), start).unwrap();
            total_cost(&t, &n).total_cost
        };
        let rtts = grid.rtts_us();
        let bws = grid.bandwidths_gbps();
        for p in &f.pareto {
            prop_assert!(eval(p.rtt_us, p.bandwidth_gbps) <= budget.epsilon_us());
            let i = rtts.iter().position(|r| *r == p.rtt_us).unwrap();
            let j = bws.iter().position(|b| *b == p.bandwidth_gbps).unwrap();
            if i + 1 < rtts.len() {
                prop_assert!(!f.satisfies(rtts[i + 1], bws[j]));
            }
            if j > 0 {
                prop_assert!(!f.satisfies(rtts[i], bws[j - 1]));
            }
        }
        prop_assert_eq!(f.pareto.is_empty(), f.diagnostic.is_some());
    }

    #[test]
    fn link_fifo_and_conservation(
        sends in prop::collection::vec((0.0f64..50.0, 0u64..100_000), 1..80),
        rtt in 0.0f64..100.0,
        bw in 1.0f64..25_000.0,
    ) {
        let mut link = Link::new(TransportKind::Emulated(NetworkConfig::new(rtt, bw, 0.0).unwrap()));
        let mut now = 0.0;
        let mut busy_before = 0.0;
        for (i, (dt, len)) in sends.iter().enumerate() {
            now += dt;
            link.send(i, *len, now).unwrap();
            if *len == 0 {
                prop_assert_eq!(link.busy_until(), busy_before);
            }
            busy_before = link.busy_until();
        }
        let out = link.deliver(f64::INFINITY);
        let order: Vec<usize> = out.iter().map(|(m, _)| *m).collect();
        prop_assert_eq!(order, (0..sends.len()).collect::<Vec<_>>());
        prop_assert!(out.windows(2).all(|w| w[0].1 <= w[1].1));
        prop_assert_eq!(link.sent(), link.delivered());
        prop_assert_eq!(link.in_flight(), 0);
    }

    #[test]
    fn ideal_link_is_the_zero_network_limit(
        sends in prop::collection::vec((0.0f64..50.0, 0u64..100_000), 1..40),
    ) {
        let mut ideal: Link<usize> = Link::new(TransportKind::Ideal);
        let mut limit: Link<usize> =
            Link::new(TransportKind::Emulated(NetworkConfig::new(0.0, f64::INFINITY, 0.0).unwrap()));
        let mut now = 0.0;
        for (i, (dt, len)) in sends.iter().enumerate() {
            now += dt;
            prop_assert_eq!(ideal.send(i, *len, now).unwrap(), limit.send(i, *len, now).unwrap());
        }
    }

    #[test]
    fn device_serial_and_busy_conserved(
        jobs in prop::collection::vec((0.0f64..30.0, 0.0f64..50.0), 1..80),
    ) {
        let mut d = DeviceTimeline::new();
        let mut now = 0.0;
        let mut sum = 0.0;
        for (i, (dt, exec)) in jobs.iter().enumerate() {
            now += dt;
            sum += exec;
            d.submit("k", i as u64, *exec, now, &[]).unwrap();
        }
        let log = d.log();
        prop_assert!(log.windows(2).all(|w| w[1].start >= w[0].finish));
        prop_assert!(log.iter().all(|r| r.start >= r.submit));
        prop_assert_eq!(d.busy_total(), sum);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn replay_deterministic(seed in any::<u64>(), opts in replay_opts()) {
        let t = random_trace(&small_spec(), seed);
        prop_assert_eq!(replay_remote(&t, &opts).unwrap(), replay_remote(&t, &opts).unwrap());
    }

    #[test]
    fn replay_invariants_hold(seed in any::<u64>(), opts in replay_opts()) {
        let t = random_trace(&small_spec(), seed);
        let r = replay_remote(&t, &opts).unwrap();
        prop_assert!(r.invariants.all_hold(), "{:?}", r.invariants.violations());
        let prepared = opts.prepare(&t);
        let expected: f64 = prepared
            .calls()
            .iter()
            .filter(|c| c.class != ApiClass::Local)
            .map(|c| c.gpu_exec_us)
            .sum();
        prop_assert!(close(r.device_busy_us, expected));
        prop_assert!(r.end_to_end_us >= r.device_busy_us);
        prop_assert!(r.arrival_delays_us.iter().flatten().all(|d| d.is_finite()));
    }

    #[test]
    fn replay_dominance_in_rtt(seed in any::<u64>(), opts in replay_opts(), extra in 0.0f64..100.0) {
        let t = random_trace(&small_spec(), seed);
        let TransportKind::Emulated(n) = &opts.transport else { unreachable!() };
        let slower = ReplayOptions {
            transport: TransportKind::Emulated(n.with_rtt(n.rtt_us + extra)),
            ..opts.clone()
        };
        let a = replay_remote(&t, &opts).unwrap().end_to_end_us;
        let b = replay_remote(&t, &slower).unwrap().end_to_end_us;
        prop_assert!(b >= a, "{b} < {a}");
    }

    #[test]
    fn batch_one_matches_or(seed in any::<u64>(), opts in replay_opts()) {
        let t = random_trace(&small_spec(), seed);
        let or = replay_remote(&t, &opts.clone().with_dispatch(Dispatch::OutstandingRequests)).unwrap();
        let b1 = replay_remote(&t, &opts.with_dispatch(Dispatch::Batch(1))).unwrap();
        prop_assert_eq!(or.device_submit_us, b1.device_submit_us);
        prop_assert_eq!(or.end_to_end_us, b1.end_to_end_us);
    }

    #[test]
    fn ideal_remote_never_slower_than_local(seed in any::<u64>()) {
        let t = random_trace(&small_spec(), seed);
        let local = replay_local(&t).end_to_end_us;
        let remote = replay_remote(&t, &ReplayOptions::ideal()).unwrap().end_to_end_us;
        prop_assert!(remote <= local + 1e-9 * local.max(1.0));
    }
}
