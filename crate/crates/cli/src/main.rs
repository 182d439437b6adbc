mod manifest;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context as _};
use clap::{Args, Parser, Subcommand};
use remoting_lab::cost_model::CostBreakdown;
use remoting_lab::device::write_log_csv;
use remoting_lab::replay::{compare_model, replay_local, replay_remote, InvariantReport, ReplayError};
use remoting_lab::solver::{derive_requirements, rtt_slope, sweep};
use remoting_lab::trace::synth::{synth_trace, training_trace, SynthProfile, TrainingShape};
use remoting_lab::trace::{annotate_default_sr, apply_sr, load_trace, resolve_classes, summarize, write_trace};
use remoting_lab::transport::write_events_csv;
use remoting_lab::{
    profiles, ApiClass, Budget, Dispatch, Grid, NetworkConfig, ReplayOptions, StartOverhead, Trace,
    TraceSummary, TransportKind,
};
use serde::Serialize;

use manifest::{write_sidecar, RunManifest};

const BUILTIN_PREFIX: &str = "builtin:";
const TRAINING: &str = "training";

#[derive(Debug, Parser)]
#[command(name = "remolab", version, about = "GPU API remoting cost model, network requirement solver and replay harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-class API counts and times of a trace.
    Analyze(AnalyzeArgs),
    /// Loosest network configurations that keep remoting within a budget.
    Solve(SolveArgs),
    /// Degradation over an RTT x bandwidth grid, as CSV.
    Sweep(SweepArgs),
    /// Replay a trace through the emulated remoting stack.
    Replay(ReplayArgs),
    /// Generate a trace from a profile.
    Synth(SynthArgs),
    /// List built-in profiles.
    Profiles,
}

#[derive(Debug, Args, Serialize)]
struct TraceArgs {
    /// Trace file (JSONL), or `builtin:NAME` to synthesize a built-in profile.
    trace: String,

    /// Seed used when synthesizing a `builtin:` trace.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Fill missing SR flags from the API-name table.
    #[arg(long)]
    infer_sr: bool,
}

#[derive(Debug, Args, Serialize)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: TraceArgs,

    /// Resolve classes with shadow resources and locality.
    #[arg(long)]
    sr: bool,

    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ModelArgs {
    /// Start overhead per request, us.
    #[arg(long, default_value_t = 0.0)]
    start: f64,

    /// Network config file; its start overheads replace `--start`.
    #[arg(long)]
    network: Option<PathBuf>,

    /// Price the trace without shadow resources.
    #[arg(long)]
    no_sr: bool,

    /// Keep shadow resources but send read-only queries to the proxy.
    #[arg(long)]
    no_locality: bool,

    /// Grid as `rtt=1,5,10;gbps=1,10,40`. Default: RTT 1..100 us, 1..200 Gbps.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Debug, Args, Serialize)]
struct SolveArgs {
    #[command(flatten)]
    input: TraceArgs,

    #[command(flatten)]
    model: ModelArgs,

    /// Overhead budget as a fraction of the baseline.
    #[arg(long)]
    epsilon: f64,

    /// Local execution time, us. Default: local replay of the trace.
    #[arg(long)]
    baseline_us: Option<f64>,

    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SweepArgs {
    #[command(flatten)]
    input: TraceArgs,

    #[command(flatten)]
    model: ModelArgs,

    /// Local execution time, us. Default: local replay of the trace.
    #[arg(long)]
    baseline_us: Option<f64>,

    /// CSV destination; a manifest is written next to it.
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ReplayArgs {
    #[command(flatten)]
    input: TraceArgs,

    /// Round-trip time, us.
    #[arg(long)]
    rtt: Option<f64>,

    /// Bandwidth, Gbps.
    #[arg(long)]
    bw: Option<f64>,

    /// Start overhead per request, us.
    #[arg(long)]
    start: Option<f64>,

    /// Network config file; `--rtt`, `--bw` and `--start` override it.
    #[arg(long)]
    network: Option<PathBuf>,

    /// Zero-delay transport instead of the emulated network.
    #[arg(long, conflicts_with_all = ["rtt", "bw"])]
    ideal: bool,

    /// `or` or `batch:N`.
    #[arg(long, default_value = "or")]
    dispatch: String,

    #[arg(long)]
    no_sr: bool,

    #[arg(long)]
    no_locality: bool,

    /// Also price the trace with the cost model and report the gap.
    #[arg(long)]
    compare_model: bool,

    /// Local execution time, us. Default: local replay of the trace.
    #[arg(long)]
    baseline_us: Option<f64>,

    /// Device execution log as CSV.
    #[arg(long)]
    #[serde(skip)]
    device_log: Option<PathBuf>,

    /// Uplink transport events as CSV.
    #[arg(long)]
    #[serde(skip)]
    link_log: Option<PathBuf>,

    #[arg(short, long)]
    #[serde(skip)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Profile file (TOML), `builtin:NAME`, or `builtin:training`.
    profile: String,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Trace destination; a manifest is written next to it.
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
}

/// A run whose own consistency checks failed.
#[derive(Debug)]
struct AssertionFailure(String);

impl fmt::Display for AssertionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "assertion failed: {}", self.0)
    }
}

impl std::error::Error for AssertionFailure {}

struct LoadedTrace {
    trace: Trace,
    label: String,
    bytes: Vec<u8>,
}

fn builtin_name(spec: &str) -> Option<&str> {
    spec.strip_prefix(BUILTIN_PREFIX)
}

fn load_profile(spec: &str) -> anyhow::Result<(SynthProfile, Vec<u8>)> {
    match builtin_name(spec) {
        Some(name) => {
            let source = profiles::source(name).with_context(|| {
                let known: Vec<_> = profiles::names().collect();
                format!("unknown built-in profile {name:?} (known: {}, {TRAINING})", known.join(", "))
            })?;
            Ok((SynthProfile::parse(source)?, source.as_bytes().to_vec()))
        }
        None => {
            let bytes = fs::read(spec).with_context(|| format!("reading {spec}"))?;
            let text = String::from_utf8(bytes.clone()).with_context(|| format!("{spec} is not UTF-8"))?;
            let profile = SynthProfile::parse(&text).with_context(|| format!("parsing {spec}"))?;
            Ok((profile, bytes))
        }
    }
}

/// Synthesizes a trace from a profile argument; returns it with the profile
/// bytes for digesting.
fn synthesize(spec: &str, seed: u64) -> anyhow::Result<(Trace, Vec<u8>)> {
    if builtin_name(spec) == Some(TRAINING) {
        let shape = TrainingShape::default();
        let trace = training_trace(&shape, seed)?;
        return Ok((trace, serde_json::to_vec(&shape)?));
    }
    let (profile, bytes) = load_profile(spec)?;
    Ok((synth_trace(&profile, seed)?, bytes))
}

fn load_input(args: &TraceArgs) -> anyhow::Result<LoadedTrace> {
    let (trace, bytes) = if builtin_name(&args.trace).is_some() {
        synthesize(&args.trace, args.seed)?
    } else {
        let bytes = fs::read(&args.trace).with_context(|| format!("reading {}", args.trace))?;
        let trace = load_trace(&args.trace).with_context(|| format!("loading {}", args.trace))?;
        (trace, bytes)
    };
    let trace = if args.infer_sr { annotate_default_sr(&trace) } else { trace };
    Ok(LoadedTrace {
        trace,
        label: args.trace.clone(),
        bytes,
    })
}

fn seed_of(args: &TraceArgs) -> Option<u64> {
    builtin_name(&args.trace).map(|_| args.seed)
}

fn manifest_for<C: Serialize>(command: &str, config: &C, input: &LoadedTrace, seed: Option<u64>) -> RunManifest {
    let mut m = RunManifest::new(command, config, seed);
    m.add_input(input.label.clone(), &input.bytes);
    m
}

fn emit_json<T: Serialize>(value: &T, output: Option<&Path>) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match output {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn check_finite(name: &str, v: f64) -> anyhow::Result<()> {
    if !v.is_finite() {
        bail!("--{name} must be finite, got {v}");
    }
    Ok(())
}

fn baseline_or_local(baseline: Option<f64>, trace: &Trace) -> anyhow::Result<f64> {
    let b = baseline.unwrap_or_else(|| replay_local(trace).end_to_end_us);
    if !(b > 0.0) || !b.is_finite() {
        bail!("baseline must be positive, got {b}; pass --baseline-us");
    }
    Ok(b)
}

#[derive(Serialize)]
struct ClassRow {
    class: ApiClass,
    count: u64,
    api_time_ms: f64,
    share_of_calls: f64,
}

#[derive(Serialize)]
struct AnalyzeReport {
    manifest: RunManifest,
    trace: String,
    sr: bool,
    rows: Vec<ClassRow>,
    total_count: u64,
    total_api_time_ms: f64,
    summary: TraceSummary,
}

fn cmd_analyze(args: &AnalyzeArgs) -> anyhow::Result<()> {
    let input = load_input(&args.input)?;
    let trace = apply_sr(&input.trace, args.sr);
    let summary = summarize(&trace);
    let total = summary.total.count;
    let rows = [ApiClass::Async, ApiClass::Local, ApiClass::Sync]
        .into_iter()
        .map(|class| ClassRow {
            class,
            count: summary.class(class).count,
            api_time_ms: summary.api_time_us(class) / 1000.0,
            share_of_calls: if total == 0 { 0.0 } else { summary.class(class).count as f64 / total as f64 },
        })
        .collect();
    let mut manifest = manifest_for("analyze", args, &input, seed_of(&args.input));
    if let Some(out) = &args.output {
        manifest.add_output(out);
    }
    let report = AnalyzeReport {
        manifest,
        trace: input.label,
        sr: args.sr,
        rows,
        total_count: total,
        total_api_time_ms: summary.total_api_time_us() / 1000.0,
        summary,
    };
    emit_json(&report, args.output.as_deref())
}

/// The cost-model inputs shared by `solve` and `sweep`.
fn model_inputs(model: &ModelArgs, trace: &Trace) -> anyhow::Result<(Trace, NetworkConfig, Grid)> {
    check_finite("start", model.start)?;
    if model.start < 0.0 {
        bail!("--start must be non-negative");
    }
    let start = match &model.network {
        Some(path) => NetworkConfig::load(path)?.start,
        None => StartOverhead::constant(model.start),
    };
    let grid = match &model.grid {
        Some(spec) => Grid::parse(spec)?,
        None => Grid::standard(),
    };
    let sr = !model.no_sr;
    let priced = resolve_classes(trace, sr, sr && !model.no_locality);
    Ok((priced, NetworkConfig::ideal().with_start(start), grid))
}

#[derive(Serialize)]
struct SolveReport {
    manifest: RunManifest,
    trace: String,
    epsilon: f64,
    baseline_us: f64,
    epsilon_us: f64,
    rtt_slope_us_per_us: f64,
    grid_rtts_us: Vec<f64>,
    grid_bandwidths_gbps: Vec<f64>,
    frontier: remoting_lab::RequirementFrontier,
}

fn cmd_solve(args: &SolveArgs) -> anyhow::Result<()> {
    let input = load_input(&args.input)?;
    let (priced, base, grid) = model_inputs(&args.model, &input.trace)?;
    let baseline = baseline_or_local(args.baseline_us, &input.trace)?;
    let budget = Budget::new(args.epsilon, baseline)?;
    let frontier = derive_requirements(&priced, &base, budget, &grid);
    if let Some(d) = &frontier.diagnostic {
        eprintln!("remolab: {d}");
    }
    let mut manifest = manifest_for("solve", args, &input, seed_of(&args.input));
    if let Some(out) = &args.output {
        manifest.add_output(out);
    }
    let report = SolveReport {
        manifest,
        trace: input.label,
        epsilon: args.epsilon,
        baseline_us: baseline,
        epsilon_us: budget.epsilon_us(),
        rtt_slope_us_per_us: rtt_slope(&priced),
        grid_rtts_us: grid.rtts_us().to_vec(),
        grid_bandwidths_gbps: grid.bandwidths_gbps(),
        frontier,
    };
    emit_json(&report, args.output.as_deref())
}

fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let input = load_input(&args.input)?;
    let (priced, base, grid) = model_inputs(&args.model, &input.trace)?;
    let baseline = baseline_or_local(args.baseline_us, &input.trace)?;
    let result = sweep(&priced, &base, &grid, baseline);
    let file = fs::File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    result.write_csv(file)?;
    let mut manifest = manifest_for("sweep", args, &input, seed_of(&args.input));
    manifest.add_output(&args.output);
    write_sidecar(&args.output, &manifest)?;
    eprintln!("remolab: wrote {} ({} x {} cells)", args.output.display(), result.rtts_us.len(), result.bandwidths_gbps.len());
    Ok(())
}

#[derive(Serialize)]
struct ModelSection {
    model_degradation: f64,
    replay_degradation: f64,
    gap: f64,
    breakdown: CostBreakdown,
}

#[derive(Serialize)]
struct ReplayReport {
    manifest: RunManifest,
    trace: String,
    options: ReplayOptions,
    end_to_end_us: f64,
    local_end_us: f64,
    baseline_us: f64,
    degradation: f64,
    device_busy_us: f64,
    total_arrival_delay_us: f64,
    calls: usize,
    message_count: u64,
    packet_count: u64,
    max_outstanding: usize,
    assertions: InvariantReport,
    violations: Vec<&'static str>,
    model_comparison: Option<ModelSection>,
}

fn replay_options(args: &ReplayArgs) -> anyhow::Result<ReplayOptions> {
    let dispatch: Dispatch = args
        .dispatch
        .parse()
        .map_err(|e: String| anyhow::anyhow!("--dispatch: {e}"))?;
    let file = args.network.as_ref().map(NetworkConfig::load).transpose()?;
    let mut start = file.as_ref().map(|n| n.start.clone()).unwrap_or_default();
    if let Some(s) = args.start {
        check_finite("start", s)?;
        if s < 0.0 {
            bail!("--start must be non-negative");
        }
        start.default_us = s;
    }
    let transport = if args.ideal {
        TransportKind::Ideal
    } else {
        let rtt = args.rtt.or(file.as_ref().map(|n| n.rtt_us));
        let gbps = args.bw.or(file.as_ref().map(|n| n.bandwidth_gbps()));
        let (Some(rtt), Some(gbps)) = (rtt, gbps) else {
            bail!("give --rtt and --bw, a --network file, or --ideal");
        };
        check_finite("rtt", rtt)?;
        check_finite("bw", gbps)?;
        TransportKind::Emulated(NetworkConfig::from_gbps(rtt, gbps, 0.0)?)
    };
    let sr = !args.no_sr;
    let opts = ReplayOptions {
        sr,
        locality: sr && !args.no_locality,
        dispatch,
        transport,
        start,
    };
    opts.validate()?;
    Ok(opts)
}

fn protocol_fault(e: ReplayError) -> anyhow::Error {
    match e {
        ReplayError::Protocol(p) => AssertionFailure(format!("protocol fault: {p}")).into(),
        other => other.into(),
    }
}

fn cmd_replay(args: &ReplayArgs) -> anyhow::Result<()> {
    let input = load_input(&args.input)?;
    let opts = replay_options(args)?;
    if args.compare_model && opts.dispatch != Dispatch::OutstandingRequests {
        bail!("--compare-model needs --dispatch or");
    }
    let local_end = replay_local(&input.trace).end_to_end_us;
    let baseline = baseline_or_local(args.baseline_us, &input.trace)?;
    let (result, model) = if args.compare_model {
        let c = compare_model(&input.trace, &opts, Some(baseline)).map_err(protocol_fault)?;
        let section = ModelSection {
            model_degradation: c.model_degradation,
            replay_degradation: c.replay_degradation,
            gap: c.gap,
            breakdown: c.model,
        };
        (c.replay, Some(section))
    } else {
        (replay_remote(&input.trace, &opts).map_err(protocol_fault)?, None)
    };
    let mut manifest = manifest_for("replay", args, &input, seed_of(&args.input));
    if let Some(path) = &args.device_log {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_log_csv(&result.device_log, file)?;
        manifest.add_output(path);
    }
    if let Some(path) = &args.link_log {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_events_csv(&result.link_events, file)?;
        manifest.add_output(path);
    }
    if let Some(out) = &args.output {
        manifest.add_output(out);
    }
    for path in [&args.device_log, &args.link_log].into_iter().flatten() {
        write_sidecar(path, &manifest)?;
    }
    let violations = result.invariants.violations();
    let report = ReplayReport {
        manifest,
        trace: input.label,
        end_to_end_us: result.end_to_end_us,
        local_end_us: local_end,
        baseline_us: baseline,
        degradation: (result.end_to_end_us - local_end) / baseline,
        device_busy_us: result.device_busy_us,
        total_arrival_delay_us: result.total_arrival_delay_us(),
        calls: result.calls,
        message_count: result.message_count,
        packet_count: result.packet_count,
        max_outstanding: result.max_outstanding,
        assertions: result.invariants,
        violations: violations.clone(),
        model_comparison: model,
        options: opts,
    };
    emit_json(&report, args.output.as_deref())?;
    if !violations.is_empty() {
        return Err(AssertionFailure(format!("replay invariants violated: {}", violations.join(", "))).into());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let (trace, bytes) = synthesize(&args.profile, args.seed)?;
    let file = fs::File::create(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
    write_trace(&trace, std::io::BufWriter::new(file))?;
    let mut manifest = RunManifest::new("synth", args, Some(args.seed));
    manifest.add_input(args.profile.clone(), &bytes);
    manifest.add_output(&args.output);
    write_sidecar(&args.output, &manifest)?;
    let [a, s, l] = apply_sr(&trace, true).class_counts();
    eprintln!(
        "remolab: wrote {} calls to {} (with SR: {a} async, {l} local, {s} sync)",
        trace.len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_profiles() -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    for name in profiles::names() {
        let p = profiles::builtin(name).expect("built-in profiles parse");
        writeln!(out, "{BUILTIN_PREFIX}{name}\t{} calls", p.total_count())?;
    }
    writeln!(out, "{BUILTIN_PREFIX}{TRAINING}\tsynthetic training iterations")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Profiles => cmd_profiles(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("remolab: {e:#}");
            if e.downcast_ref::<AssertionFailure>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
