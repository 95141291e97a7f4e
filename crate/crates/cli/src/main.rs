//! `linkforge` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or parse error, 3 I/O or
//! environment error.

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::anyhow;
use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use linkforge::engine::{DirStats, FlowLog, LinkStats};
use linkforge::live::{run_loopback, LiveConfig, LiveError};
use linkforge::log::LogParseError;
use linkforge::metrics::RunSummary;
use linkforge::model::Direction;
use linkforge::pipeline::{compare, format_completion_table, record, PipelineError};
use linkforge::report::{
    analyze, metrics_dir, read_logs, scenario_path, schedule_capacity, trace_capacity, trace_path, traces_dir,
    write_aggregate, write_drops, write_logs, write_metrics, write_replay_summary, write_run, write_scenario_source,
    write_traces, BinCapacity,
};
use linkforge::saturator::{ControllerParams, Profile};
use linkforge::scenario::{library, library_source, parse_scenario, run_scenario, FlowParams, ScenarioConfig};
use linkforge::trace::{log_to_trace, read_trace, DeliveryTrace, TraceError};
use linkforge::units::{parse_probability, parse_rate};

#[derive(Parser)]
#[command(name = "linkforge", version, about = "Record, replay and simulate wireless links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Cellular,
    Wifi,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Cellular => Profile::Cellular,
            ProfileArg::Wifi => Profile::Wifi,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CapacityArg {
    /// Use `metrics/replay.csv` to decide between traces and medium.
    Auto,
    Medium,
    Traces,
    None,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// RNG seed; defaults to the scenario's own seed.
    #[arg(long, env = "LINKFORGE_SEED")]
    seed: Option<u64>,
    /// Override the saturator profile of every saturator flow.
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario on the simulated medium.
    Simulate {
        /// Scenario file or library name.
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
        /// Run this many consecutive seeds, in parallel, into seed-<n>/ subdirectories.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        repeats: u32,
    },
    /// Run a scenario and turn what its saturators received into traces.
    Record {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a workload over recorded traces and on the medium, and compare.
    ///
    /// Each trace argument is a trace file (direction taken from an `up=` or
    /// `down=` prefix, else from whether the name contains "downlink"), or a
    /// record output directory. The last argument is the workload scenario.
    Replay {
        #[arg(required = true, num_args = 2.., value_name = "TRACE... WORKLOAD")]
        args: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
        /// Drop each delivered packet with this probability.
        #[arg(long)]
        inject_loss: Option<String>,
    },
    /// Recompute metrics from the logs in an output directory.
    Analyze {
        dir: PathBuf,
        /// Scenario to analyze against; defaults to the copy in the directory.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, value_enum, default_value = "auto")]
        capacity: CapacityArg,
    },
    /// Run the scenario's uplink saturator over UDP sockets on 127.0.0.1.
    LiveLoopback {
        scenario: String,
        #[command(flatten)]
        run: RunArgs,
        /// Sender pacing rate, e.g. 20Mbps; `none` sends as fast as the window allows.
        #[arg(long, default_value = "20Mbps")]
        rate: String,
        /// Port of the receiver's data socket (0 picks one).
        #[arg(long, default_value_t = 0)]
        data_port: u16,
        /// Port of the sender's feedback socket (0 picks one).
        #[arg(long, default_value_t = 0)]
        feedback_port: u16,
        /// Ignore all ACKs, leaving recovery to the stall watchdog.
        #[arg(long)]
        block_feedback: bool,
    },
    /// Shipped scenarios.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// List the shipped scenarios.
    List,
    /// Print a shipped scenario's source.
    Show { name: String },
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult<T = ()> = Result<T, Failure>;

fn config_err(e: impl Display) -> Failure {
    Failure {
        code: 2,
        error: anyhow!("{e}"),
    }
}

fn io_err(what: impl Display) -> impl FnOnce(io::Error) -> Failure {
    move |e| Failure {
        code: 3,
        error: anyhow!("{what}: {e}"),
    }
}

fn load_scenario(arg: &str) -> CmdResult<(ScenarioConfig, String)> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(io_err(format!("cannot read {arg}")))?
    } else if let Some(src) = library_source(arg) {
        src.to_string()
    } else {
        return Err(config_err(format!(
            "`{arg}` is neither a scenario file nor a shipped scenario (see `linkforge scenario list`)"
        )));
    };
    let cfg = parse_scenario(&text).map_err(|e| config_err(format!("invalid scenario {arg}:\n{e}")))?;
    Ok((cfg, text))
}

fn prepare(arg: &str, run: &RunArgs) -> CmdResult<(ScenarioConfig, String, u64)> {
    let (mut cfg, text) = load_scenario(arg)?;
    if let Some(p) = run.profile {
        cfg = cfg.with_profile(p.into());
    }
    let seed = run.seed.unwrap_or(cfg.seed);
    Ok((cfg, text, seed))
}

fn mbps(bps: f64) -> String {
    format!("{:.2} Mbps", bps / 1e6)
}

fn print_summary(summary: &RunSummary) {
    println!(
        "{:<5} {:<12} {:<9} {:<9} {:>9} {:>9} {:>8} {:>12} {:>7} {:>10}",
        "flow", "label", "kind", "dir", "sent", "recv", "loss", "throughput", "ratio", "completion"
    );
    for f in &summary.flows {
        println!(
            "{:<5} {:<12} {:<9} {:<9} {:>9} {:>9} {:>7.2}% {:>12} {:>7} {:>10}",
            f.flow_id,
            f.label,
            f.kind.as_str(),
            f.dir.as_str(),
            f.sent_packets,
            f.recv_packets,
            f.loss.as_f64() * 100.0,
            mbps(f.mean_bps),
            f.mean_ratio.map_or_else(|| "-".into(), |r| format!("{r:.3}")),
            f.completion.map_or_else(|| "-".into(), |t| format!("{:.3}s", t.as_secs_f64())),
        );
    }
}

fn simulate_one(cfg: &ScenarioConfig, text: &str, seed: u64, out: &Path) -> CmdResult<RunSummary> {
    let run = run_scenario(cfg, seed).map_err(config_err)?;
    let cap = schedule_capacity(&cfg.medium.capacity, cfg.bin_ms, cfg.duration);
    let analysis = analyze(cfg, &run.flows, run.stats(), &cap, seed);
    let write = io_err(format!("cannot write {}", out.display()));
    write_scenario_source(out, text)
        .and_then(|_| write_run(out, cfg, &run.flows, &run.stats(), &analysis))
        .map_err(write)?;
    info!("wrote {}", out.display());
    Ok(analysis.summary)
}

fn cmd_simulate(scenario: &str, run: &RunArgs, repeats: u32) -> CmdResult {
    let (cfg, text, base) = prepare(scenario, run)?;
    if repeats == 1 {
        let summary = simulate_one(&cfg, &text, base, &run.out)?;
        print_summary(&summary);
        return Ok(());
    }
    let seeds: Vec<u64> = (0..repeats as u64).map(|i| base + i).collect();
    let workers = thread::available_parallelism().map_or(1, |n| n.get());
    let mut summaries = Vec::new();
    for batch in seeds.chunks(workers) {
        let results: Vec<CmdResult<RunSummary>> = thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&seed| {
                    let (cfg, text) = (&cfg, &text);
                    let out = run.out.join(format!("seed-{seed}"));
                    s.spawn(move || simulate_one(cfg, text, seed, &out))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        });
        for r in results {
            summaries.push(r?);
        }
    }
    for summary in &summaries {
        println!("seed {}", summary.seed);
        print_summary(summary);
    }
    write_scenario_source(&run.out, &text)
        .and_then(|_| write_aggregate(&run.out, &summaries))
        .map_err(io_err(format!("cannot write {}", run.out.display())))?;
    println!("aggregate: {}", metrics_dir(&run.out).join("aggregate.csv").display());
    Ok(())
}

fn describe_trace(dir: Direction, t: &DeliveryTrace, path: &Path) {
    let rate = t.total_bytes() as f64 * 8.0 * 1000.0 / t.period_ms() as f64;
    println!(
        "{dir} trace: {} opportunities over {:.1} s, mean {} -> {}",
        t.len(),
        t.period_ms() as f64 / 1000.0,
        mbps(rate),
        path.display()
    );
}

fn cmd_record(scenario: &str, run: &RunArgs) -> CmdResult {
    let (cfg, text, seed) = prepare(scenario, run)?;
    let rec = record(&cfg, seed).map_err(|e| match e {
        PipelineError::NoSaturator(_) | PipelineError::Sim(_) => config_err(e),
        PipelineError::Trace(TraceError::Empty) => config_err("the saturator delivered nothing, so there is no trace"),
        PipelineError::Trace(e) => config_err(e),
    })?;
    let cap = schedule_capacity(&cfg.medium.capacity, cfg.bin_ms, cfg.duration);
    let analysis = analyze(&cfg, &rec.run.flows, rec.run.stats(), &cap, seed);
    let out = &run.out;
    write_scenario_source(out, &text)
        .and_then(|_| write_run(out, &cfg, &rec.run.flows, &rec.run.stats(), &analysis))
        .and_then(|_| write_traces(out, [rec.trace(Direction::Uplink), rec.trace(Direction::Downlink)]))
        .map_err(io_err(format!("cannot write {}", out.display())))?;
    print_summary(&analysis.summary);
    for dir in Direction::BOTH {
        if let Some(t) = rec.trace(dir) {
            describe_trace(dir, t, &trace_path(out, dir));
        }
    }
    Ok(())
}

fn load_trace(path: &Path) -> CmdResult<DeliveryTrace> {
    read_trace(path).map_err(|e| config_err(format!("cannot load trace {}: {e}", path.display())))
}

/// Resolve trace arguments into at most one trace per direction.
fn load_traces(args: &[String]) -> CmdResult<[Option<DeliveryTrace>; 2]> {
    let mut traces: [Option<DeliveryTrace>; 2] = [None, None];
    let mut put = |dir: Direction, t: DeliveryTrace, from: &str| {
        if traces[dir.index()].replace(t).is_some() {
            return Err(config_err(format!("more than one {dir} trace given (at {from})")));
        }
        Ok(())
    };
    for arg in args {
        let (dir, path) = match arg.split_once('=') {
            Some(("up" | "uplink", p)) => (Some(Direction::Uplink), p),
            Some(("down" | "downlink", p)) => (Some(Direction::Downlink), p),
            _ => (None, arg.as_str()),
        };
        let path = Path::new(path);
        if dir.is_none() && path.is_dir() {
            let mut found = false;
            for d in Direction::BOTH {
                let p = trace_path(path, d);
                if p.exists() {
                    put(d, load_trace(&p)?, arg)?;
                    found = true;
                }
            }
            if !found {
                return Err(config_err(format!("no traces under {}", traces_dir(path).display())));
            }
            continue;
        }
        let dir = dir.unwrap_or_else(|| {
            let name = path.file_name().map(|n| n.to_string_lossy().to_lowercase()).unwrap_or_default();
            if name.contains("downlink") {
                Direction::Downlink
            } else {
                Direction::Uplink
            }
        });
        put(dir, load_trace(path)?, arg)?;
    }
    Ok(traces)
}

fn cmd_replay(args: &[String], run: &RunArgs, inject_loss: Option<&str>) -> CmdResult {
    let (workload_arg, trace_args) = args.split_last().expect("clap requires two arguments");
    let (mut cfg, text, seed) = prepare(workload_arg, run)?;
    if let Some(p) = inject_loss {
        cfg.replay.inject_loss = parse_probability(p).map_err(|e| config_err(format!("--inject-loss: {e}")))?;
    }
    let [up, down] = load_traces(trace_args)?;
    let cap: BinCapacity = [&up, &down].map(|t| {
        t.as_ref()
            .map(|t| trace_capacity(t, cfg.bin_ms, cfg.duration, cfg.replay.wrap))
    });
    let cmp = compare(&cfg, up.clone(), down.clone(), seed).map_err(config_err)?;

    let out = &run.out;
    let replay_stats = cmp.replayed.stats();
    let analysis = analyze(&cfg, &cmp.replayed.flows, replay_stats, &cap, seed);
    let network = out.join("network");
    let net_cap = schedule_capacity(&cfg.medium.capacity, cfg.bin_ms, cfg.duration);
    let net_analysis = analyze(&cfg, &cmp.direct.flows, cmp.direct.stats(), &net_cap, seed);
    write_scenario_source(out, &text)
        .and_then(|_| write_traces(out, [up.as_ref(), down.as_ref()]))
        .and_then(|_| write_run(out, &cfg, &cmp.replayed.flows, &replay_stats, &analysis))
        .and_then(|_| write_replay_summary(out, &cmp.replayed.link.summary()))
        .and_then(|_| write_scenario_source(&network, &text))
        .and_then(|_| write_run(&network, &cfg, &cmp.direct.flows, &cmp.direct.stats(), &net_analysis))
        .map_err(io_err(format!("cannot write {}", out.display())))?;

    print_summary(&analysis.summary);
    let summary = cmp.replayed.link.summary();
    for dir in Direction::BOTH {
        let l = summary.lane(dir);
        println!(
            "{dir} lane: {} delivered, {} dropped, {} injected losses, {} wraps{}",
            l.delivered,
            l.dropped,
            l.injected_loss,
            l.wraps,
            if l.dark { ", dark" } else { "" }
        );
    }
    if cmp.rows.is_empty() {
        println!("workload has no bulk transfer; no completion times to compare");
    } else {
        print!("{}", format_completion_table(&cmp.rows));
    }
    Ok(())
}

fn read_capacity_choice(dir: &Path, choice: CapacityArg) -> CapacityArg {
    match choice {
        CapacityArg::Auto if metrics_dir(dir).join("replay.csv").exists() => CapacityArg::Traces,
        CapacityArg::Auto => CapacityArg::Medium,
        c => c,
    }
}

fn cmd_analyze(dir: &Path, scenario: Option<&str>, capacity: CapacityArg) -> CmdResult {
    let (cfg, _) = match scenario {
        Some(s) => load_scenario(s)?,
        None => load_scenario(&scenario_path(dir).to_string_lossy())?,
    };
    let logs = read_logs(dir).map_err(|e| match e {
        LogParseError::Io(e) => io_err(format!("cannot read logs in {}", dir.display()))(e),
        e => config_err(e),
    })?;
    let flows: Vec<FlowLog> = logs.into_iter().map(|(f, _)| f).collect();
    let cap: BinCapacity = match read_capacity_choice(dir, capacity) {
        CapacityArg::Medium => schedule_capacity(&cfg.medium.capacity, cfg.bin_ms, cfg.duration),
        CapacityArg::Traces => {
            let mut cap: BinCapacity = [None, None];
            for d in Direction::BOTH {
                let p = trace_path(dir, d);
                if p.exists() {
                    let t = load_trace(&p)?;
                    cap[d.index()] = Some(trace_capacity(&t, cfg.bin_ms, cfg.duration, cfg.replay.wrap));
                }
            }
            cap
        }
        CapacityArg::None | CapacityArg::Auto => [None, None],
    };
    let analysis = analyze(&cfg, &flows, LinkStats::default(), &cap, cfg.seed);
    write_metrics(dir, &analysis).map_err(io_err(format!("cannot write {}", dir.display())))?;
    print_summary(&analysis.summary);
    Ok(())
}

/// Link counters reconstructed from a flow's own logs.
fn stats_from_logs(flow: &FlowLog, summary: &RunSummary) -> LinkStats {
    let mut stats = LinkStats::default();
    if let Some(f) = summary.flow(flow.flow_id, flow.dir) {
        stats.dirs[flow.dir.index()] = DirStats {
            enqueued: f.sent_packets,
            delivered: f.recv_packets,
            wire_losses: f.sent_packets - f.recv_packets,
            ..DirStats::default()
        };
    }
    stats
}

struct LiveArgs<'a> {
    rate: &'a str,
    data_port: u16,
    feedback_port: u16,
    block_feedback: bool,
}

fn cmd_live(scenario: &str, run: &RunArgs, live: LiveArgs) -> CmdResult {
    let (cfg, text, seed) = prepare(scenario, run)?;
    let spec = cfg
        .flows
        .iter()
        .find(|f| f.dirs.contains(&Direction::Uplink) && matches!(f.params, FlowParams::Saturator { .. }))
        .ok_or_else(|| config_err(format!("scenario `{}` has no uplink saturator flow", cfg.name)))?;
    let FlowParams::Saturator { profile, watchdog } = spec.params else {
        unreachable!("filtered on saturator flows");
    };
    let rate_bps = match live.rate {
        "none" | "unlimited" => None,
        r => Some(parse_rate(r).map_err(|e| config_err(format!("--rate: {e}")))?),
    };
    let live_cfg = LiveConfig {
        flow_id: spec.id,
        packet_size: spec.packet_size,
        watchdog,
        rate_bps,
        data_port: live.data_port,
        feedback_port: live.feedback_port,
        block_feedback: live.block_feedback,
        ..LiveConfig::new(cfg.duration, ControllerParams::for_profile(profile, cfg.medium.buffer(Direction::Uplink)))
    };
    let output = run_loopback(&live_cfg).map_err(|e| match e {
        LiveError::Bind { .. } | LiveError::Io(_) | LiveError::Receiver => Failure {
            code: 3,
            error: anyhow!("{e}"),
        },
    })?;
    info!("data on {}, feedback on {}", output.data_addr, output.feedback_addr);

    let flows = [output.flow];
    let analysis = analyze(&cfg, &flows, LinkStats::default(), &[None, None], seed);
    let stats = stats_from_logs(&flows[0], &analysis.summary);
    let trace = match log_to_trace(&flows[0].recv_log, Direction::Uplink) {
        Ok(t) => Some(t),
        Err(TraceError::Empty) => None,
        Err(e) => return Err(config_err(e)),
    };
    let out = &run.out;
    write_scenario_source(out, &text)
        .and_then(|_| write_logs(out, &cfg, &flows))
        .and_then(|_| write_drops(out, &stats))
        .and_then(|_| write_metrics(out, &analysis))
        .and_then(|_| write_traces(out, [trace.as_ref(), None]))
        .map_err(io_err(format!("cannot write {}", out.display())))?;
    print_summary(&analysis.summary);
    println!("watchdog resets: {}", output.watchdog_resets);
    if let Some(t) = &trace {
        describe_trace(Direction::Uplink, t, &trace_path(out, Direction::Uplink));
    }
    Ok(())
}

fn cmd_scenario(command: &ScenarioCommand) -> CmdResult {
    match command {
        ScenarioCommand::List => {
            for e in library() {
                println!(
                    "{:<14} {:<8} {:<20} {}",
                    e.name,
                    format!("{:.0}s", e.config.duration.as_secs_f64()),
                    e.expected_properties.join(","),
                    e.config.description
                );
            }
        }
        ScenarioCommand::Show { name } => {
            let src = library_source(name).ok_or_else(|| config_err(format!("no shipped scenario `{name}`")))?;
            print!("{src}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { scenario, run, repeats } => cmd_simulate(scenario, run, *repeats),
        Command::Record { scenario, run } => cmd_record(scenario, run),
        Command::Replay { args, run, inject_loss } => cmd_replay(args, run, inject_loss.as_deref()),
        Command::Analyze {
            dir,
            scenario,
            capacity,
        } => cmd_analyze(dir, scenario.as_deref(), *capacity),
        Command::LiveLoopback {
            scenario,
            run,
            rate,
            data_port,
            feedback_port,
            block_feedback,
        } => cmd_live(
            scenario,
            run,
            LiveArgs {
                rate,
                data_port: *data_port,
                feedback_port: *feedback_port,
                block_feedback: *block_feedback,
            },
        ),
        Command::Scenario { command } => cmd_scenario(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
