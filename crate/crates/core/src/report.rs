//! Turning runs into metrics and files.
//!
//! Output directory layout, shared by every command:
//!
//! ```text
//! out/scenario.toml             the scenario the run used
//! out/logs/index.csv            flow_id,dir,kind,label,start_us,file
//! out/logs/flow<id>_<dir>.csv   packet log of one flow direction
//! out/traces/<dir>.trace        delivery traces recorded or replayed
//! out/metrics/drops.csv         per-direction link accounting
//! out/metrics/replay.csv        replay lane counters (replay only)
//! out/metrics/series.csv        bin_start_ms,flow_id,dir,throughput_bps,ratio
//! out/metrics/summary.csv       one row per flow direction
//! ```

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::engine::{FlowKind, FlowLog, LinkStats};
use crate::log::{read_log, write_log, LogEvent, LogParseError, LogRecord};
use crate::metrics::{available_capacity, completion_time, throughput, FlowSummary, RunSummary, ThroughputSeries};
use crate::model::{CapacitySchedule, Direction, FlowId, Timestamp};
use crate::replay::ReplaySummary;
use crate::scenario::{FlowParams, ScenarioConfig};
use crate::trace::{write_trace, DeliveryTrace};

/// Capacity per bin for each direction, when known.
pub type BinCapacity = [Option<Vec<f64>>; 2];

/// Bins of a shared medium: both directions see the same capacity.
pub fn schedule_capacity(cap: &CapacitySchedule, bin_ms: u64, duration: Timestamp) -> BinCapacity {
    let bins = duration.as_millis().div_ceil(bin_ms) as usize;
    let v = available_capacity(cap, bin_ms, bins, 0);
    [Some(v.clone()), Some(v)]
}

/// Rate a trace offers in each bin, repeating it if `wrap` is set.
pub fn trace_capacity(trace: &DeliveryTrace, bin_ms: u64, duration: Timestamp, wrap: bool) -> Vec<f64> {
    let bins = duration.as_millis().div_ceil(bin_ms) as usize;
    let mut counts = vec![0u64; bins];
    let period = trace.period_ms();
    let mut base = 0u64;
    'passes: loop {
        for &ms in &trace.opportunities_ms {
            let bin = ((base + ms) / bin_ms) as usize;
            if bin >= bins {
                break 'passes;
            }
            counts[bin] += 1;
        }
        if !wrap {
            break;
        }
        base += period;
    }
    let bits = trace.mtu_bytes as f64 * 8.0;
    counts.into_iter().map(|c| c as f64 * bits * 1000.0 / bin_ms as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesRow {
    pub bin_start_ms: u64,
    pub flow_id: FlowId,
    pub dir: Direction,
    pub throughput_bps: f64,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct Analysis {
    pub summary: RunSummary,
    pub series: Vec<SeriesRow>,
    pub throughput: Vec<(FlowId, Direction, ThroughputSeries)>,
}

impl Analysis {
    pub fn series_of(&self, id: FlowId, dir: Direction) -> Option<&ThroughputSeries> {
        self.throughput
            .iter()
            .find(|(i, d, _)| *i == id && *d == dir)
            .map(|(_, _, s)| s)
    }

    /// Bin-wise sum over every flow with `label` in `dir`.
    pub fn label_series(&self, cfg: &ScenarioConfig, label: &str, dir: Direction) -> ThroughputSeries {
        let mut acc: Option<ThroughputSeries> = None;
        for (id, d, s) in &self.throughput {
            if *d != dir || cfg.flow(*id).is_none_or(|f| f.label != label) {
                continue;
            }
            acc = Some(match acc {
                None => s.clone(),
                Some(a) => a.add(s),
            });
        }
        acc.unwrap_or_else(|| ThroughputSeries::from_bytes(cfg.bin_ms, Vec::new()))
    }
}

fn expected_bps(cfg: &ScenarioConfig, flow: &FlowLog, avail: f64) -> f64 {
    let Some(spec) = cfg.flow(flow.flow_id) else {
        return avail;
    };
    match spec.params {
        FlowParams::Cbr { rate } => rate as f64,
        FlowParams::Aimd { rate_cap: Some(cap), .. } => cap as f64,
        FlowParams::Aimd { rate_cap: None, .. } => {
            let sharing = cfg.flows.iter().filter(|f| f.dirs.contains(&flow.dir)).count();
            avail / sharing.max(1) as f64
        }
        FlowParams::Saturator { .. } | FlowParams::Bulk { .. } => {
            avail - cfg.reserved_bps(flow.flow_id, flow.dir) as f64
        }
    }
}

/// Compute the series and summary of a run.
pub fn analyze(cfg: &ScenarioConfig, flows: &[FlowLog], stats: LinkStats, capacity: &BinCapacity, seed: u64) -> Analysis {
    let mut series = Vec::new();
    let mut summaries = Vec::new();
    let mut tps = Vec::new();
    for flow in flows {
        let tp = throughput(&flow.recv_log, flow.dir, cfg.bin_ms, cfg.duration);
        let avail = capacity[flow.dir.index()].as_deref();
        let mut ratios = Vec::with_capacity(tp.len());
        for (i, &bps) in tp.values.iter().enumerate() {
            let ratio = avail.and_then(|a| a.get(i)).and_then(|&a| {
                let e = expected_bps(cfg, flow, a);
                (e > 0.0).then(|| bps / e)
            });
            ratios.push(ratio);
            series.push(SeriesRow {
                bin_start_ms: tp.bin_start(i).as_millis(),
                flow_id: flow.flow_id,
                dir: flow.dir,
                throughput_bps: bps,
                ratio,
            });
        }
        let spec = cfg.flow(flow.flow_id);
        let label = spec.map_or_else(|| flow.kind.to_string(), |s| s.label.clone());
        let mut s = FlowSummary::from_log(flow, &label, cfg.duration);
        let known: Vec<f64> = ratios.into_iter().flatten().collect();
        if !known.is_empty() {
            s.mean_ratio = Some(known.iter().sum::<f64>() / known.len() as f64);
        }
        if let Some(FlowParams::Bulk { bytes, .. }) = spec.map(|s| s.params) {
            s.completion = completion_time(flow, bytes).ok();
        }
        summaries.push(s);
        tps.push((flow.flow_id, flow.dir, tp));
    }
    Analysis {
        summary: RunSummary {
            seed,
            flows: summaries,
            drops: stats.dirs,
        },
        series,
        throughput: tps,
    }
}

pub fn logs_dir(out: &Path) -> PathBuf {
    out.join("logs")
}

pub fn metrics_dir(out: &Path) -> PathBuf {
    out.join("metrics")
}

pub fn traces_dir(out: &Path) -> PathBuf {
    out.join("traces")
}

pub fn trace_path(out: &Path, dir: Direction) -> PathBuf {
    traces_dir(out).join(format!("{dir}.trace"))
}

pub fn scenario_path(out: &Path) -> PathBuf {
    out.join("scenario.toml")
}

pub fn write_scenario_source(out: &Path, text: &str) -> io::Result<()> {
    fs::create_dir_all(out)?;
    fs::write(scenario_path(out), text)
}

/// Write the traces that are present, indexed by [`Direction::index`].
pub fn write_traces(out: &Path, traces: [Option<&DeliveryTrace>; 2]) -> io::Result<()> {
    fs::create_dir_all(traces_dir(out))?;
    for dir in Direction::BOTH {
        if let Some(t) = traces[dir.index()] {
            write_trace(t, &trace_path(out, dir))?;
        }
    }
    Ok(())
}

pub fn write_replay_summary(out: &Path, summary: &ReplaySummary) -> io::Result<()> {
    let dir = metrics_dir(out);
    fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join("replay.csv"))?;
    writeln!(w, "dir,delivered,dropped,injected_loss,wraps,dark")?;
    for d in Direction::BOTH {
        let l = summary.lane(d);
        writeln!(w, "{d},{},{},{},{},{}", l.delivered, l.dropped, l.injected_loss, l.wraps, l.dark)?;
    }
    w.flush()
}

fn create(path: &Path) -> io::Result<io::BufWriter<fs::File>> {
    Ok(io::BufWriter::new(fs::File::create(path)?))
}

fn log_file_name(flow: &FlowLog) -> String {
    format!("flow{}_{}.csv", flow.flow_id, flow.dir)
}

/// Sender and receiver records of one flow direction, in time order.
pub fn merged_log(flow: &FlowLog) -> Vec<LogRecord> {
    let mut all: Vec<LogRecord> = flow.send_log.iter().chain(&flow.recv_log).cloned().collect();
    all.sort_by_key(|r| r.t);
    all
}

pub fn write_logs(out: &Path, cfg: &ScenarioConfig, flows: &[FlowLog]) -> io::Result<()> {
    let dir = logs_dir(out);
    fs::create_dir_all(&dir)?;
    let mut index = create(&dir.join("index.csv"))?;
    writeln!(index, "flow_id,dir,kind,label,start_us,file")?;
    for flow in flows {
        let name = log_file_name(flow);
        let label = cfg.flow(flow.flow_id).map_or_else(|| flow.kind.to_string(), |s| s.label.clone());
        writeln!(
            index,
            "{},{},{},{},{},{}",
            flow.flow_id,
            flow.dir,
            flow.kind,
            label,
            flow.start.as_micros(),
            name
        )?;
        write_log(create(&dir.join(name))?, &merged_log(flow))?;
    }
    index.flush()
}

/// Read logs written by [`write_logs`], returning each flow with its label.
pub fn read_logs(out: &Path) -> Result<Vec<(FlowLog, String)>, LogParseError> {
    let log_dir = logs_dir(out);
    let index = BufReader::new(fs::File::open(log_dir.join("index.csv"))?);
    let mut flows = Vec::new();
    for (i, line) in index.lines().enumerate().skip(1) {
        let line = line?;
        let bad = |message: String| LogParseError::Malformed { line: i + 1, message };
        let cols: Vec<&str> = line.split(',').collect();
        let [id, d, kind, label, start, file] = cols[..] else {
            return Err(bad(format!("expected 6 columns in index, found {}", cols.len())));
        };
        let flow_id = id.parse().map_err(|_| bad(format!("bad flow id `{id}`")))?;
        let dir: Direction = d.parse().map_err(|e: String| bad(e))?;
        let kind: FlowKind = kind.parse().map_err(bad)?;
        let start = Timestamp::from_micros(start.parse().map_err(|_| bad(format!("bad start `{start}`")))?);
        let records = read_log(BufReader::new(fs::File::open(log_dir.join(file))?))?;
        let (send_log, recv_log) = records
            .into_iter()
            .partition(|r| matches!(r.event, LogEvent::DataSent | LogEvent::AckRecv));
        flows.push((
            FlowLog {
                flow_id,
                dir,
                kind,
                start,
                send_log,
                recv_log,
            },
            label.to_string(),
        ));
    }
    Ok(flows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

pub fn write_drops(out: &Path, stats: &LinkStats) -> io::Result<()> {
    let dir = metrics_dir(out);
    fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join("drops.csv"))?;
    writeln!(w, "dir,enqueued,delivered,queue_drops,wire_losses,in_link,wraps")?;
    for d in Direction::BOTH {
        let s = stats.dir(d);
        writeln!(
            w,
            "{d},{},{},{},{},{},{}",
            s.enqueued, s.delivered, s.queue_drops, s.wire_losses, s.in_link, s.wraps
        )?;
    }
    w.flush()
}

pub const SUMMARY_HEADER: &str =
    "seed,flow_id,label,kind,dir,sent_packets,sent_bytes,recv_packets,recv_bytes,loss,mean_bps,mean_ratio,completion_s";

pub fn summary_rows(summary: &RunSummary) -> Vec<String> {
    summary
        .flows
        .iter()
        .map(|f| {
            format!(
                "{},{},{},{},{},{},{},{},{},{:.6},{:.1},{},{}",
                summary.seed,
                f.flow_id,
                f.label,
                f.kind,
                f.dir,
                f.sent_packets,
                f.sent_bytes,
                f.recv_packets,
                f.recv_bytes,
                f.loss.as_f64(),
                f.mean_bps,
                fmt_opt(f.mean_ratio),
                f.completion.map_or_else(String::new, |t| format!("{:.6}", t.as_secs_f64())),
            )
        })
        .collect()
}

pub fn write_metrics(out: &Path, analysis: &Analysis) -> io::Result<()> {
    let dir = metrics_dir(out);
    fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join("series.csv"))?;
    writeln!(w, "bin_start_ms,flow_id,dir,throughput_bps,ratio")?;
    for r in &analysis.series {
        writeln!(
            w,
            "{},{},{},{:.1},{}",
            r.bin_start_ms,
            r.flow_id,
            r.dir,
            r.throughput_bps,
            fmt_opt(r.ratio)
        )?;
    }
    w.flush()?;
    let mut w = create(&dir.join("summary.csv"))?;
    writeln!(w, "{SUMMARY_HEADER}")?;
    for row in summary_rows(&analysis.summary) {
        writeln!(w, "{row}")?;
    }
    w.flush()
}

/// Write everything a run produces.
pub fn write_run(out: &Path, cfg: &ScenarioConfig, flows: &[FlowLog], stats: &LinkStats, analysis: &Analysis) -> io::Result<()> {
    write_logs(out, cfg, flows)?;
    write_drops(out, stats)?;
    write_metrics(out, analysis)
}

/// Mean, minimum and maximum throughput and loss of each flow across seeds.
pub fn write_aggregate(out: &Path, runs: &[RunSummary]) -> io::Result<()> {
    let dir = metrics_dir(out);
    fs::create_dir_all(&dir)?;
    let mut w = create(&dir.join("aggregate.csv"))?;
    writeln!(w, "flow_id,label,kind,dir,runs,mean_bps,min_bps,max_bps,mean_loss")?;
    let mut keys: Vec<(FlowId, Direction)> = Vec::new();
    let mut groups: HashMap<(FlowId, Direction), Vec<&FlowSummary>> = HashMap::new();
    for run in runs {
        for f in &run.flows {
            let key = (f.flow_id, f.dir);
            if !groups.contains_key(&key) {
                keys.push(key);
            }
            groups.entry(key).or_default().push(f);
        }
    }
    for key in keys {
        let fs = &groups[&key];
        let n = fs.len() as f64;
        let bps: Vec<f64> = fs.iter().map(|f| f.mean_bps).collect();
        writeln!(
            w,
            "{},{},{},{},{},{:.1},{:.1},{:.1},{:.6}",
            key.0,
            fs[0].label,
            fs[0].kind,
            key.1,
            fs.len(),
            bps.iter().sum::<f64>() / n,
            bps.iter().cloned().fold(f64::INFINITY, f64::min),
            bps.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            fs.iter().map(|f| f.loss.as_f64()).sum::<f64>() / n,
        )?;
    }
    w.flush()
}
