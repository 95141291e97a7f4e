//! Quantities computed from packet logs: binned throughput, achieved versus
//! available capacity, sequence-number loss, and transfer completion time.

use std::collections::HashSet;

use thiserror::Error;

use crate::engine::{DirStats, FlowKind, FlowLog};
use crate::log::{LogEvent, LogRecord};
use crate::model::{CapacitySchedule, Direction, FlowId, Timestamp};

pub const DEFAULT_BIN_MS: u64 = 1_000;
pub const MIN_BIN_MS: u64 = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("bin {bin} has no capacity to compare against")]
    ZeroCapacity { bin: usize },
    #[error("seq {seq} was received but never sent")]
    UnknownSeq { seq: u64 },
    #[error("transfer target of {target} bytes not reached; {delivered} bytes delivered")]
    TargetNotReached { target: u64, delivered: u64 },
}

/// An exact fraction, kept as counts so it can be printed or compared
/// without rounding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fraction {
    pub num: u64,
    pub den: u64,
}

impl Fraction {
    pub fn as_f64(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

/// Delivered bits per second in fixed-width bins starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputSeries {
    pub bin_ms: u64,
    /// Delivered bytes per bin; the exact source of `values`.
    pub bytes: Vec<u64>,
    pub values: Vec<f64>,
}

impl ThroughputSeries {
    pub fn from_bytes(bin_ms: u64, bytes: Vec<u64>) -> Self {
        let values = bytes
            .iter()
            .map(|&b| b as f64 * 8.0 * 1000.0 / bin_ms as f64)
            .collect();
        ThroughputSeries {
            bin_ms,
            bytes,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bin_start(&self, i: usize) -> Timestamp {
        Timestamp::from_millis(i as u64 * self.bin_ms)
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes.iter().sum()
    }

    pub fn mean_bps(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    /// Bin-wise sum; both series must use the same bin width.
    pub fn add(&self, other: &ThroughputSeries) -> ThroughputSeries {
        assert_eq!(self.bin_ms, other.bin_ms, "bin widths differ");
        let n = self.bytes.len().max(other.bytes.len());
        let get = |v: &[u64], i: usize| v.get(i).copied().unwrap_or(0);
        let bytes = (0..n).map(|i| get(&self.bytes, i) + get(&other.bytes, i)).collect();
        ThroughputSeries::from_bytes(self.bin_ms, bytes)
    }

    /// Mean rate over bins `[from, to)`.
    pub fn mean_over(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.values.len());
        if from >= to {
            return 0.0;
        }
        self.values[from..to].iter().sum::<f64>() / (to - from) as f64
    }
}

fn bin_count(duration: Timestamp, bin_ms: u64) -> usize {
    duration.as_micros().div_ceil(bin_ms * 1000) as usize
}

/// Delivered throughput of `dir` data in `log`, which is normally a
/// receiver log. Bins cover `[0, duration)` and grow to fit late records.
pub fn throughput(log: &[LogRecord], dir: Direction, bin_ms: u64, duration: Timestamp) -> ThroughputSeries {
    assert!(bin_ms >= 1, "bin must be at least 1 ms");
    let mut bytes = vec![0u64; bin_count(duration, bin_ms)];
    for r in log.iter().filter(|r| r.event == LogEvent::DataRecv && r.dir == dir) {
        let bin = (r.t.as_millis() / bin_ms) as usize;
        if bin >= bytes.len() {
            bytes.resize(bin + 1, 0);
        }
        bytes[bin] += r.size_bytes as u64;
    }
    ThroughputSeries::from_bytes(bin_ms, bytes)
}

/// Bits per second available in each bin after setting aside `reserved_bps`
/// for other traffic. Bins that straddle a capacity step use the
/// time-weighted average.
pub fn available_capacity(cap: &CapacitySchedule, bin_ms: u64, bins: usize, reserved_bps: u64) -> Vec<f64> {
    (0..bins)
        .map(|i| {
            let from = Timestamp::from_millis(i as u64 * bin_ms);
            let to = Timestamp::from_millis((i as u64 + 1) * bin_ms);
            let avg = cap.integral_bit_micros(from, to) as f64 / (bin_ms * 1000) as f64;
            avg - reserved_bps as f64
        })
        .collect()
}

/// Achieved over available capacity, per bin.
pub fn capacity_ratio(tp: &ThroughputSeries, cap: &CapacitySchedule) -> Result<Vec<f64>, MetricsError> {
    expected_ratio(tp, cap, 0)
        .into_iter()
        .enumerate()
        .map(|(bin, r)| r.ok_or(MetricsError::ZeroCapacity { bin }))
        .collect()
}

/// Achieved over expected throughput, where the expectation is the capacity
/// minus what other flows were configured to take. `None` where nothing is
/// left to expect.
pub fn expected_ratio(tp: &ThroughputSeries, cap: &CapacitySchedule, reserved_bps: u64) -> Vec<Option<f64>> {
    let avail = available_capacity(cap, tp.bin_ms, tp.len(), reserved_bps);
    tp.values
        .iter()
        .zip(avail)
        .map(|(&v, a)| (a > 0.0).then(|| v / a))
        .collect()
}

fn seqs(log: &[LogRecord], event: LogEvent, dir: Direction) -> impl Iterator<Item = &LogRecord> {
    log.iter().filter(move |r| r.event == event && r.dir == dir)
}

/// `1 - |received| / |sent|` over unique sequence numbers.
pub fn loss_rate(send_log: &[LogRecord], recv_log: &[LogRecord], dir: Direction) -> Result<Fraction, MetricsError> {
    let sent: HashSet<u64> = seqs(send_log, LogEvent::DataSent, dir).map(|r| r.seq).collect();
    let mut received = HashSet::new();
    for r in seqs(recv_log, LogEvent::DataRecv, dir) {
        if !sent.contains(&r.seq) {
            return Err(MetricsError::UnknownSeq { seq: r.seq });
        }
        received.insert(r.seq);
    }
    Ok(Fraction {
        num: (sent.len() - received.len()) as u64,
        den: sent.len() as u64,
    })
}

/// Packets sent in one bin and how many of them arrived.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BinLoss {
    pub sent: u64,
    pub received: u64,
}

impl BinLoss {
    pub fn lost(&self) -> u64 {
        self.sent - self.received
    }

    pub fn fraction(&self) -> Fraction {
        Fraction {
            num: self.lost(),
            den: self.sent,
        }
    }
}

/// Loss by send-time bin. Only packets whose fate is known count: a packet
/// is considered resolved once some later sequence number has arrived, so
/// packets still in flight at the end of the run are left out.
pub fn binned_loss(
    send_log: &[LogRecord],
    recv_log: &[LogRecord],
    dir: Direction,
    bin_ms: u64,
    duration: Timestamp,
) -> Vec<BinLoss> {
    let received: HashSet<u64> = seqs(recv_log, LogEvent::DataRecv, dir).map(|r| r.seq).collect();
    let horizon = received.iter().copied().max();
    let mut bins = vec![BinLoss::default(); bin_count(duration, bin_ms)];
    let mut seen = HashSet::new();
    for r in seqs(send_log, LogEvent::DataSent, dir) {
        if horizon.is_none_or(|h| r.seq > h) || !seen.insert(r.seq) {
            continue;
        }
        let bin = (r.t.as_millis() / bin_ms) as usize;
        if bin >= bins.len() {
            bins.resize(bin + 1, BinLoss::default());
        }
        bins[bin].sent += 1;
        if received.contains(&r.seq) {
            bins[bin].received += 1;
        }
    }
    bins
}

/// Time from flow start until the receiver has `bytes_target` bytes.
pub fn completion_time(flow: &FlowLog, bytes_target: u64) -> Result<Timestamp, MetricsError> {
    if bytes_target == 0 {
        return Ok(Timestamp::ZERO);
    }
    let mut seen = HashSet::new();
    let mut delivered = 0u64;
    for r in seqs(&flow.recv_log, LogEvent::DataRecv, flow.dir) {
        if !seen.insert(r.seq) {
            continue;
        }
        delivered += r.size_bytes as u64;
        if delivered >= bytes_target {
            return Ok(r.t.saturating_sub(flow.start));
        }
    }
    Err(MetricsError::TargetNotReached {
        target: bytes_target,
        delivered,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSummary {
    pub flow_id: FlowId,
    pub dir: Direction,
    pub kind: FlowKind,
    pub label: String,
    pub sent_packets: u64,
    pub sent_bytes: u64,
    pub recv_packets: u64,
    pub recv_bytes: u64,
    pub loss: Fraction,
    pub mean_bps: f64,
    pub mean_ratio: Option<f64>,
    pub completion: Option<Timestamp>,
}

impl FlowSummary {
    pub fn from_log(flow: &FlowLog, label: &str, duration: Timestamp) -> Self {
        let sent: Vec<_> = seqs(&flow.send_log, LogEvent::DataSent, flow.dir).collect();
        let mut seen = HashSet::new();
        let recv: Vec<_> = seqs(&flow.recv_log, LogEvent::DataRecv, flow.dir)
            .filter(|r| seen.insert(r.seq))
            .collect();
        let recv_bytes: u64 = recv.iter().map(|r| r.size_bytes as u64).sum();
        let secs = duration.as_secs_f64();
        FlowSummary {
            flow_id: flow.flow_id,
            dir: flow.dir,
            kind: flow.kind,
            label: label.to_string(),
            sent_packets: sent.len() as u64,
            sent_bytes: sent.iter().map(|r| r.size_bytes as u64).sum(),
            recv_packets: recv.len() as u64,
            recv_bytes,
            loss: loss_rate(&flow.send_log, &flow.recv_log, flow.dir).unwrap_or(Fraction { num: 0, den: 0 }),
            mean_bps: if secs > 0.0 { recv_bytes as f64 * 8.0 / secs } else { 0.0 },
            mean_ratio: None,
            completion: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub flows: Vec<FlowSummary>,
    pub drops: [DirStats; 2],
}

impl RunSummary {
    pub fn flow(&self, flow_id: FlowId, dir: Direction) -> Option<&FlowSummary> {
        self.flows.iter().find(|f| f.flow_id == flow_id && f.dir == dir)
    }
}
