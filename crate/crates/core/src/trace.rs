//! Delivery-opportunity traces.
//!
//! A trace is the list of millisecond instants at which a link could deliver
//! one MTU-sized packet. Traces are derived from receiver logs and stored as
//! plain text, one decimal integer per line, non-decreasing, each line
//! terminated by `\n`. Repeated values mean several opportunities in the same
//! millisecond. The MTU is not part of the file; readers assume 1500 bytes
//! unless told otherwise.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::log::{LogEvent, LogRecord};
use crate::model::{Direction, DEFAULT_PACKET_SIZE};

pub const DEFAULT_MTU: u32 = DEFAULT_PACKET_SIZE;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("no delivery opportunities recorded")]
    Empty,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeliveryTrace {
    pub opportunities_ms: Vec<u64>,
    pub mtu_bytes: u32,
}

impl DeliveryTrace {
    /// Builds a trace, rejecting empty or decreasing input.
    pub fn new(opportunities_ms: Vec<u64>, mtu_bytes: u32) -> Result<Self, TraceError> {
        if opportunities_ms.is_empty() {
            return Err(TraceError::Empty);
        }
        if let Some(i) = opportunities_ms.windows(2).position(|w| w[1] < w[0]) {
            return Err(TraceError::Parse {
                line: i + 2,
                message: format!("{} is before {}", opportunities_ms[i + 1], opportunities_ms[i]),
            });
        }
        assert!(mtu_bytes > 0, "MTU must be positive");
        Ok(DeliveryTrace {
            opportunities_ms,
            mtu_bytes,
        })
    }

    pub fn len(&self) -> usize {
        self.opportunities_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opportunities_ms.is_empty()
    }

    /// Length of one pass through the trace, used when wrapping around.
    pub fn period_ms(&self) -> u64 {
        self.opportunities_ms.last().map_or(1, |&l| l + 1)
    }

    pub fn total_bytes(&self) -> u64 {
        self.opportunities_ms.len() as u64 * self.mtu_bytes as u64
    }
}

/// One opportunity per received data packet in `dir`, or several for packets
/// larger than the MTU.
pub fn log_to_trace(recv_log: &[LogRecord], dir: Direction) -> Result<DeliveryTrace, TraceError> {
    log_to_trace_with_mtu(recv_log, dir, DEFAULT_MTU)
}

pub fn log_to_trace_with_mtu(recv_log: &[LogRecord], dir: Direction, mtu: u32) -> Result<DeliveryTrace, TraceError> {
    let mut ops = Vec::new();
    for r in recv_log.iter().filter(|r| r.event == LogEvent::DataRecv && r.dir == dir) {
        let ms = r.t.as_micros() / 1000;
        let n = r.size_bytes.div_ceil(mtu).max(1);
        ops.extend(std::iter::repeat_n(ms, n as usize));
    }
    // Logs from several flows may be concatenated.
    ops.sort_unstable();
    DeliveryTrace::new(ops, mtu)
}

pub fn write_trace(trace: &DeliveryTrace, path: &Path) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for ms in &trace.opportunities_ms {
        writeln!(out, "{ms}")?;
    }
    out.flush()
}

pub fn trace_to_string(trace: &DeliveryTrace) -> String {
    let mut s = String::with_capacity(trace.len() * 6);
    for ms in &trace.opportunities_ms {
        s.push_str(&ms.to_string());
        s.push('\n');
    }
    s
}

pub fn parse_trace(text: &str, mtu: u32) -> Result<DeliveryTrace, TraceError> {
    let mut ops = Vec::new();
    let mut prev = 0u64;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let v: u64 = raw.trim().parse().map_err(|_| TraceError::Parse {
            line,
            message: format!("`{raw}` is not a non-negative integer"),
        })?;
        if v < prev {
            return Err(TraceError::Parse {
                line,
                message: format!("{v} is before {prev}"),
            });
        }
        prev = v;
        ops.push(v);
    }
    DeliveryTrace::new(ops, mtu)
}

pub fn read_trace(path: &Path) -> Result<DeliveryTrace, TraceError> {
    parse_trace(&fs::read_to_string(path)?, DEFAULT_MTU)
}

/// Rate the trace could carry in consecutive windows starting at 0 ms, in
/// bits per second.
pub fn trace_implied_rate(trace: &DeliveryTrace, window_ms: u64) -> Vec<f64> {
    assert!(window_ms >= 1, "window must be at least 1 ms");
    let bins = trace.opportunities_ms.last().map_or(0, |&l| l / window_ms + 1) as usize;
    let mut counts = vec![0u64; bins];
    for &ms in &trace.opportunities_ms {
        counts[(ms / window_ms) as usize] += 1;
    }
    let bits_per_op = trace.mtu_bytes as f64 * 8.0;
    counts
        .into_iter()
        .map(|c| c as f64 * bits_per_op * 1000.0 / window_ms as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Timestamp;
    use proptest::prelude::*;

    fn recv(t_us: u64, size: u32) -> LogRecord {
        LogRecord::new(LogEvent::DataRecv, Timestamp::from_micros(t_us), 0, size, Direction::Uplink)
    }

    #[test]
    fn one_opportunity_per_packet() {
        let log = [recv(0, 1500), recv(1000, 1500), recv(2000, 1500)];
        let t = log_to_trace(&log, Direction::Uplink).unwrap();
        assert_eq!(t.opportunities_ms, vec![0, 1, 2]);
    }

    #[test]
    fn oversized_packets_take_several() {
        let t = log_to_trace_with_mtu(&[recv(3500, 1500)], Direction::Uplink, 600).unwrap();
        assert_eq!(t.opportunities_ms, vec![3, 3, 3]);
    }

    #[test]
    fn other_direction_is_ignored() {
        let err = log_to_trace(&[recv(0, 1500)], Direction::Downlink).unwrap_err();
        assert_eq!(err.to_string(), "no delivery opportunities recorded");
        assert!(matches!(log_to_trace(&[], Direction::Uplink), Err(TraceError::Empty)));
    }

    #[test]
    fn text_format() {
        let t = DeliveryTrace::new(vec![0, 1, 2], 1500).unwrap();
        assert_eq!(trace_to_string(&t), "0\n1\n2\n");
    }

    #[test]
    fn decreasing_line_reports_line_number() {
        match parse_trace("2\n1\n", 1500) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        match parse_trace("0\nx\n", 1500) {
            Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("up.trace");
        let t = DeliveryTrace::new(vec![0, 0, 5, 9, 9, 9], 1500).unwrap();
        write_trace(&t, &path).unwrap();
        assert_eq!(read_trace(&path).unwrap(), t);
    }

    #[test]
    fn implied_rate_per_window() {
        let t = DeliveryTrace::new((0..2000).collect(), 1500).unwrap();
        assert_eq!(trace_implied_rate(&t, 1000), vec![12e6, 12e6]);
        let sparse = DeliveryTrace::new(vec![0, 2500], 1500).unwrap();
        assert_eq!(trace_implied_rate(&sparse, 1000), vec![12_000.0, 0.0, 12_000.0]);
    }

    proptest! {
        #[test]
        fn parse_inverts_format(mut ops in prop::collection::vec(0u64..1_000_000, 1..300)) {
            ops.sort_unstable();
            let t = DeliveryTrace::new(ops, 1500).unwrap();
            prop_assert_eq!(parse_trace(&trace_to_string(&t), 1500).unwrap(), t);
        }

        #[test]
        fn trace_covers_delivered_bytes(sizes in prop::collection::vec((0u64..5_000_000, 40u32..=1504), 1..200)) {
            let mut log: Vec<_> = sizes.iter().map(|&(t, s)| recv(t, s)).collect();
            log.sort_by_key(|r| r.t);
            let t = log_to_trace(&log, Direction::Uplink).unwrap();
            let delivered: u64 = sizes.iter().map(|&(_, s)| s as u64).sum();
            prop_assert!(t.total_bytes() >= delivered);
            prop_assert!(t.total_bytes() <= delivered + sizes.len() as u64 * 1500);
            prop_assert!(t.opportunities_ms.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
