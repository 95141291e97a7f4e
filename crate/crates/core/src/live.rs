//! Saturator over real UDP sockets on the loopback interface.
//!
//! Data travels from a sender socket to a receiver socket; ACKs come back
//! over a second socket pair. Each datagram starts with a fixed header and is
//! padded to the packet size:
//!
//! | bytes | data            | ack            |
//! |-------|-----------------|----------------|
//! | 0     | `b'D'`          | `b'A'`         |
//! | 1..5  | flow id (BE)    | flow id (BE)   |
//! | 5..13 | seq (BE)        | acked seq (BE) |
//! | 13..21| sent at, µs     | recv time, µs  |
//!
//! All timestamps are microseconds since the run started, shared by both
//! endpoints since they live in one process.

use std::io;
use std::net::{Ipv4Addr, SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::engine::{FlowKind, FlowLog};
use crate::model::{Direction, FlowId, Packet, PacketKind, Timestamp, DEFAULT_PACKET_SIZE};
use crate::saturator::{AckPacket, ControllerParams, SaturatorReceiver, SaturatorSender, ACK_SIZE, DEFAULT_WATCHDOG_TIMEOUT};

pub const DEFAULT_LIVE_RATE: u64 = 20_000_000;

const HEADER_LEN: usize = 21;
const DATA_TAG: u8 = b'D';
const ACK_TAG: u8 = b'A';
/// How long the receiver keeps listening after the sender stops.
const DRAIN: Duration = Duration::from_millis(200);
const POLL: Duration = Duration::from_micros(500);
/// Linux `ENOBUFS`: the kernel dropped the datagram on send.
const ENOBUFS: i32 = 105;

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("cannot bind {what} socket on {addr}: {source}")]
    Bind {
        what: &'static str,
        addr: SocketAddr,
        source: io::Error,
    },
    #[error("socket error: {0}")]
    Io(#[from] io::Error),
    #[error("receiver thread panicked")]
    Receiver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LiveConfig {
    pub flow_id: FlowId,
    pub duration: Timestamp,
    pub packet_size: u32,
    pub params: ControllerParams,
    pub watchdog: Timestamp,
    /// Sender-side pacing; `None` sends as fast as the window allows.
    pub rate_bps: Option<u64>,
    /// Port for the receiver's data socket; 0 picks a free one.
    pub data_port: u16,
    /// Port for the sender's feedback socket; 0 picks a free one.
    pub feedback_port: u16,
    /// Never read the feedback socket, as if ACKs were blocked.
    pub block_feedback: bool,
}

impl LiveConfig {
    pub fn new(duration: Timestamp, params: ControllerParams) -> Self {
        LiveConfig {
            flow_id: 1,
            duration,
            packet_size: DEFAULT_PACKET_SIZE,
            params,
            watchdog: DEFAULT_WATCHDOG_TIMEOUT,
            rate_bps: Some(DEFAULT_LIVE_RATE),
            data_port: 0,
            feedback_port: 0,
            block_feedback: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LiveOutput {
    pub flow: FlowLog,
    pub watchdog_resets: u64,
    pub data_addr: SocketAddr,
    pub feedback_addr: SocketAddr,
}

fn bind(what: &'static str, port: u16) -> Result<UdpSocket, LiveError> {
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, port));
    UdpSocket::bind(addr).map_err(|source| LiveError::Bind { what, addr, source })
}

fn encode(tag: u8, flow: FlowId, seq: u64, t: Timestamp, size: usize) -> Vec<u8> {
    let mut buf = vec![0u8; size.max(HEADER_LEN)];
    buf[0] = tag;
    buf[1..5].copy_from_slice(&flow.to_be_bytes());
    buf[5..13].copy_from_slice(&seq.to_be_bytes());
    buf[13..21].copy_from_slice(&t.as_micros().to_be_bytes());
    buf
}

fn decode(buf: &[u8], tag: u8) -> Option<(FlowId, u64, Timestamp)> {
    if buf.len() < HEADER_LEN || buf[0] != tag {
        return None;
    }
    let flow = FlowId::from_be_bytes(buf[1..5].try_into().ok()?);
    let seq = u64::from_be_bytes(buf[5..13].try_into().ok()?);
    let t = u64::from_be_bytes(buf[13..21].try_into().ok()?);
    Some((flow, seq, Timestamp::from_micros(t)))
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

struct Clock(Instant);

impl Clock {
    fn now(&self) -> Timestamp {
        Timestamp::from_micros(self.0.elapsed().as_micros() as u64)
    }
}

fn receive(
    data: UdpSocket,
    feedback: UdpSocket,
    ack_to: SocketAddr,
    flow_id: FlowId,
    clock: Arc<Clock>,
    stop: Arc<AtomicBool>,
) -> io::Result<SaturatorReceiver> {
    let mut receiver = SaturatorReceiver::new(Direction::Uplink);
    let mut buf = vec![0u8; 65_536];
    data.set_read_timeout(Some(Duration::from_millis(20)))?;
    while !stop.load(Ordering::Acquire) {
        let n = match data.recv(&mut buf) {
            Ok(n) => n,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => return Err(e),
        };
        let now = clock.now();
        let Some((flow, seq, sent_at)) = decode(&buf[..n], DATA_TAG) else {
            continue;
        };
        if flow != flow_id {
            continue;
        }
        let pkt = Packet::new(PacketKind::Data, flow, Direction::Uplink, seq, n as u32, sent_at);
        let ack = receiver.on_data(&pkt, now);
        let wire = encode(ACK_TAG, flow, ack.acked_seq, ack.recv_time, ACK_SIZE as usize);
        // A full feedback path loses the ACK, which the sender tolerates.
        let _ = feedback.send_to(&wire, ack_to);
    }
    Ok(receiver)
}

/// Run one uplink saturator flow over loopback sockets for `cfg.duration`.
pub fn run_loopback(cfg: &LiveConfig) -> Result<LiveOutput, LiveError> {
    let recv_data = bind("data", cfg.data_port)?;
    let send_data = bind("data", 0)?;
    let send_feedback = bind("feedback", cfg.feedback_port)?;
    let recv_feedback = bind("feedback", 0)?;
    let data_addr = recv_data.local_addr()?;
    let feedback_addr = send_feedback.local_addr()?;
    send_data.connect(data_addr)?;
    send_feedback.set_read_timeout(Some(POLL))?;

    let clock = Arc::new(Clock(Instant::now()));
    let stop = Arc::new(AtomicBool::new(false));
    let receiver = {
        let (clock, stop) = (Arc::clone(&clock), Arc::clone(&stop));
        let flow_id = cfg.flow_id;
        thread::spawn(move || receive(recv_data, recv_feedback, feedback_addr, flow_id, clock, stop))
    };

    let mut sender = SaturatorSender::new(cfg.flow_id, Direction::Uplink, cfg.params, Timestamp::ZERO)
        .with_packet_size(cfg.packet_size);
    let mut sent_bits: u128 = 0;
    let mut buf = vec![0u8; 256];
    let result = (|| -> Result<(), LiveError> {
        loop {
            let now = clock.now();
            if now >= cfg.duration {
                return Ok(());
            }
            loop {
                let paced_out = cfg
                    .rate_bps
                    .is_some_and(|r| sent_bits * 1_000_000 > r as u128 * now.as_micros() as u128);
                if paced_out {
                    break;
                }
                let Some(pkt) = sender.send_opportunity(now) else {
                    break;
                };
                let wire = encode(DATA_TAG, pkt.flow_id, pkt.seq, pkt.sent_at, pkt.size_bytes as usize);
                match send_data.send(&wire) {
                    Ok(_) => {}
                    // The packet stays logged as sent and counts as lost.
                    Err(e) if is_timeout(&e) || e.raw_os_error() == Some(ENOBUFS) => {}
                    Err(e) => return Err(e.into()),
                }
                sent_bits += pkt.size_bytes as u128 * 8;
            }
            if cfg.block_feedback {
                thread::sleep(POLL);
            } else {
                loop {
                    let n = match send_feedback.recv(&mut buf) {
                        Ok(n) => n,
                        Err(e) if is_timeout(&e) => break,
                        Err(e) => return Err(e.into()),
                    };
                    if let Some((flow, seq, recv_time)) = decode(&buf[..n], ACK_TAG) {
                        if flow == cfg.flow_id {
                            let ack = AckPacket {
                                acked_seq: seq,
                                recv_time,
                                size_bytes: n as u32,
                            };
                            sender.on_ack(ack, clock.now());
                        }
                    }
                    send_feedback.set_nonblocking(true)?;
                }
                send_feedback.set_nonblocking(false)?;
            }
            sender.stall_watchdog(clock.now(), cfg.watchdog);
        }
    })();

    thread::sleep(DRAIN);
    stop.store(true, Ordering::Release);
    let receiver = receiver.join().map_err(|_| LiveError::Receiver)?;
    result?;
    let receiver = receiver?;

    let watchdog_resets = sender.watchdog_resets();
    Ok(LiveOutput {
        flow: FlowLog {
            flow_id: cfg.flow_id,
            dir: Direction::Uplink,
            kind: FlowKind::Saturator,
            start: Timestamp::ZERO,
            send_log: sender.into_send_log(),
            recv_log: receiver.into_recv_log(),
        },
        watchdog_resets,
        data_addr,
        feedback_addr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::LogEvent;
    use std::collections::HashSet;

    fn quick(duration_ms: u64) -> LiveConfig {
        let mut cfg = LiveConfig::new(Timestamp::from_millis(duration_ms), ControllerParams::wifi(200));
        cfg.rate_bps = Some(10_000_000);
        cfg
    }

    fn seqs(flow: &FlowLog, event: LogEvent) -> Vec<u64> {
        flow.send_log
            .iter()
            .chain(&flow.recv_log)
            .filter(|r| r.event == event)
            .map(|r| r.seq)
            .collect()
    }

    #[test]
    fn codec_round_trip() {
        let wire = encode(DATA_TAG, 7, 123_456, Timestamp::from_micros(99), 1500);
        assert_eq!(wire.len(), 1500);
        assert_eq!(decode(&wire, DATA_TAG), Some((7, 123_456, Timestamp::from_micros(99))));
        assert_eq!(decode(&wire, ACK_TAG), None);
        assert_eq!(decode(&wire[..10], DATA_TAG), None);
    }

    #[test]
    fn loopback_logs_are_conserved() {
        let out = run_loopback(&quick(1_000)).unwrap();
        let sent = seqs(&out.flow, LogEvent::DataSent);
        let recv = seqs(&out.flow, LogEvent::DataRecv);
        assert!(!recv.is_empty());
        let sent_set: HashSet<u64> = sent.iter().copied().collect();
        assert_eq!(sent_set.len(), sent.len(), "sequence numbers are unique");
        assert!(recv.iter().all(|s| sent_set.contains(s)), "received only what was sent");
        let recv_set: HashSet<u64> = recv.iter().copied().collect();
        assert!(recv_set.len() <= sent.len());
        assert!(seqs(&out.flow, LogEvent::AckRecv).len() <= recv.len());
    }

    #[test]
    fn pacing_bounds_sent_bytes() {
        let cfg = quick(500);
        let out = run_loopback(&cfg).unwrap();
        let sent = seqs(&out.flow, LogEvent::DataSent).len() as u64;
        let budget = cfg.rate_bps.unwrap() / 2 / (cfg.packet_size as u64 * 8);
        assert!(sent <= budget + 2, "sent {sent} packets, pacing allows {budget}");
    }

    #[test]
    fn blocked_feedback_fires_watchdog() {
        let mut cfg = quick(1_500);
        cfg.watchdog = Timestamp::from_millis(300);
        cfg.block_feedback = true;
        let out = run_loopback(&cfg).unwrap();
        assert!(out.watchdog_resets >= 1);
        assert!(seqs(&out.flow, LogEvent::AckRecv).is_empty());
        assert!(!seqs(&out.flow, LogEvent::DataSent).is_empty());
    }

    #[test]
    fn busy_port_is_a_bind_error() {
        let holder = UdpSocket::bind((Ipv4Addr::LOCALHOST, 0)).unwrap();
        let mut cfg = quick(100);
        cfg.data_port = holder.local_addr().unwrap().port();
        assert!(matches!(run_loopback(&cfg), Err(LiveError::Bind { what: "data", .. })));
    }
}
