//! Concurrent traffic: constant-bit-rate streams (UDP-like, no feedback) and
//! AIMD window streams (TCP-like congestion avoidance without slow start).

use std::collections::VecDeque;

use crate::engine::{Flow, FlowKind, FlowLog, Outbox, Route};
use crate::log::{LogEvent, LogRecord};
use crate::model::{Direction, FlowId, Packet, PacketKind, Timestamp};
use crate::saturator::{AckPacket, ACK_SIZE};

/// Emits `packet_size` byte packets at exactly `rate_bits_per_sec`.
///
/// The k-th packet leaves at `start + floor(k * size * 8 / rate)`, so the
/// schedule never drifts no matter how long the stream runs.
#[derive(Clone, Debug)]
pub struct CbrStream {
    pub flow_id: FlowId,
    pub dir: Direction,
    pub rate_bits_per_sec: u64,
    pub packet_size: u32,
    start: Timestamp,
    sent: u64,
}

impl CbrStream {
    pub fn new(flow_id: FlowId, dir: Direction, rate_bits_per_sec: u64, packet_size: u32, start: Timestamp) -> Self {
        assert!(rate_bits_per_sec > 0, "CBR rate must be positive");
        CbrStream {
            flow_id,
            dir,
            rate_bits_per_sec,
            packet_size,
            start,
            sent: 0,
        }
    }

    fn send_time(&self, k: u64) -> Timestamp {
        let offset = k as u128 * self.packet_size as u128 * 8 * 1_000_000 / self.rate_bits_per_sec as u128;
        self.start + Timestamp::from_micros(offset as u64)
    }

    pub fn next_send(&self) -> Timestamp {
        self.send_time(self.sent)
    }

    /// Every packet due at or before `now`.
    pub fn cbr_tick(&mut self, now: Timestamp) -> Vec<Packet> {
        let mut out = Vec::new();
        loop {
            let t = self.next_send();
            if t > now {
                break;
            }
            out.push(Packet::new(PacketKind::Cross, self.flow_id, self.dir, self.sent, self.packet_size, t));
            self.sent += 1;
        }
        out
    }
}

pub struct CbrFlow {
    stream: CbrStream,
    send_log: Vec<LogRecord>,
    recv_log: Vec<LogRecord>,
}

impl CbrFlow {
    pub fn new(stream: CbrStream) -> Self {
        CbrFlow {
            stream,
            send_log: Vec::new(),
            recv_log: Vec::new(),
        }
    }
}

impl Flow for CbrFlow {
    fn id(&self) -> FlowId {
        self.stream.flow_id
    }

    fn data_dir(&self) -> Direction {
        self.stream.dir
    }

    fn start(&mut self, _now: Timestamp, out: &mut Outbox) {
        out.wake_at(self.stream.next_send());
    }

    fn on_arrival(&mut self, pkt: Packet, now: Timestamp, _out: &mut Outbox) {
        self.recv_log
            .push(LogRecord::new(LogEvent::DataRecv, now, pkt.seq, pkt.size_bytes, pkt.dir));
    }

    fn on_timer(&mut self, now: Timestamp, out: &mut Outbox) {
        let due = self.stream.cbr_tick(now);
        if due.is_empty() {
            return;
        }
        for pkt in due {
            self.send_log
                .push(LogRecord::new(LogEvent::DataSent, now, pkt.seq, pkt.size_bytes, pkt.dir));
            // Stamp with the actual hand-off time.
            let mut pkt = pkt;
            pkt.sent_at = now;
            out.send(Route::Link, pkt);
        }
        out.wake_at(self.stream.next_send());
    }

    fn into_log(self: Box<Self>) -> FlowLog {
        FlowLog {
            flow_id: self.stream.flow_id,
            dir: self.stream.dir,
            kind: FlowKind::Cbr,
            start: self.stream.start,
            send_log: self.send_log,
            recv_log: self.recv_log,
        }
    }
}

/// Congestion window in millionths of a packet.
///
/// Fixed point keeps increase and halving in exact integer arithmetic;
/// `1/cwnd` is rounded down to the nearest millionth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Cwnd(u64);

impl Cwnd {
    pub const SCALE: u64 = 1_000_000;
    pub const ONE: Cwnd = Cwnd(Self::SCALE);

    pub fn from_packets(p: u64) -> Self {
        Cwnd(p.max(1) * Self::SCALE)
    }

    pub fn from_micro_packets(raw: u64) -> Self {
        Cwnd(raw.max(Self::SCALE))
    }

    pub fn micro_packets(self) -> u64 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::SCALE as f64
    }

    /// Whole packets the window admits, `ceil(cwnd)`.
    pub fn ceil_packets(self) -> u64 {
        self.0.div_ceil(Self::SCALE)
    }
}

#[derive(Clone, Debug)]
pub struct AimdStream {
    pub flow_id: FlowId,
    pub cwnd: Cwnd,
    pub in_flight: u64,
    pub rate_cap: Option<u64>,
}

impl AimdStream {
    pub fn new(flow_id: FlowId, initial_cwnd: u64, rate_cap: Option<u64>) -> Self {
        AimdStream {
            flow_id,
            cwnd: Cwnd::from_packets(initial_cwnd),
            in_flight: 0,
            rate_cap,
        }
    }

    /// Congestion avoidance: `cwnd += 1/cwnd`, one fewer packet in flight.
    pub fn aimd_on_ack(&mut self) {
        let inc = Cwnd::SCALE * Cwnd::SCALE / self.cwnd.0;
        self.cwnd = Cwnd(self.cwnd.0 + inc);
        self.in_flight = self.in_flight.saturating_sub(1);
    }

    /// `cwnd <- max(1, cwnd / 2)`.
    pub fn aimd_on_loss(&mut self) {
        self.cwnd = Cwnd((self.cwnd.0 / 2).max(Cwnd::SCALE));
    }

    pub fn can_send(&self) -> bool {
        self.in_flight < self.cwnd.ceil_packets()
    }
}

/// Packets with this many later packets acknowledged are declared lost.
pub const DUP_THRESHOLD: u64 = 3;
pub const LOSS_TIMEOUT: Timestamp = Timestamp::from_secs(1);
const TIMEOUT_CHECK: Timestamp = Timestamp::from_millis(50);

#[derive(Clone, Copy, Debug)]
struct Outstanding {
    seq: u64,
    sent_at: Timestamp,
}

/// An AIMD stream attached to a link, with its receiver.
///
/// Every data packet is acked over the reverse direction of the link. Loss is
/// inferred when three later packets have been acked or after a one second
/// timeout; at most one window reduction happens per window of data.
pub struct AimdFlow {
    stream: AimdStream,
    dir: Direction,
    packet_size: u32,
    start: Timestamp,
    ack_route: Route,
    next_seq: u64,
    outstanding: VecDeque<Outstanding>,
    sent_at: Vec<Timestamp>,
    acked: Vec<bool>,
    resolved: Vec<bool>,
    highest_acked: Option<u64>,
    recovery_point: u64,
    next_paced: Timestamp,
    armed: Option<Timestamp>,
    started: bool,
    losses: u64,
    send_log: Vec<LogRecord>,
    recv_log: Vec<LogRecord>,
}

impl AimdFlow {
    pub fn new(stream: AimdStream, dir: Direction, packet_size: u32, start: Timestamp) -> Self {
        AimdFlow {
            stream,
            dir,
            packet_size,
            start,
            ack_route: Route::Link,
            next_seq: 0,
            outstanding: VecDeque::new(),
            sent_at: Vec::new(),
            acked: Vec::new(),
            resolved: Vec::new(),
            highest_acked: None,
            recovery_point: 0,
            next_paced: start,
            armed: None,
            started: false,
            losses: 0,
            send_log: Vec::new(),
            recv_log: Vec::new(),
        }
    }

    pub fn with_ack_route(mut self, route: Route) -> Self {
        self.ack_route = route;
        self
    }

    pub fn stream(&self) -> &AimdStream {
        &self.stream
    }

    pub fn losses(&self) -> u64 {
        self.losses
    }

    fn pace_gap(&self) -> Option<Timestamp> {
        self.stream.rate_cap.map(|cap| {
            let us = (self.packet_size as u128 * 8 * 1_000_000).div_ceil(cap as u128);
            Timestamp::from_micros(us as u64)
        })
    }

    fn arm(&mut self, t: Timestamp, out: &mut Outbox) {
        if self.armed.is_none_or(|a| t < a) {
            self.armed = Some(t);
            out.wake_at(t);
        }
    }

    fn pump(&mut self, now: Timestamp, out: &mut Outbox) {
        while self.stream.can_send() {
            if now < self.next_paced {
                let t = self.next_paced;
                self.arm(t, out);
                break;
            }
            let seq = self.next_seq;
            self.next_seq += 1;
            self.stream.in_flight += 1;
            self.outstanding.push_back(Outstanding { seq, sent_at: now });
            self.sent_at.push(now);
            self.acked.push(false);
            self.resolved.push(false);
            if let Some(gap) = self.pace_gap() {
                self.next_paced = now + gap;
            }
            self.send_log
                .push(LogRecord::new(LogEvent::DataSent, now, seq, self.packet_size, self.dir));
            out.send(Route::Link, Packet::new(PacketKind::Data, self.stream.flow_id, self.dir, seq, self.packet_size, now));
        }
    }

    fn declare_lost(&mut self, seq: u64) {
        self.resolved[seq as usize] = true;
        self.stream.in_flight = self.stream.in_flight.saturating_sub(1);
        if seq >= self.recovery_point {
            self.stream.aimd_on_loss();
            self.losses += 1;
            self.recovery_point = self.next_seq;
        }
    }

    fn on_ack(&mut self, ack: AckPacket, now: Timestamp) {
        let seq = ack.acked_seq;
        let Some(idx) = usize::try_from(seq).ok().filter(|&i| i < self.acked.len()) else {
            return;
        };
        if std::mem::replace(&mut self.acked[idx], true) {
            return;
        }
        let rtt = now.saturating_sub(self.sent_at[idx]);
        self.send_log
            .push(LogRecord::ack_recv(now, seq, ack.size_bytes, self.dir, rtt));
        if !self.resolved[idx] {
            self.resolved[idx] = true;
            self.stream.aimd_on_ack();
        }
        self.highest_acked = Some(self.highest_acked.map_or(seq, |h| h.max(seq)));
        let highest = self.highest_acked.unwrap();
        while let Some(front) = self.outstanding.front().copied() {
            if self.resolved[front.seq as usize] && self.acked[front.seq as usize] {
                self.outstanding.pop_front();
            } else if front.seq + DUP_THRESHOLD <= highest {
                self.outstanding.pop_front();
                if !self.resolved[front.seq as usize] {
                    self.declare_lost(front.seq);
                }
            } else {
                break;
            }
        }
    }

    fn check_timeout(&mut self, now: Timestamp) {
        let stale = self
            .outstanding
            .iter()
            .find(|o| !self.resolved[o.seq as usize])
            .is_some_and(|o| now.saturating_sub(o.sent_at) >= LOSS_TIMEOUT);
        if !stale {
            return;
        }
        let pending: Vec<u64> = self
            .outstanding
            .drain(..)
            .map(|o| o.seq)
            .filter(|s| !self.resolved[*s as usize])
            .collect();
        for seq in pending {
            self.declare_lost(seq);
        }
    }
}

impl Flow for AimdFlow {
    fn id(&self) -> FlowId {
        self.stream.flow_id
    }

    fn data_dir(&self) -> Direction {
        self.dir
    }

    fn start(&mut self, _now: Timestamp, out: &mut Outbox) {
        self.arm(self.start, out);
    }

    fn on_arrival(&mut self, pkt: Packet, now: Timestamp, out: &mut Outbox) {
        match pkt.kind {
            PacketKind::Data => {
                self.recv_log
                    .push(LogRecord::new(LogEvent::DataRecv, now, pkt.seq, pkt.size_bytes, self.dir));
                self.recv_log
                    .push(LogRecord::new(LogEvent::AckSent, now, pkt.seq, ACK_SIZE, self.dir));
                let ack = AckPacket::new(pkt.seq, now).into_packet(self.stream.flow_id, self.dir);
                out.send(self.ack_route, ack);
            }
            PacketKind::Ack => {
                self.on_ack(AckPacket::from_packet(&pkt), now);
                if self.started {
                    self.pump(now, out);
                }
            }
            PacketKind::Cross => {}
        }
    }

    fn on_timer(&mut self, now: Timestamp, out: &mut Outbox) {
        if self.armed.is_some_and(|a| a <= now) {
            self.armed = None;
        }
        if now < self.start {
            return;
        }
        self.started = true;
        self.check_timeout(now);
        self.pump(now, out);
        self.arm(now + TIMEOUT_CHECK, out);
    }

    fn into_log(self: Box<Self>) -> FlowLog {
        FlowLog {
            flow_id: self.stream.flow_id,
            dir: self.dir,
            kind: FlowKind::Aimd,
            start: self.start,
            send_log: self.send_log,
            recv_log: self.recv_log,
        }
    }
}
