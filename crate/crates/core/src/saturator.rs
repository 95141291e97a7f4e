//! Windowed link saturation: a sender that keeps up to `window` packets in
//! flight and steers the window from RTT feedback, and a receiver that acks
//! every data packet over a separate feedback path.
//!
//! The window follows a delay band. While the smoothed RTT is below
//! `target_delay_low` every ACK grows the window by one packet; above
//! `target_delay_high` every ACK shrinks it to `max(1, floor(0.9 * window))`;
//! in between it holds. The sender never reacts to loss directly. A packet
//! that is lost stops counting as in flight once a later sequence number is
//! acknowledged, which frees window space for a new packet.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::engine::{Flow, FlowKind, FlowLog, Outbox, Route};
use crate::log::{LogEvent, LogRecord};
use crate::model::{Direction, FlowId, Packet, PacketKind, Timestamp, DEFAULT_PACKET_SIZE};

/// Feedback packet size in bytes.
pub const ACK_SIZE: u32 = 40;

/// Window cap of the cellular profile, in packets.
pub const CELLULAR_WINDOW_CAP: u32 = 1_000;

pub const DEFAULT_INITIAL_WINDOW: u32 = 10;

pub const DEFAULT_WATCHDOG_TIMEOUT: Timestamp = Timestamp::from_secs(1);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParamError {
    #[error("target_delay_low must be below target_delay_high")]
    DelayBand,
    #[error("ewma_alpha must lie in (0, 1]")]
    Alpha,
    #[error("window_cap must be positive")]
    WindowCap,
    #[error("initial_window must be in [1, window_cap]")]
    InitialWindow,
}

/// Smoothing factor as an exact fraction `num / den`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alpha {
    num: u64,
    den: u64,
}

impl Alpha {
    pub fn new(num: u64, den: u64) -> Option<Self> {
        (den > 0 && num > 0 && num <= den).then_some(Alpha { num, den })
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor((1 - a) * prev + a * sample)`.
    fn smooth(self, prev: Timestamp, sample: Timestamp) -> Timestamp {
        let mixed = (self.den - self.num) as u128 * prev.as_micros() as u128
            + self.num as u128 * sample.as_micros() as u128;
        Timestamp::from_micros((mixed / self.den as u128) as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Cellular,
    Wifi,
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cellular" => Ok(Profile::Cellular),
            "wifi" => Ok(Profile::Wifi),
            other => Err(format!("unknown profile `{other}` (expected cellular or wifi)")),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Cellular => "cellular",
            Profile::Wifi => "wifi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControllerParams {
    pub target_delay_low: Timestamp,
    pub target_delay_high: Timestamp,
    pub ewma_alpha: Alpha,
    pub window_cap: u32,
    pub initial_window: u32,
}

impl ControllerParams {
    pub fn new(
        target_delay_low: Timestamp,
        target_delay_high: Timestamp,
        ewma_alpha: Alpha,
        window_cap: u32,
        initial_window: u32,
    ) -> Result<Self, ParamError> {
        if target_delay_low >= target_delay_high {
            return Err(ParamError::DelayBand);
        }
        if window_cap == 0 {
            return Err(ParamError::WindowCap);
        }
        if initial_window == 0 || initial_window > window_cap {
            return Err(ParamError::InitialWindow);
        }
        Ok(ControllerParams {
            target_delay_low,
            target_delay_high,
            ewma_alpha,
            window_cap,
            initial_window,
        })
    }

    /// Delay band of 500 to 750 ms and a window sized for deep cellular buffers.
    pub fn cellular() -> Self {
        Self::new(
            Timestamp::from_millis(500),
            Timestamp::from_millis(750),
            Alpha::new(1, 8).unwrap(),
            CELLULAR_WINDOW_CAP,
            DEFAULT_INITIAL_WINDOW,
        )
        .expect("static parameters are valid")
    }

    /// Delay band of 50 to 100 ms with the window capped at the bottleneck buffer.
    pub fn wifi(buffer_packets: u32) -> Self {
        let cap = buffer_packets.max(1);
        Self::new(
            Timestamp::from_millis(50),
            Timestamp::from_millis(100),
            Alpha::new(1, 8).unwrap(),
            cap,
            DEFAULT_INITIAL_WINDOW.min(cap),
        )
        .expect("static parameters are valid")
    }

    pub fn for_profile(profile: Profile, buffer_packets: u32) -> Self {
        match profile {
            Profile::Cellular => Self::cellular(),
            Profile::Wifi => Self::wifi(buffer_packets),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaturatorMode {
    OneWay,
    TwoWay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AckPacket {
    pub acked_seq: u64,
    pub recv_time: Timestamp,
    pub size_bytes: u32,
}

impl AckPacket {
    pub fn new(acked_seq: u64, recv_time: Timestamp) -> Self {
        AckPacket {
            acked_seq,
            recv_time,
            size_bytes: ACK_SIZE,
        }
    }

    /// Wrap for transport. `data_dir` is the direction the acked data travelled.
    pub fn into_packet(self, flow_id: FlowId, data_dir: Direction) -> Packet {
        Packet::new(
            PacketKind::Ack,
            flow_id,
            data_dir.reverse(),
            self.acked_seq,
            self.size_bytes,
            self.recv_time,
        )
    }

    pub fn from_packet(pkt: &Packet) -> Self {
        debug_assert_eq!(pkt.kind, PacketKind::Ack);
        AckPacket {
            acked_seq: pkt.seq,
            recv_time: pkt.sent_at,
            size_bytes: pkt.size_bytes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AckOutcome {
    Accepted { rtt: Timestamp },
    Duplicate,
    Unknown,
}

#[derive(Clone, Debug)]
pub struct SaturatorSender {
    flow_id: FlowId,
    dir: Direction,
    mode: SaturatorMode,
    params: ControllerParams,
    packet_size: u32,
    window: u32,
    in_flight: u32,
    next_seq: u64,
    ewma_rtt: Option<Timestamp>,
    highest_acked: Option<u64>,
    sent_at: Vec<Timestamp>,
    acked: Vec<bool>,
    last_progress: Timestamp,
    send_log: Vec<LogRecord>,
    unknown_acks: u64,
    duplicate_acks: u64,
    watchdog_resets: u64,
}

impl SaturatorSender {
    pub fn new(flow_id: FlowId, dir: Direction, params: ControllerParams, now: Timestamp) -> Self {
        SaturatorSender {
            flow_id,
            dir,
            mode: SaturatorMode::OneWay,
            params,
            packet_size: DEFAULT_PACKET_SIZE,
            window: params.initial_window,
            in_flight: 0,
            next_seq: 0,
            ewma_rtt: None,
            highest_acked: None,
            sent_at: Vec::new(),
            acked: Vec::new(),
            last_progress: now,
            send_log: Vec::new(),
            unknown_acks: 0,
            duplicate_acks: 0,
            watchdog_resets: 0,
        }
    }

    pub fn with_packet_size(mut self, size: u32) -> Self {
        self.packet_size = size;
        self
    }

    pub fn with_mode(mut self, mode: SaturatorMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn in_flight(&self) -> u32 {
        self.in_flight
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn mode(&self) -> SaturatorMode {
        self.mode
    }

    pub fn params(&self) -> &ControllerParams {
        &self.params
    }

    /// Smoothed RTT, zero until the first sample.
    pub fn ewma_rtt(&self) -> Timestamp {
        self.ewma_rtt.unwrap_or(Timestamp::ZERO)
    }

    pub fn send_log(&self) -> &[LogRecord] {
        &self.send_log
    }

    pub fn into_send_log(self) -> Vec<LogRecord> {
        self.send_log
    }

    pub fn unknown_acks(&self) -> u64 {
        self.unknown_acks
    }

    pub fn duplicate_acks(&self) -> u64 {
        self.duplicate_acks
    }

    pub fn watchdog_resets(&self) -> u64 {
        self.watchdog_resets
    }

    pub fn restart_clock(&mut self, now: Timestamp) {
        self.last_progress = now;
    }

    /// Emit the next data packet if the window has room.
    pub fn send_opportunity(&mut self, now: Timestamp) -> Option<Packet> {
        if self.in_flight >= self.window {
            return None;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.in_flight += 1;
        self.sent_at.push(now);
        self.acked.push(false);
        self.send_log.push(LogRecord::new(LogEvent::DataSent, now, seq, self.packet_size, self.dir));
        Some(Packet::new(PacketKind::Data, self.flow_id, self.dir, seq, self.packet_size, now))
    }

    pub fn on_ack(&mut self, ack: AckPacket, now: Timestamp) -> AckOutcome {
        let seq = ack.acked_seq;
        if seq >= self.next_seq {
            self.unknown_acks += 1;
            return AckOutcome::Unknown;
        }
        let idx = seq as usize;
        if self.acked[idx] {
            self.duplicate_acks += 1;
            return AckOutcome::Duplicate;
        }
        self.acked[idx] = true;
        self.last_progress = now;

        if self.highest_acked.is_none_or(|h| seq > h) {
            // Everything sent at or before `seq` has either arrived or been lost.
            let above = (self.next_seq - seq - 1) as u32;
            self.in_flight = self.in_flight.saturating_sub(1).min(above);
            self.highest_acked = Some(seq);
        }

        let sample = now.saturating_sub(self.sent_at[idx]);
        let ewma = match self.ewma_rtt {
            None => sample,
            Some(prev) => self.params.ewma_alpha.smooth(prev, sample),
        };
        self.ewma_rtt = Some(ewma);
        self.adjust_window(ewma);

        self.send_log
            .push(LogRecord::ack_recv(now, seq, ack.size_bytes, self.dir, ewma));
        AckOutcome::Accepted { rtt: sample }
    }

    fn adjust_window(&mut self, ewma: Timestamp) {
        let p = &self.params;
        if ewma < p.target_delay_low {
            self.window = (self.window + 1).min(p.window_cap);
        } else if ewma > p.target_delay_high {
            self.window = (self.window * 9 / 10).max(1);
        }
    }

    /// Reset after `timeout` without any ACK. Returns whether the reset fired.
    pub fn stall_watchdog(&mut self, now: Timestamp, timeout: Timestamp) -> bool {
        debug_assert!(timeout > Timestamp::ZERO);
        if now.saturating_sub(self.last_progress) > timeout {
            self.in_flight = 0;
            self.window = self.params.initial_window;
            self.last_progress = now;
            self.watchdog_resets += 1;
            true
        } else {
            false
        }
    }
}

#[derive(Clone, Debug)]
pub struct SaturatorReceiver {
    dir: Direction,
    seen: Vec<bool>,
    recv_log: Vec<LogRecord>,
    duplicates: u64,
}

impl SaturatorReceiver {
    pub fn new(dir: Direction) -> Self {
        SaturatorReceiver {
            dir,
            seen: Vec::new(),
            recv_log: Vec::new(),
            duplicates: 0,
        }
    }

    pub fn on_data(&mut self, pkt: &Packet, now: Timestamp) -> AckPacket {
        debug_assert_eq!(pkt.kind, PacketKind::Data);
        let idx = pkt.seq as usize;
        if idx >= self.seen.len() {
            self.seen.resize(idx + 1, false);
        }
        if std::mem::replace(&mut self.seen[idx], true) {
            self.duplicates += 1;
        }
        self.recv_log
            .push(LogRecord::new(LogEvent::DataRecv, now, pkt.seq, pkt.size_bytes, self.dir));
        let ack = AckPacket::new(pkt.seq, now);
        self.recv_log
            .push(LogRecord::new(LogEvent::AckSent, now, pkt.seq, ack.size_bytes, self.dir));
        ack
    }

    pub fn recv_log(&self) -> &[LogRecord] {
        &self.recv_log
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn into_recv_log(self) -> Vec<LogRecord> {
        self.recv_log
    }
}

/// One direction of a saturator run attached to a simulated link.
pub struct SaturatorFlow {
    sender: SaturatorSender,
    receiver: SaturatorReceiver,
    start: Timestamp,
    started: bool,
    watchdog_timeout: Timestamp,
}

impl SaturatorFlow {
    pub fn new(sender: SaturatorSender, start: Timestamp) -> Self {
        let dir = sender.dir;
        SaturatorFlow {
            sender,
            receiver: SaturatorReceiver::new(dir),
            start,
            started: false,
            watchdog_timeout: DEFAULT_WATCHDOG_TIMEOUT,
        }
    }

    pub fn with_watchdog(mut self, timeout: Timestamp) -> Self {
        self.watchdog_timeout = timeout;
        self
    }

    pub fn sender(&self) -> &SaturatorSender {
        &self.sender
    }

    fn pump(&mut self, now: Timestamp, out: &mut Outbox) {
        while let Some(pkt) = self.sender.send_opportunity(now) {
            out.send(Route::Link, pkt);
        }
    }

    fn watchdog_period(&self) -> Timestamp {
        Timestamp::from_micros((self.watchdog_timeout.as_micros() / 4).max(1))
    }
}

impl Flow for SaturatorFlow {
    fn id(&self) -> FlowId {
        self.sender.flow_id
    }

    fn data_dir(&self) -> Direction {
        self.sender.dir
    }

    fn start(&mut self, _now: Timestamp, out: &mut Outbox) {
        out.wake_at(self.start);
    }

    fn on_arrival(&mut self, pkt: Packet, now: Timestamp, out: &mut Outbox) {
        match pkt.kind {
            PacketKind::Data => {
                let ack = self.receiver.on_data(&pkt, now);
                out.send(Route::Feedback, ack.into_packet(self.id(), self.data_dir()));
            }
            PacketKind::Ack => {
                self.sender.on_ack(AckPacket::from_packet(&pkt), now);
                if self.started {
                    self.pump(now, out);
                }
            }
            PacketKind::Cross => {}
        }
    }

    fn on_timer(&mut self, now: Timestamp, out: &mut Outbox) {
        if !self.started {
            if now < self.start {
                return;
            }
            self.started = true;
            self.sender.restart_clock(now);
        } else {
            self.sender.stall_watchdog(now, self.watchdog_timeout);
        }
        self.pump(now, out);
        out.wake_at(now + self.watchdog_period());
    }

    fn into_log(self: Box<Self>) -> FlowLog {
        let flow_id = self.id();
        let dir = self.data_dir();
        FlowLog {
            flow_id,
            dir,
            kind: FlowKind::Saturator,
            start: self.start,
            send_log: self.sender.into_send_log(),
            recv_log: self.receiver.into_recv_log(),
        }
    }
}
