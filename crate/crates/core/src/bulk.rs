//! Fixed-window file transfer used for completion-time comparisons.
//!
//! The sender keeps up to `window` packets outstanding until the receiver has
//! acknowledged `bytes_target` bytes. Like the saturator, packets below the
//! highest acknowledged sequence number stop counting as in flight, so losses
//! are made up with new packets rather than retransmissions.

use crate::engine::{Flow, FlowKind, FlowLog, Outbox, Route};
use crate::log::{LogEvent, LogRecord};
use crate::model::{Direction, FlowId, Packet, PacketKind, Timestamp};
use crate::saturator::{AckPacket, ACK_SIZE};

pub const DEFAULT_BULK_WINDOW: u32 = 1_000;
const STALL_TIMEOUT: Timestamp = Timestamp::from_secs(1);
const STALL_CHECK: Timestamp = Timestamp::from_millis(250);

pub struct BulkFlow {
    flow_id: FlowId,
    dir: Direction,
    window: u32,
    packet_size: u32,
    bytes_target: u64,
    start: Timestamp,
    ack_route: Route,
    next_seq: u64,
    in_flight: u32,
    highest_acked: Option<u64>,
    acked: Vec<bool>,
    sent_at: Vec<Timestamp>,
    acked_bytes: u64,
    last_progress: Timestamp,
    started: bool,
    send_log: Vec<LogRecord>,
    recv_log: Vec<LogRecord>,
}

impl BulkFlow {
    pub fn new(flow_id: FlowId, dir: Direction, bytes_target: u64, window: u32, packet_size: u32, start: Timestamp) -> Self {
        BulkFlow {
            flow_id,
            dir,
            window: window.max(1),
            packet_size,
            bytes_target,
            start,
            ack_route: Route::Feedback,
            next_seq: 0,
            in_flight: 0,
            highest_acked: None,
            acked: Vec::new(),
            sent_at: Vec::new(),
            acked_bytes: 0,
            last_progress: start,
            started: false,
            send_log: Vec::new(),
            recv_log: Vec::new(),
        }
    }

    pub fn with_ack_route(mut self, route: Route) -> Self {
        self.ack_route = route;
        self
    }

    pub fn is_complete(&self) -> bool {
        self.acked_bytes >= self.bytes_target
    }

    fn outstanding_bytes(&self) -> u64 {
        self.acked_bytes + u64::from(self.in_flight) * u64::from(self.packet_size)
    }

    fn pump(&mut self, now: Timestamp, out: &mut Outbox) {
        while self.in_flight < self.window && self.outstanding_bytes() < self.bytes_target {
            let seq = self.next_seq;
            self.next_seq += 1;
            self.in_flight += 1;
            self.acked.push(false);
            self.sent_at.push(now);
            self.send_log
                .push(LogRecord::new(LogEvent::DataSent, now, seq, self.packet_size, self.dir));
            out.send(Route::Link, Packet::new(PacketKind::Data, self.flow_id, self.dir, seq, self.packet_size, now));
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
        self.last_progress = now;
        self.acked_bytes += self.packet_size as u64;
        if self.highest_acked.is_none_or(|h| seq > h) {
            let above = (self.next_seq - seq - 1) as u32;
            self.in_flight = self.in_flight.saturating_sub(1).min(above);
            self.highest_acked = Some(seq);
        }
        let rtt = now.saturating_sub(self.sent_at[idx]);
        self.send_log
            .push(LogRecord::ack_recv(now, seq, ack.size_bytes, self.dir, rtt));
    }
}

impl Flow for BulkFlow {
    fn id(&self) -> FlowId {
        self.flow_id
    }

    fn data_dir(&self) -> Direction {
        self.dir
    }

    fn start(&mut self, _now: Timestamp, out: &mut Outbox) {
        out.wake_at(self.start);
    }

    fn on_arrival(&mut self, pkt: Packet, now: Timestamp, out: &mut Outbox) {
        match pkt.kind {
            PacketKind::Data => {
                self.recv_log
                    .push(LogRecord::new(LogEvent::DataRecv, now, pkt.seq, pkt.size_bytes, self.dir));
                self.recv_log
                    .push(LogRecord::new(LogEvent::AckSent, now, pkt.seq, ACK_SIZE, self.dir));
                out.send(self.ack_route, AckPacket::new(pkt.seq, now).into_packet(self.flow_id, self.dir));
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
        if now < self.start || self.is_complete() {
            return;
        }
        if !self.started {
            self.started = true;
            self.last_progress = now;
        } else if now.saturating_sub(self.last_progress) > STALL_TIMEOUT {
            self.in_flight = 0;
            self.last_progress = now;
        }
        self.pump(now, out);
        out.wake_at(now + STALL_CHECK);
    }

    fn is_pending(&self) -> bool {
        !self.is_complete()
    }

    fn into_log(self: Box<Self>) -> FlowLog {
        FlowLog {
            flow_id: self.flow_id,
            dir: self.dir,
            kind: FlowKind::Bulk,
            start: self.start,
            send_log: self.send_log,
            recv_log: self.recv_log,
        }
    }
}
