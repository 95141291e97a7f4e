//! Half-duplex shared medium: one bounded tail-drop FIFO per direction, a
//! single transmitter that serves them by weighted round-robin, a
//! time-varying service rate and scheduled wire loss.
//!
//! Only one packet is ever on the air. Switching the transmitter from one
//! direction to the other costs `turnaround` of extra air time, which is how
//! two-way traffic loses capacity to contention.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{DirStats, Link, LinkStats};
use crate::model::{CapacitySchedule, Direction, LossSchedule, Packet, Probability, Timestamp};

pub const DEFAULT_BUFFER: u32 = 1_000;
/// Downlink buffer of the asymmetric access-point profile.
pub const ASYMMETRIC_DOWNLINK_BUFFER: u32 = 64;
pub const DEFAULT_PROP_DELAY: Timestamp = Timestamp::from_millis(1);
pub const DEFAULT_TURNAROUND: Timestamp = Timestamp::from_micros(100);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MediumConfig {
    pub capacity: CapacitySchedule,
    pub loss: LossSchedule,
    pub prop_delay: Timestamp,
    pub buffer_up: u32,
    pub buffer_down: u32,
    pub weight_up: u32,
    pub weight_down: u32,
    /// Extra air time when the transmitter changes direction.
    pub turnaround: Timestamp,
    pub seed: u64,
}

impl MediumConfig {
    /// Symmetric 1000/1000 buffers, equal weights, lossless.
    pub fn symmetric(capacity: CapacitySchedule) -> Self {
        MediumConfig {
            capacity,
            loss: LossSchedule::lossless(),
            prop_delay: DEFAULT_PROP_DELAY,
            buffer_up: DEFAULT_BUFFER,
            buffer_down: DEFAULT_BUFFER,
            weight_up: 1,
            weight_down: 1,
            turnaround: DEFAULT_TURNAROUND,
            seed: 0,
        }
    }

    /// Deep uplink queue, shallow downlink queue.
    pub fn asymmetric(capacity: CapacitySchedule) -> Self {
        MediumConfig {
            buffer_down: ASYMMETRIC_DOWNLINK_BUFFER,
            ..Self::symmetric(capacity)
        }
    }

    pub fn buffer(&self, dir: Direction) -> u32 {
        match dir {
            Direction::Uplink => self.buffer_up,
            Direction::Downlink => self.buffer_down,
        }
    }

    pub fn weight(&self, dir: Direction) -> u32 {
        match dir {
            Direction::Uplink => self.weight_up,
            Direction::Downlink => self.weight_down,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.buffer_up == 0 || self.buffer_down == 0 {
            return Err("buffers must hold at least one packet".into());
        }
        if self.weight_up == 0 || self.weight_down == 0 {
            return Err("weights must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted,
    Dropped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossOutcome {
    Kept,
    Lost,
}

/// Air time of one transmission, `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ServiceInterval {
    pub start: Timestamp,
    pub end: Timestamp,
    pub dir: Direction,
}

/// `size * 8 / rate`, rounded up to a whole microsecond and never zero.
pub fn serialize_time(size_bytes: u32, t: Timestamp, capacity: &CapacitySchedule) -> Timestamp {
    let rate = capacity.capacity_at(t) as u128;
    debug_assert!(rate > 0);
    let bit_micros = size_bytes as u128 * 8 * 1_000_000;
    let us = bit_micros.div_ceil(rate).max(1);
    Timestamp::from_micros(us as u64)
}

#[derive(Debug)]
struct InService {
    pkt: Packet,
    done: Timestamp,
}

#[derive(Debug)]
pub struct Medium {
    cfg: MediumConfig,
    queues: [VecDeque<Packet>; 2],
    in_service: Option<InService>,
    busy_until: Timestamp,
    turn: Direction,
    served_in_turn: u32,
    last_served: Option<Direction>,
    rngs: [ChaCha8Rng; 2],
    stats: [DirStats; 2],
    intervals: Option<Vec<ServiceInterval>>,
}

impl Medium {
    pub fn new(cfg: MediumConfig) -> Self {
        let rng_for = |dir: Direction| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(dir.index() as u64 + 1);
            rng
        };
        Medium {
            rngs: [rng_for(Direction::Uplink), rng_for(Direction::Downlink)],
            cfg,
            queues: [VecDeque::new(), VecDeque::new()],
            in_service: None,
            busy_until: Timestamp::ZERO,
            turn: Direction::Uplink,
            served_in_turn: 0,
            last_served: None,
            stats: [DirStats::default(); 2],
            intervals: None,
        }
    }

    /// Keep every service interval for later inspection.
    pub fn record_intervals(mut self) -> Self {
        self.intervals = Some(Vec::new());
        self
    }

    pub fn intervals(&self) -> &[ServiceInterval] {
        self.intervals.as_deref().unwrap_or(&[])
    }

    pub fn config(&self) -> &MediumConfig {
        &self.cfg
    }

    pub fn queue_len(&self, dir: Direction) -> usize {
        self.queues[dir.index()].len()
    }

    pub fn busy_until(&self) -> Timestamp {
        self.busy_until
    }

    pub fn is_idle(&self) -> bool {
        self.in_service.is_none()
    }

    /// Tail-drop admission into the packet's direction queue.
    pub fn enqueue(&mut self, pkt: Packet, _now: Timestamp) -> EnqueueOutcome {
        let d = pkt.dir.index();
        self.stats[d].enqueued += 1;
        if self.queues[d].len() >= self.cfg.buffer(pkt.dir) as usize {
            self.stats[d].queue_drops += 1;
            return EnqueueOutcome::Dropped;
        }
        self.stats[d].in_link += 1;
        self.queues[d].push_back(pkt);
        EnqueueOutcome::Accepted
    }

    /// Pick the direction to serve next, or `None` when both queues are empty.
    ///
    /// With both queues backlogged the transmitter serves `weight_up` uplink
    /// packets, then `weight_down` downlink packets, and so on.
    pub fn arbitrate(&mut self, now: Timestamp) -> Option<Direction> {
        debug_assert!(now >= self.busy_until);
        let up = !self.queues[Direction::Uplink.index()].is_empty();
        let down = !self.queues[Direction::Downlink.index()].is_empty();
        let dir = match (up, down) {
            (false, false) => return None,
            (true, false) => Direction::Uplink,
            (false, true) => Direction::Downlink,
            (true, true) => {
                if self.served_in_turn >= self.cfg.weight(self.turn) {
                    self.turn.reverse()
                } else {
                    self.turn
                }
            }
        };
        if dir != self.turn {
            self.turn = dir;
            self.served_in_turn = 0;
        }
        self.served_in_turn += 1;
        Some(dir)
    }

    /// Wire loss, drawn from the direction's own generator.
    pub fn apply_loss(&mut self, pkt: &Packet, t: Timestamp) -> LossOutcome {
        let p: Probability = self.cfg.loss.loss_at(t);
        let draw = self.rngs[pkt.dir.index()].gen_range(0..Probability::ONE_PPM);
        if draw < p.ppm() {
            LossOutcome::Lost
        } else {
            LossOutcome::Kept
        }
    }

    fn start_service(&mut self, now: Timestamp) {
        debug_assert!(self.in_service.is_none());
        let Some(dir) = self.arbitrate(now) else {
            return;
        };
        let pkt = self.queues[dir.index()]
            .pop_front()
            .expect("arbitrate only picks backlogged queues");
        let mut air = serialize_time(pkt.size_bytes, now, &self.cfg.capacity);
        if self.last_served.is_some_and(|prev| prev != dir) {
            air += self.cfg.turnaround;
        }
        let done = now + air;
        if let Some(iv) = self.intervals.as_mut() {
            iv.push(ServiceInterval { start: now, end: done, dir });
        }
        self.busy_until = done;
        self.last_served = Some(dir);
        self.in_service = Some(InService { pkt, done });
    }
}

impl Link for Medium {
    fn transmit(&mut self, pkt: Packet, now: Timestamp) {
        if self.enqueue(pkt, now) == EnqueueOutcome::Accepted && self.in_service.is_none() {
            self.start_service(now);
        }
    }

    fn next_event(&self) -> Option<Timestamp> {
        self.in_service.as_ref().map(|s| s.done)
    }

    fn advance(&mut self, now: Timestamp, delivered: &mut Vec<Packet>) {
        let Some(svc) = self.in_service.take_if(|s| s.done <= now) else {
            return;
        };
        let mut pkt = svc.pkt;
        let d = pkt.dir.index();
        self.stats[d].in_link -= 1;
        match self.apply_loss(&pkt, now) {
            LossOutcome::Lost => self.stats[d].wire_losses += 1,
            LossOutcome::Kept => {
                self.stats[d].delivered += 1;
                pkt.mark_delivered(now + self.cfg.prop_delay);
                delivered.push(pkt);
            }
        }
        self.start_service(now);
    }

    fn stats(&self) -> LinkStats {
        LinkStats { dirs: self.stats }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PacketKind;

    fn pkt(dir: Direction, seq: u64) -> Packet {
        Packet::new(PacketKind::Data, 1, dir, seq, 1500, Timestamp::ZERO)
    }

    fn medium(cfg: MediumConfig) -> Medium {
        Medium::new(cfg).record_intervals()
    }

    /// Drive the medium alone until it is idle, collecting deliveries.
    fn drain(m: &mut Medium) -> Vec<Packet> {
        let mut out = Vec::new();
        while let Some(t) = m.next_event() {
            m.advance(t, &mut out);
        }
        out
    }

    #[test]
    fn serialize_time_arithmetic() {
        // 1500 * 8 / 12e6 s = 1 ms; 1500 * 8 / 40e6 s = 300 us.
        let at12 = CapacitySchedule::constant(12_000_000);
        let at40 = CapacitySchedule::constant(40_000_000);
        assert_eq!(serialize_time(1500, Timestamp::ZERO, &at12), Timestamp::from_micros(1_000));
        assert_eq!(serialize_time(1500, Timestamp::ZERO, &at40), Timestamp::from_micros(300));
        let fast = CapacitySchedule::constant(100_000_000_000);
        assert_eq!(serialize_time(1, Timestamp::ZERO, &fast), Timestamp::from_micros(1));
        // 1 byte at 3 bps is 2.67 s, rounded up.
        let slow = CapacitySchedule::constant(3);
        assert_eq!(serialize_time(1, Timestamp::ZERO, &slow), Timestamp::from_micros(2_666_667));
    }

    #[test]
    fn tail_drop_counts_exact_overflow() {
        let mut cfg = MediumConfig::symmetric(CapacitySchedule::constant(10_000_000));
        cfg.buffer_up = 100;
        let mut m = Medium::new(cfg);
        let mut dropped = 0;
        for seq in 0..200 {
            if m.enqueue(pkt(Direction::Uplink, seq), Timestamp::ZERO) == EnqueueOutcome::Dropped {
                dropped += 1;
            }
        }
        assert_eq!(dropped, 100);
        assert_eq!(m.stats().dir(Direction::Uplink).queue_drops, 100);
        assert_eq!(m.queue_len(Direction::Uplink), 100);
    }

    #[test]
    fn empty_queue_accepts() {
        let mut m = Medium::new(MediumConfig::symmetric(CapacitySchedule::constant(1_000_000)));
        assert_eq!(m.enqueue(pkt(Direction::Downlink, 0), Timestamp::ZERO), EnqueueOutcome::Accepted);
    }

    #[test]
    fn arbitrate_single_backlog_and_idle() {
        let mut m = Medium::new(MediumConfig::symmetric(CapacitySchedule::constant(1_000_000)));
        assert_eq!(m.arbitrate(Timestamp::ZERO), None);
        for seq in 0..5 {
            m.enqueue(pkt(Direction::Uplink, seq), Timestamp::ZERO);
        }
        for _ in 0..5 {
            assert_eq!(m.arbitrate(Timestamp::ZERO), Some(Direction::Uplink));
        }
    }

    // Counting oracle: with both queues backlogged, an a:b weighting serves
    // a uplink then b downlink packets per round, so the uplink share over
    // whole rounds is a / (a + b).
    fn weighted_share(weight_up: u32, weight_down: u32, packets_each: u64) -> (u64, u64) {
        let mut cfg = MediumConfig::symmetric(CapacitySchedule::constant(12_000_000));
        cfg.buffer_up = packets_each as u32;
        cfg.buffer_down = packets_each as u32;
        cfg.weight_up = weight_up;
        cfg.weight_down = weight_down;
        let mut m = medium(cfg);
        for seq in 0..packets_each {
            m.enqueue(pkt(Direction::Uplink, seq), Timestamp::ZERO);
            m.enqueue(pkt(Direction::Downlink, seq), Timestamp::ZERO);
        }
        m.start_service(Timestamp::ZERO);
        let horizon = Timestamp::from_micros(m.intervals()[0].end.as_micros() * packets_each);
        let mut out = Vec::new();
        while let Some(t) = m.next_event() {
            if t > horizon {
                break;
            }
            m.advance(t, &mut out);
        }
        let up = out.iter().filter(|p| p.dir == Direction::Uplink).count() as u64;
        (up, out.len() as u64)
    }

    #[test]
    fn equal_weights_split_evenly() {
        let (up, total) = weighted_share(1, 1, 2_000);
        let share = up as f64 / total as f64;
        assert!((share - 0.5).abs() < 0.01, "share {share}");
    }

    #[test]
    fn three_to_one_weights_give_uplink_three_quarters() {
        let (up, total) = weighted_share(3, 1, 4_000);
        let share = up as f64 / total as f64;
        assert!((share - 0.75).abs() < 0.01, "share {share}");
    }

    #[test]
    fn service_is_half_duplex_and_work_conserving() {
        let mut cfg = MediumConfig::symmetric(CapacitySchedule::constant(20_000_000));
        cfg.loss = LossSchedule::constant(Probability::from_ppm(50_000).unwrap());
        let mut m = medium(cfg);
        for seq in 0..300 {
            m.transmit(pkt(Direction::Uplink, seq), Timestamp::ZERO);
            m.transmit(pkt(Direction::Downlink, seq), Timestamp::ZERO);
        }
        let delivered = drain(&mut m);
        let iv = m.intervals();
        assert_eq!(iv.len(), 600);
        for w in iv.windows(2) {
            assert_eq!(w[0].end, w[1].start, "no gaps and no overlap while backlogged");
        }
        for d in Direction::BOTH {
            let s = m.stats().dirs[d.index()];
            assert!(s.is_conserved());
            assert_eq!(s.in_link, 0);
        }
        assert!(delivered.len() < 600);
        assert!(delivered.iter().all(|p| p.delivered_at.unwrap() > p.sent_at));
    }

    #[test]
    fn zero_loss_never_drops() {
        let mut m = Medium::new(MediumConfig::symmetric(CapacitySchedule::constant(50_000_000)));
        for seq in 0..1_000 {
            let p = pkt(Direction::Uplink, seq);
            assert_eq!(m.apply_loss(&p, Timestamp::from_millis(seq)), LossOutcome::Kept);
        }
    }

    #[test]
    fn loss_fraction_matches_one_percent() {
        // Binomial(1e5, 0.01) has sd ~31 packets; [800, 1200] is more than 6 sd wide.
        let mut cfg = MediumConfig::symmetric(CapacitySchedule::constant(50_000_000));
        cfg.loss = LossSchedule::constant(Probability::from_ppm(10_000).unwrap());
        cfg.seed = 42;
        let mut m = Medium::new(cfg);
        let p = pkt(Direction::Uplink, 0);
        let lost = (0..100_000)
            .filter(|_| m.apply_loss(&p, Timestamp::ZERO) == LossOutcome::Lost)
            .count();
        assert!((800..=1_200).contains(&lost), "lost {lost}");
    }

    #[test]
    fn turnaround_charged_on_direction_change() {
        let mut cfg = MediumConfig::symmetric(CapacitySchedule::constant(12_000_000));
        cfg.turnaround = Timestamp::from_micros(100);
        let mut m = medium(cfg);
        m.transmit(pkt(Direction::Uplink, 0), Timestamp::ZERO);
        m.transmit(pkt(Direction::Downlink, 0), Timestamp::ZERO);
        drain(&mut m);
        let iv = m.intervals();
        assert_eq!(iv[0].end - iv[0].start, Timestamp::from_micros(1_000));
        assert_eq!(iv[1].end - iv[1].start, Timestamp::from_micros(1_100));
    }
}
