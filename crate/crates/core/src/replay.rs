//! Trace-driven link.
//!
//! Each direction is a propagation-delay stage in front of a tail-drop FIFO.
//! The FIFO is drained only at the instants listed in that direction's
//! delivery trace; each instant carries up to one MTU of bytes and is wasted
//! if nothing is queued. A direction without a trace is a pure delay line.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{DirStats, FeedbackConfig, Flow, Link, LinkStats, RunOutput, SimError, Simulation};
use crate::model::{Direction, Packet, Probability, Timestamp};
use crate::trace::DeliveryTrace;

pub const DEFAULT_REPLAY_PROP_DELAY: Timestamp = Timestamp::from_millis(20);
pub const DEFAULT_QUEUE_LIMIT: u32 = 1_000;

#[derive(Clone, Debug)]
pub struct ReplayConfig {
    pub trace_up: Option<DeliveryTrace>,
    pub trace_down: Option<DeliveryTrace>,
    pub prop_delay: Timestamp,
    pub queue_limit: u32,
    pub inject_loss: Probability,
    pub seed: u64,
    pub wrap: bool,
}

impl ReplayConfig {
    pub fn new(trace_up: Option<DeliveryTrace>, trace_down: Option<DeliveryTrace>) -> Self {
        ReplayConfig {
            trace_up,
            trace_down,
            prop_delay: DEFAULT_REPLAY_PROP_DELAY,
            queue_limit: DEFAULT_QUEUE_LIMIT,
            inject_loss: Probability::ZERO,
            seed: 0,
            wrap: true,
        }
    }

    pub fn trace(&self, dir: Direction) -> Option<&DeliveryTrace> {
        match dir {
            Direction::Uplink => self.trace_up.as_ref(),
            Direction::Downlink => self.trace_down.as_ref(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.queue_limit == 0 {
            return Err("queue_limit must be at least 1".into());
        }
        for dir in Direction::BOTH {
            if self.trace(dir).is_some_and(|t| t.is_empty()) {
                return Err(format!("{dir} trace has no delivery opportunities"));
            }
        }
        Ok(())
    }
}

/// Position in a trace, counting completed passes.
#[derive(Clone, Debug)]
struct Cursor {
    trace: DeliveryTrace,
    idx: usize,
    base_ms: u64,
    passes: u64,
    wrap: bool,
    dark: bool,
}

impl Cursor {
    fn new(trace: DeliveryTrace, wrap: bool) -> Self {
        Cursor {
            trace,
            idx: 0,
            base_ms: 0,
            passes: 0,
            wrap,
            dark: false,
        }
    }

    fn current(&self) -> Option<Timestamp> {
        if self.dark {
            return None;
        }
        let ms = self.base_ms + self.trace.opportunities_ms[self.idx];
        Some(Timestamp::from_micros(ms * 1000))
    }

    fn bump(&mut self, dir: Direction) {
        self.idx += 1;
        if self.idx < self.trace.len() {
            return;
        }
        if !self.wrap {
            log::warn!("{dir} trace exhausted; link is dark from here on");
            self.dark = true;
            return;
        }
        self.idx = 0;
        self.base_ms += self.trace.period_ms();
        self.passes += 1;
        if self.passes == 1 {
            log::warn!("{dir} trace ran out and restarts from the beginning");
        } else {
            log::debug!("{dir} trace wrapped around (pass {})", self.passes + 1);
        }
    }

    /// Discard opportunities before `t`; they found the queue empty.
    fn skip_to(&mut self, t: Timestamp, dir: Direction) {
        let target_ms = t.as_micros().div_ceil(1000);
        let period = self.trace.period_ms();
        if self.wrap && !self.dark && target_ms >= self.base_ms + period {
            let whole = (target_ms - self.base_ms) / period;
            if whole > 1 {
                // Jump whole idle passes at once.
                self.base_ms += (whole - 1) * period;
                self.passes += whole - 1;
                self.idx = 0;
                log::debug!("{dir} trace wrapped around {} times while idle", whole - 1);
            }
        }
        while let Some(at) = self.current() {
            if at >= t {
                break;
            }
            self.bump(dir);
        }
    }
}

#[derive(Debug)]
struct Lane {
    dir: Direction,
    cursor: Option<Cursor>,
    delay_stage: VecDeque<(Timestamp, Packet)>,
    queue: VecDeque<Packet>,
    /// Opportunities already spent on the head packet.
    head_progress: u32,
    rng: ChaCha8Rng,
    stats: DirStats,
}

/// Observable state of a replay instance.
#[derive(Debug)]
pub struct ReplayState {
    lanes: [Lane; 2],
    prop_delay: Timestamp,
    queue_limit: usize,
    inject_loss: Probability,
}

impl ReplayState {
    pub fn new(cfg: ReplayConfig) -> Self {
        let lane = |dir: Direction, trace: Option<DeliveryTrace>| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(dir.index() as u64 + 1);
            Lane {
                dir,
                cursor: trace.map(|t| Cursor::new(t, cfg.wrap)),
                delay_stage: VecDeque::new(),
                queue: VecDeque::new(),
                head_progress: 0,
                rng,
                stats: DirStats::default(),
            }
        };
        ReplayState {
            lanes: [
                lane(Direction::Uplink, cfg.trace_up),
                lane(Direction::Downlink, cfg.trace_down),
            ],
            prop_delay: cfg.prop_delay,
            queue_limit: cfg.queue_limit as usize,
            inject_loss: cfg.inject_loss,
        }
    }

    /// Accept a packet from an endpoint. It reaches its queue after the
    /// propagation delay.
    pub fn ingest(&mut self, pkt: Packet, now: Timestamp) {
        let lane = &mut self.lanes[pkt.dir.index()];
        lane.stats.enqueued += 1;
        lane.stats.in_link += 1;
        lane.delay_stage.push_back((now + self.prop_delay, pkt));
    }

    pub fn queue_len(&self, dir: Direction) -> usize {
        self.lanes[dir.index()].queue.len()
    }

    pub fn is_dark(&self, dir: Direction) -> bool {
        self.lanes[dir.index()]
            .cursor
            .as_ref()
            .is_some_and(|c| c.dark)
    }

    pub fn next_event(&self) -> Option<Timestamp> {
        self.lanes.iter().filter_map(Lane::next_event).min()
    }

    /// Process everything due at or before `until` and return the delivered
    /// packets with `delivered_at` set.
    pub fn step(&mut self, until: Timestamp) -> Vec<Packet> {
        let mut out = Vec::new();
        while let Some(t) = self.next_event().filter(|&t| t <= until) {
            self.advance_to(t, &mut out);
        }
        out
    }

    fn advance_to(&mut self, now: Timestamp, out: &mut Vec<Packet>) {
        for lane in &mut self.lanes {
            lane.admit(now, self.queue_limit, out);
            lane.serve(now, self.inject_loss, out);
        }
    }

    pub fn stats(&self) -> LinkStats {
        let with_wraps = |l: &Lane| DirStats {
            wraps: l.cursor.as_ref().map_or(0, |c| c.passes),
            ..l.stats
        };
        LinkStats {
            dirs: [with_wraps(&self.lanes[0]), with_wraps(&self.lanes[1])],
        }
    }

    pub fn summary(&self) -> ReplaySummary {
        let lane_summary = |l: &Lane| LaneSummary {
            delivered: l.stats.delivered,
            dropped: l.stats.queue_drops,
            injected_loss: l.stats.wire_losses,
            wraps: l.cursor.as_ref().map_or(0, |c| c.passes),
            dark: l.cursor.as_ref().is_some_and(|c| c.dark),
        };
        ReplaySummary {
            up: lane_summary(&self.lanes[0]),
            down: lane_summary(&self.lanes[1]),
        }
    }
}

impl Lane {
    fn next_event(&self) -> Option<Timestamp> {
        let entry = self.delay_stage.front().map(|(t, _)| *t);
        let service = if self.queue.is_empty() {
            None
        } else {
            self.cursor.as_ref().and_then(Cursor::current)
        };
        match (entry, service) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn admit(&mut self, now: Timestamp, limit: usize, out: &mut Vec<Packet>) {
        while let Some((at, _)) = self.delay_stage.front() {
            if *at > now {
                break;
            }
            let (at, mut pkt) = self.delay_stage.pop_front().expect("peeked");
            let Some(cursor) = self.cursor.as_mut() else {
                self.stats.in_link -= 1;
                self.stats.delivered += 1;
                pkt.mark_delivered(at);
                out.push(pkt);
                continue;
            };
            if self.queue.len() >= limit {
                self.stats.in_link -= 1;
                self.stats.queue_drops += 1;
                continue;
            }
            if self.queue.is_empty() {
                cursor.skip_to(at, self.dir);
            }
            self.queue.push_back(pkt);
        }
    }

    fn serve(&mut self, now: Timestamp, loss: Probability, out: &mut Vec<Packet>) {
        let Some(cursor) = self.cursor.as_mut() else {
            return;
        };
        let mtu = cursor.trace.mtu_bytes;
        while !self.queue.is_empty() {
            let Some(at) = cursor.current().filter(|&at| at <= now) else {
                break;
            };
            cursor.bump(self.dir);
            let mut budget = mtu;
            while let Some(head) = self.queue.front() {
                let size = head.size_bytes;
                if size > mtu {
                    // Oversized packets need several whole opportunities.
                    if budget < mtu {
                        break;
                    }
                    self.head_progress += 1;
                    budget = 0;
                    if self.head_progress < size.div_ceil(mtu) {
                        break;
                    }
                } else if size <= budget {
                    budget -= size;
                } else {
                    break;
                }
                self.head_progress = 0;
                let mut pkt = self.queue.pop_front().expect("peeked");
                self.stats.in_link -= 1;
                let draw = self.rng.gen_range(0..Probability::ONE_PPM);
                if draw < loss.ppm() {
                    self.stats.wire_losses += 1;
                } else {
                    self.stats.delivered += 1;
                    pkt.mark_delivered(at);
                    out.push(pkt);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LaneSummary {
    pub delivered: u64,
    pub dropped: u64,
    pub injected_loss: u64,
    pub wraps: u64,
    pub dark: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub up: LaneSummary,
    pub down: LaneSummary,
}

impl ReplaySummary {
    pub fn lane(&self, dir: Direction) -> &LaneSummary {
        match dir {
            Direction::Uplink => &self.up,
            Direction::Downlink => &self.down,
        }
    }
}

/// [`ReplayState`] as a [`Link`] for the event engine.
#[derive(Debug)]
pub struct ReplayLink {
    state: ReplayState,
}

impl ReplayLink {
    pub fn new(cfg: ReplayConfig) -> Self {
        ReplayLink {
            state: ReplayState::new(cfg),
        }
    }

    pub fn state(&self) -> &ReplayState {
        &self.state
    }

    pub fn summary(&self) -> ReplaySummary {
        self.state.summary()
    }
}

impl Link for ReplayLink {
    fn transmit(&mut self, pkt: Packet, now: Timestamp) {
        self.state.ingest(pkt, now);
    }

    fn next_event(&self) -> Option<Timestamp> {
        self.state.next_event()
    }

    fn advance(&mut self, now: Timestamp, delivered: &mut Vec<Packet>) {
        self.state.advance_to(now, delivered);
    }

    fn stats(&self) -> LinkStats {
        self.state.stats()
    }
}

/// Run `flows` over a replayed link for `duration`.
pub fn replay_run(
    cfg: ReplayConfig,
    feedback: FeedbackConfig,
    flows: Vec<Box<dyn Flow>>,
    duration: Timestamp,
) -> Result<RunOutput<ReplayLink>, SimError> {
    let seed = cfg.seed;
    let mut sim = Simulation::new(ReplayLink::new(cfg), feedback, seed);
    for f in flows {
        sim.attach(f)?;
    }
    sim.run(duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PacketKind;
    use proptest::prelude::*;

    fn pkt(seq: u64, size: u32) -> Packet {
        Packet::new(PacketKind::Data, 1, Direction::Uplink, seq, size, Timestamp::ZERO)
    }

    fn per_ms(n: u64) -> DeliveryTrace {
        DeliveryTrace::new((0..n).collect(), 1500).unwrap()
    }

    fn cfg(trace: DeliveryTrace) -> ReplayConfig {
        let mut c = ReplayConfig::new(Some(trace), None);
        c.prop_delay = Timestamp::ZERO;
        c
    }

    #[test]
    fn propagation_delay_before_queue() {
        let mut c = cfg(per_ms(100));
        c.prop_delay = Timestamp::from_millis(20);
        let mut s = ReplayState::new(c);
        s.ingest(pkt(0, 1500), Timestamp::ZERO);
        assert_eq!(s.next_event(), Some(Timestamp::from_millis(20)));
        let out = s.step(Timestamp::from_millis(19));
        assert!(out.is_empty());
        let out = s.step(Timestamp::from_millis(100));
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].delivered_at, Some(Timestamp::from_millis(20)));
    }

    #[test]
    fn preloaded_queue_drains_at_trace_rate() {
        let mut s = ReplayState::new(cfg(per_ms(1000)));
        for seq in 0..1000 {
            s.ingest(pkt(seq, 1500), Timestamp::ZERO);
        }
        let out = s.step(Timestamp::from_secs(1));
        assert_eq!(out.len(), 1000);
        // Packet k leaves at opportunity k, i.e. k ms: 12 Mbps.
        for (k, p) in out.iter().enumerate() {
            assert_eq!(p.seq, k as u64);
            assert_eq!(p.delivered_at, Some(Timestamp::from_millis(k as u64)));
        }
    }

    #[test]
    fn queue_limit_tail_drops() {
        let mut c = cfg(per_ms(10));
        c.queue_limit = 3;
        c.prop_delay = Timestamp::from_micros(500);
        let mut s = ReplayState::new(c);
        for seq in 0..5 {
            s.ingest(pkt(seq, 1500), Timestamp::ZERO);
        }
        let out = s.step(Timestamp::from_millis(50));
        assert_eq!(out.len(), 3);
        assert_eq!(s.stats().dir(Direction::Uplink).queue_drops, 2);
        assert!(s.stats().dir(Direction::Uplink).is_conserved());
    }

    #[test]
    fn unused_opportunities_are_not_banked() {
        let mut s = ReplayState::new(cfg(per_ms(1000)));
        for seq in 0..10 {
            s.ingest(pkt(seq, 1500), Timestamp::from_millis(500));
        }
        let out = s.step(Timestamp::from_secs(1));
        let times: Vec<u64> = out.iter().map(|p| p.delivered_at.unwrap().as_millis()).collect();
        assert_eq!(times, (500..510).collect::<Vec<_>>());
    }

    #[test]
    fn small_packets_share_an_opportunity() {
        let mut s = ReplayState::new(cfg(DeliveryTrace::new(vec![0, 1], 1500).unwrap()));
        for seq in 0..40 {
            s.ingest(pkt(seq, 40), Timestamp::ZERO);
        }
        s.ingest(pkt(40, 1500), Timestamp::ZERO);
        let out = s.step(Timestamp::from_millis(1));
        // 37 * 40 = 1480 bytes fit in the first opportunity.
        assert_eq!(out.iter().filter(|p| p.delivered_at == Some(Timestamp::ZERO)).count(), 37);
        assert_eq!(s.queue_len(Direction::Uplink), 1);
    }

    #[test]
    fn oversized_packet_needs_several_opportunities() {
        let trace = DeliveryTrace::new(vec![0, 1, 2, 3], 600).unwrap();
        let mut s = ReplayState::new(cfg(trace));
        s.ingest(pkt(0, 1500), Timestamp::ZERO);
        let out = s.step(Timestamp::from_millis(3));
        assert_eq!(out[0].delivered_at, Some(Timestamp::from_millis(2)));
    }

    #[test]
    fn full_injected_loss_delivers_nothing() {
        let mut c = cfg(per_ms(100));
        c.inject_loss = Probability::ONE;
        let mut s = ReplayState::new(c);
        for seq in 0..50 {
            s.ingest(pkt(seq, 1500), Timestamp::ZERO);
        }
        assert!(s.step(Timestamp::from_secs(1)).is_empty());
        assert_eq!(s.summary().up.injected_loss, 50);
    }

    #[test]
    fn wraps_or_goes_dark() {
        let mut s = ReplayState::new(cfg(per_ms(10)));
        for seq in 0..25 {
            s.ingest(pkt(seq, 1500), Timestamp::ZERO);
        }
        let out = s.step(Timestamp::from_secs(1));
        assert_eq!(out.len(), 25);
        assert_eq!(out[24].delivered_at, Some(Timestamp::from_millis(24)));
        assert_eq!(s.summary().up.wraps, 2);

        let mut c = cfg(per_ms(10));
        c.wrap = false;
        let mut s = ReplayState::new(c);
        for seq in 0..25 {
            s.ingest(pkt(seq, 1500), Timestamp::ZERO);
        }
        assert_eq!(s.step(Timestamp::from_secs(1)).len(), 10);
        assert!(s.is_dark(Direction::Uplink));
        assert_eq!(s.stats().dir(Direction::Uplink).in_link, 15);
    }

    #[test]
    fn idle_skip_across_many_passes() {
        let trace = DeliveryTrace::new(vec![3, 7], 1500).unwrap();
        let mut s = ReplayState::new(cfg(trace));
        s.ingest(pkt(0, 1500), Timestamp::from_millis(805));
        let out = s.step(Timestamp::from_secs(2));
        // Period 8 ms: opportunities at 800+3 and 800+7.
        assert_eq!(out[0].delivered_at, Some(Timestamp::from_millis(807)));
    }

    #[test]
    fn missing_trace_is_delay_line() {
        let mut c = ReplayConfig::new(None, None);
        c.prop_delay = Timestamp::from_millis(5);
        let mut s = ReplayState::new(c);
        s.ingest(pkt(0, 1500), Timestamp::from_millis(1));
        let out = s.step(Timestamp::from_secs(1));
        assert_eq!(out[0].delivered_at, Some(Timestamp::from_millis(6)));
    }

    proptest! {
        #[test]
        fn delivered_bytes_bounded_by_opportunities(
            mut ops in prop::collection::vec(0u64..2_000, 1..400),
            arrivals in prop::collection::vec((0u64..2_000_000, 40u32..=1500), 1..300),
        ) {
            ops.sort_unstable();
            let trace = DeliveryTrace::new(ops.clone(), 1500).unwrap();
            let mut c = cfg(trace);
            c.wrap = false;
            c.queue_limit = 10_000;
            let mut s = ReplayState::new(c);
            let mut arrivals = arrivals;
            arrivals.sort_unstable();
            let mut out = Vec::new();
            for (i, &(t, size)) in arrivals.iter().enumerate() {
                let t = Timestamp::from_micros(t);
                out.extend(s.step(t));
                s.ingest(pkt(i as u64, size), t);
            }
            out.extend(s.step(Timestamp::from_secs(10)));
            // FIFO order.
            prop_assert!(out.windows(2).all(|w| w[0].seq < w[1].seq));
            // Any prefix of time carries at most mtu per opportunity.
            for &cut in &[250u64, 500, 1000, 2000] {
                let bytes: u64 = out.iter()
                    .filter(|p| p.delivered_at.unwrap().as_millis() < cut)
                    .map(|p| p.size_bytes as u64).sum();
                let cap = ops.iter().filter(|&&o| o < cut).count() as u64 * 1500;
                prop_assert!(bytes <= cap);
            }
            prop_assert!(s.stats().dir(Direction::Uplink).is_conserved());
        }
    }
}
