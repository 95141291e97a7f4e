//! Discrete-event driver shared by the shared-medium simulator and the replay
//! shell. A [`Link`] moves packets between the two endpoints; [`Flow`]s are
//! the traffic machines attached to it.
//!
//! Events are processed in `(time, insertion order)` order. When the link and
//! the event queue have something due at the same instant the link goes
//! first.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::log::LogRecord;
use crate::model::{Direction, FlowId, Packet, Probability, Timestamp};

/// Which path a flow wants a packet to take.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    /// Through the link under test.
    Link,
    /// Over the feedback channel, which may itself be routed over the link.
    Feedback,
}

/// Collects what a flow wants done after handling an event.
#[derive(Debug, Default)]
pub struct Outbox {
    packets: Vec<(Route, Packet)>,
    timers: Vec<Timestamp>,
}

impl Outbox {
    pub fn send(&mut self, route: Route, pkt: Packet) {
        self.packets.push((route, pkt));
    }

    pub fn wake_at(&mut self, t: Timestamp) {
        self.timers.push(t);
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty() && self.timers.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowKind {
    Saturator,
    Cbr,
    Aimd,
    Bulk,
}

impl FlowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::Saturator => "saturator",
            FlowKind::Cbr => "cbr",
            FlowKind::Aimd => "aimd",
            FlowKind::Bulk => "bulk",
        }
    }
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FlowKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "saturator" => Ok(FlowKind::Saturator),
            "cbr" => Ok(FlowKind::Cbr),
            "aimd" => Ok(FlowKind::Aimd),
            "bulk" => Ok(FlowKind::Bulk),
            other => Err(format!("unknown flow kind `{other}`")),
        }
    }
}

/// Sender-side and receiver-side logs of one flow in one data direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowLog {
    pub flow_id: FlowId,
    pub dir: Direction,
    pub kind: FlowKind,
    pub start: Timestamp,
    pub send_log: Vec<LogRecord>,
    pub recv_log: Vec<LogRecord>,
}

/// A traffic machine. Both endpoints of the flow live in one value; data
/// arrivals go to its receiver half and ACK arrivals to its sender half.
pub trait Flow {
    fn id(&self) -> FlowId;

    /// Direction the flow's data travels in.
    fn data_dir(&self) -> Direction;

    /// Called once at time zero.
    fn start(&mut self, now: Timestamp, out: &mut Outbox);

    fn on_arrival(&mut self, pkt: Packet, now: Timestamp, out: &mut Outbox);

    /// Timers may fire spuriously; implementations must be idempotent.
    fn on_timer(&mut self, now: Timestamp, out: &mut Outbox);

    /// Whether the flow still expects events. A run that runs out of events
    /// while a flow is pending is reported as starved.
    fn is_pending(&self) -> bool {
        false
    }

    fn into_log(self: Box<Self>) -> FlowLog;
}

/// Per-direction packet accounting for a link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DirStats {
    pub enqueued: u64,
    pub delivered: u64,
    pub queue_drops: u64,
    pub wire_losses: u64,
    /// Accepted but not yet delivered or lost.
    pub in_link: u64,
    /// Trace wrap-arounds (replay only).
    pub wraps: u64,
}

impl DirStats {
    /// delivered + lost + dropped + still in the link = offered.
    pub fn is_conserved(&self) -> bool {
        self.delivered + self.wire_losses + self.queue_drops + self.in_link == self.enqueued
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub dirs: [DirStats; 2],
}

impl LinkStats {
    pub fn dir(&self, d: Direction) -> &DirStats {
        &self.dirs[d.index()]
    }
}

/// Anything that can carry packets between the two endpoints.
pub trait Link {
    /// Hand a packet to the link at `now`.
    fn transmit(&mut self, pkt: Packet, now: Timestamp);

    /// Time of the next internal event, if any.
    fn next_event(&self) -> Option<Timestamp>;

    /// Process internal events due at `now`. Packets that will reach their
    /// endpoint are pushed with `delivered_at` set to the arrival time.
    fn advance(&mut self, now: Timestamp, delivered: &mut Vec<Packet>);

    fn stats(&self) -> LinkStats;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeedbackConfig {
    pub delay: Timestamp,
    pub loss: Probability,
    /// Send feedback through the link under test instead of a side channel.
    pub via_link: bool,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        FeedbackConfig {
            delay: Timestamp::from_millis(1),
            loss: Probability::ZERO,
            via_link: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FeedbackStats {
    pub sent: u64,
    pub lost: u64,
}

/// RNG stream reserved for the feedback channel.
pub(crate) const FEEDBACK_STREAM: u64 = 7;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("event queue ran dry at {at} while flows {flows:?} were still pending")]
    Starved { at: Timestamp, flows: Vec<FlowId> },
    #[error("flow {flow_id} ({dir}) is attached twice")]
    DuplicateFlow { flow_id: FlowId, dir: Direction },
}

#[derive(Debug)]
enum EventKind {
    Arrival(Packet),
    FlowTimer(usize),
}

#[derive(Debug)]
struct Scheduled {
    t: Timestamp,
    order: u64,
    kind: EventKind,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.order == other.order
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so that BinaryHeap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.t, other.order).cmp(&(self.t, self.order))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Scheduled>,
    next_order: u64,
}

impl EventQueue {
    fn push(&mut self, t: Timestamp, kind: EventKind) {
        self.heap.push(Scheduled {
            t,
            order: self.next_order,
            kind,
        });
        self.next_order += 1;
    }

    fn peek_time(&self) -> Option<Timestamp> {
        self.heap.peek().map(|s| s.t)
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop()
    }
}

/// Result of a run: per-flow logs plus the final link state.
pub struct RunOutput<L> {
    pub flows: Vec<FlowLog>,
    pub link: L,
    pub feedback: FeedbackStats,
    pub end: Timestamp,
}

impl<L: Link> RunOutput<L> {
    pub fn stats(&self) -> LinkStats {
        self.link.stats()
    }

    pub fn flow(&self, flow_id: FlowId, dir: Direction) -> Option<&FlowLog> {
        self.flows.iter().find(|f| f.flow_id == flow_id && f.dir == dir)
    }
}

pub struct Simulation<L> {
    link: L,
    feedback: FeedbackConfig,
    feedback_rng: ChaCha8Rng,
    feedback_stats: FeedbackStats,
    flows: Vec<Box<dyn Flow>>,
    routes: HashMap<(FlowId, Direction), usize>,
    queue: EventQueue,
    now: Timestamp,
}

impl<L: Link> Simulation<L> {
    pub fn new(link: L, feedback: FeedbackConfig, seed: u64) -> Self {
        let mut feedback_rng = ChaCha8Rng::seed_from_u64(seed);
        feedback_rng.set_stream(FEEDBACK_STREAM);
        Simulation {
            link,
            feedback,
            feedback_rng,
            feedback_stats: FeedbackStats::default(),
            flows: Vec::new(),
            routes: HashMap::new(),
            queue: EventQueue::default(),
            now: Timestamp::ZERO,
        }
    }

    pub fn attach(&mut self, flow: Box<dyn Flow>) -> Result<(), SimError> {
        let key = (flow.id(), flow.data_dir());
        if self.routes.contains_key(&key) {
            return Err(SimError::DuplicateFlow {
                flow_id: key.0,
                dir: key.1,
            });
        }
        self.routes.insert(key, self.flows.len());
        self.flows.push(flow);
        Ok(())
    }

    fn dispatch(&mut self, idx: usize, out: Outbox) {
        for t in out.timers {
            self.queue.push(t.max(self.now), EventKind::FlowTimer(idx));
        }
        for (route, pkt) in out.packets {
            match route {
                Route::Link => self.link.transmit(pkt, self.now),
                Route::Feedback if self.feedback.via_link => self.link.transmit(pkt, self.now),
                Route::Feedback => {
                    self.feedback_stats.sent += 1;
                    let draw = self.feedback_rng.gen_range(0..Probability::ONE_PPM);
                    if draw < self.feedback.loss.ppm() {
                        self.feedback_stats.lost += 1;
                    } else {
                        let mut pkt = pkt;
                        let at = self.now + self.feedback.delay;
                        pkt.mark_delivered(at);
                        self.queue.push(at, EventKind::Arrival(pkt));
                    }
                }
            }
        }
    }

    /// Run until `until` (exclusive) and hand back the logs.
    pub fn run(mut self, until: Timestamp) -> Result<RunOutput<L>, SimError> {
        for idx in 0..self.flows.len() {
            let mut out = Outbox::default();
            self.flows[idx].start(self.now, &mut out);
            self.dispatch(idx, out);
        }

        let mut delivered = Vec::new();
        loop {
            let link_t = self.link.next_event();
            let queue_t = self.queue.peek_time();
            let next = match (link_t, queue_t) {
                (None, None) => break,
                (Some(a), None) | (None, Some(a)) => a,
                (Some(a), Some(b)) => a.min(b),
            };
            if next >= until {
                break;
            }
            self.now = next;

            if link_t == Some(next) {
                self.link.advance(next, &mut delivered);
                for pkt in delivered.drain(..) {
                    let at = pkt.delivered_at.expect("link sets delivery time");
                    self.queue.push(at, EventKind::Arrival(pkt));
                }
                continue;
            }

            let ev = self.queue.pop().expect("peeked");
            let mut out = Outbox::default();
            let idx = match ev.kind {
                EventKind::Arrival(pkt) => {
                    let key = (pkt.flow_id, pkt.data_dir());
                    match self.routes.get(&key) {
                        Some(&idx) => {
                            self.flows[idx].on_arrival(pkt, self.now, &mut out);
                            idx
                        }
                        None => {
                            log::debug!("dropping packet for unknown flow {key:?}");
                            continue;
                        }
                    }
                }
                EventKind::FlowTimer(idx) => {
                    self.flows[idx].on_timer(self.now, &mut out);
                    idx
                }
            };
            if !out.is_empty() {
                self.dispatch(idx, out);
            }
        }

        if self.queue.peek_time().is_none() && self.link.next_event().is_none() && self.now < until {
            let pending: Vec<FlowId> = self
                .flows
                .iter()
                .filter(|f| f.is_pending())
                .map(|f| f.id())
                .collect();
            if !pending.is_empty() {
                return Err(SimError::Starved {
                    at: self.now,
                    flows: pending,
                });
            }
        }

        Ok(RunOutput {
            flows: self.flows.into_iter().map(|f| f.into_log()).collect(),
            link: self.link,
            feedback: self.feedback_stats,
            end: until,
        })
    }
}
