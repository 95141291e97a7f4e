//! Shared domain types: integer microsecond time, directions, packets and
//! piecewise-constant schedules.

use std::fmt;
use std::ops::{Add, AddAssign, Sub};
use std::str::FromStr;

use thiserror::Error;

/// Largest packet the toolkit will carry (Ethernet MTU plus a small margin).
pub const MAX_PACKET_SIZE: u32 = 1504;

/// Default data packet size.
pub const DEFAULT_PACKET_SIZE: u32 = 1500;

/// Microseconds since scenario start. Also used for durations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);
    pub const MAX: Timestamp = Timestamp(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        Timestamp(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    /// Whole milliseconds, rounded down.
    pub const fn as_millis(self) -> u64 {
        self.0 / 1_000
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: Timestamp) -> Timestamp {
        Timestamp(self.0.saturating_sub(other.0))
    }

    pub fn checked_sub(self, other: Timestamp) -> Option<Timestamp> {
        self.0.checked_sub(other.0).map(Timestamp)
    }
}

impl Add for Timestamp {
    type Output = Timestamp;

    fn add(self, rhs: Timestamp) -> Timestamp {
        Timestamp(self.0 + rhs.0)
    }
}

impl AddAssign for Timestamp {
    fn add_assign(&mut self, rhs: Timestamp) {
        self.0 += rhs.0;
    }
}

impl Sub for Timestamp {
    type Output = Timestamp;

    fn sub(self, rhs: Timestamp) -> Timestamp {
        Timestamp(
            self.0
                .checked_sub(rhs.0)
                .expect("timestamp subtraction underflow"),
        )
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::Uplink, Direction::Downlink];

    pub fn reverse(self) -> Direction {
        match self {
            Direction::Uplink => Direction::Downlink,
            Direction::Downlink => Direction::Uplink,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Direction::Uplink => 0,
            Direction::Downlink => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uplink" | "up" => Ok(Direction::Uplink),
            "downlink" | "down" => Ok(Direction::Downlink),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Data,
    Ack,
    Cross,
}

pub type FlowId = u32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub seq: u64,
    pub size_bytes: u32,
    pub dir: Direction,
    pub kind: PacketKind,
    pub flow_id: FlowId,
    pub sent_at: Timestamp,
    pub delivered_at: Option<Timestamp>,
}

impl Packet {
    pub fn new(
        kind: PacketKind,
        flow_id: FlowId,
        dir: Direction,
        seq: u64,
        size_bytes: u32,
        sent_at: Timestamp,
    ) -> Self {
        assert!(
            (1..=MAX_PACKET_SIZE).contains(&size_bytes),
            "packet size {size_bytes} outside [1, {MAX_PACKET_SIZE}]"
        );
        Packet {
            seq,
            size_bytes,
            dir,
            kind,
            flow_id,
            sent_at,
            delivered_at: None,
        }
    }

    /// Direction the flow's data travels in. Acks travel against it.
    pub fn data_dir(&self) -> Direction {
        match self.kind {
            PacketKind::Ack => self.dir.reverse(),
            PacketKind::Data | PacketKind::Cross => self.dir,
        }
    }

    pub fn mark_delivered(&mut self, t: Timestamp) {
        debug_assert!(t >= self.sent_at);
        self.delivered_at = Some(t);
    }
}

/// A probability held exactly as parts per million.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Probability(u32);

impl Probability {
    pub const ONE_PPM: u32 = 1_000_000;
    pub const ZERO: Probability = Probability(0);
    pub const ONE: Probability = Probability(Self::ONE_PPM);

    pub fn from_ppm(ppm: u32) -> Option<Self> {
        (ppm <= Self::ONE_PPM).then_some(Probability(ppm))
    }

    pub fn ppm(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / Self::ONE_PPM as f64
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}%", self.0 as f64 / 10_000.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("schedule must have at least one step")]
    Empty,
    #[error("first step must start at 0, got {0}")]
    FirstStartNonZero(Timestamp),
    #[error("starts strictly increasing: step {index} starts at {start}, not after {prev}")]
    NonMonotone {
        index: usize,
        prev: Timestamp,
        start: Timestamp,
    },
    #[error("step {index}: {reason}")]
    BadValue { index: usize, reason: String },
}

/// Right-continuous piecewise-constant function of time.
///
/// A step takes effect at its start instant and holds until the next step's
/// start. The first step always starts at 0, so every `t` has a value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule<V> {
    steps: Vec<(Timestamp, V)>,
}

impl<V: Copy> Schedule<V> {
    fn build(
        steps: Vec<(Timestamp, V)>,
        check: impl Fn(&V) -> Result<(), String>,
    ) -> Result<Self, ScheduleError> {
        let first = steps.first().ok_or(ScheduleError::Empty)?;
        if first.0 != Timestamp::ZERO {
            return Err(ScheduleError::FirstStartNonZero(first.0));
        }
        for (index, pair) in steps.windows(2).enumerate() {
            if pair[1].0 <= pair[0].0 {
                return Err(ScheduleError::NonMonotone {
                    index: index + 1,
                    prev: pair[0].0,
                    start: pair[1].0,
                });
            }
        }
        for (index, (_, v)) in steps.iter().enumerate() {
            check(v).map_err(|reason| ScheduleError::BadValue { index, reason })?;
        }
        Ok(Schedule { steps })
    }

    pub fn steps(&self) -> &[(Timestamp, V)] {
        &self.steps
    }

    /// Value of the last step with `start <= t`.
    pub fn at(&self, t: Timestamp) -> V {
        let idx = self.steps.partition_point(|(start, _)| *start <= t);
        self.steps[idx - 1].1
    }

    /// Start of the first step strictly after `t`, if any.
    pub fn next_change_after(&self, t: Timestamp) -> Option<Timestamp> {
        let idx = self.steps.partition_point(|(start, _)| *start <= t);
        self.steps.get(idx).map(|(start, _)| *start)
    }

    /// Visit each constant piece overlapping `[from, to)` as `(piece_from, piece_to, value)`.
    pub fn pieces(&self, from: Timestamp, to: Timestamp) -> Vec<(Timestamp, Timestamp, V)> {
        let mut out = Vec::new();
        let mut t = from;
        while t < to {
            let end = self.next_change_after(t).map_or(to, |c| c.min(to));
            out.push((t, end, self.at(t)));
            t = end;
        }
        out
    }
}

/// Link capacity over time, in bits per second.
pub type CapacitySchedule = Schedule<u64>;

/// Wire loss probability over time.
pub type LossSchedule = Schedule<Probability>;

impl Schedule<u64> {
    pub fn new(steps: Vec<(Timestamp, u64)>) -> Result<Self, ScheduleError> {
        Self::build(steps, |rate| {
            if *rate == 0 {
                Err("rate must be positive".into())
            } else {
                Ok(())
            }
        })
    }

    pub fn constant(rate_bps: u64) -> Self {
        Self::new(vec![(Timestamp::ZERO, rate_bps)]).expect("constant rate must be positive")
    }

    pub fn capacity_at(&self, t: Timestamp) -> u64 {
        self.at(t)
    }

    /// Bits the schedule can carry over `[from, to)`, in bit-microseconds / 1e6.
    /// Returned as bit·µs so it stays exact; divide by 1e6 for bits.
    pub fn integral_bit_micros(&self, from: Timestamp, to: Timestamp) -> u128 {
        self.pieces(from, to)
            .into_iter()
            .map(|(a, b, rate)| rate as u128 * (b - a).as_micros() as u128)
            .sum()
    }
}

impl Schedule<Probability> {
    pub fn new(steps: Vec<(Timestamp, Probability)>) -> Result<Self, ScheduleError> {
        // Probability is range-checked on construction.
        Self::build(steps, |_| Ok(()))
    }

    pub fn constant(p: Probability) -> Self {
        Self::new(vec![(Timestamp::ZERO, p)]).expect("single step schedule")
    }

    pub fn lossless() -> Self {
        Self::constant(Probability::ZERO)
    }

    pub fn loss_at(&self, t: Timestamp) -> Probability {
        self.at(t)
    }
}

/// The bandwidth schedule used throughout the Wi-Fi experiments: five
/// 12 second steps of 15, 40, 10, 30 and 15 Mbps.
pub fn stepped_bandwidth_schedule() -> CapacitySchedule {
    let mbps = [15, 40, 10, 30, 15];
    CapacitySchedule::new(
        mbps.iter()
            .enumerate()
            .map(|(i, m)| (Timestamp::from_secs(12 * i as u64), m * 1_000_000))
            .collect(),
    )
    .expect("static schedule is valid")
}

/// Companion loss schedule: 0.3%, 0.5%, 0.25%, 1% and 0.3% in 12 second steps.
pub fn stepped_loss_schedule() -> LossSchedule {
    let ppm = [3_000, 5_000, 2_500, 10_000, 3_000];
    LossSchedule::new(
        ppm.iter()
            .enumerate()
            .map(|(i, p)| {
                (
                    Timestamp::from_secs(12 * i as u64),
                    Probability::from_ppm(*p).unwrap(),
                )
            })
            .collect(),
    )
    .expect("static schedule is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent evaluator: linear scan, keeping the last step whose start is <= t.
    fn scan<V: Copy>(steps: &[(Timestamp, V)], t: Timestamp) -> V {
        let mut value = steps[0].1;
        for (start, v) in steps {
            if *start <= t {
                value = *v;
            }
        }
        value
    }

    #[test]
    fn capacity_lookup_on_stepped_schedule() {
        let s = stepped_bandwidth_schedule();
        assert_eq!(s.capacity_at(Timestamp::from_secs(13)), 40_000_000);
        assert_eq!(s.capacity_at(Timestamp::ZERO), 15_000_000);
        assert_eq!(s.capacity_at(Timestamp::from_secs(59)), 15_000_000);
    }

    #[test]
    fn capacity_boundary_is_left_inclusive() {
        let s = stepped_bandwidth_schedule();
        let t = Timestamp::from_secs(12);
        assert_eq!(scan(s.steps(), t), 40_000_000);
        assert_eq!(s.capacity_at(t), 40_000_000);
        assert_eq!(s.capacity_at(Timestamp::from_micros(11_999_999)), 15_000_000);
    }

    #[test]
    fn constant_schedule() {
        let s = CapacitySchedule::constant(10_000_000);
        assert_eq!(s.capacity_at(Timestamp::from_secs(59)), 10_000_000);
    }

    #[test]
    fn loss_lookup_on_stepped_schedule() {
        let s = stepped_loss_schedule();
        assert_eq!(s.loss_at(Timestamp::from_secs(30)).ppm(), 2_500);
        let t = Timestamp::from_micros(47_999_000);
        assert_eq!(scan(s.steps(), t).ppm(), 10_000);
        assert_eq!(s.loss_at(t).ppm(), 10_000);
    }

    #[test]
    fn lossless_schedule_is_zero_everywhere() {
        let s = LossSchedule::lossless();
        for secs in [0, 1, 12, 59, 3600] {
            assert!(s.loss_at(Timestamp::from_secs(secs)).is_zero());
        }
    }

    #[test]
    fn rejects_duplicate_boundary() {
        let err = CapacitySchedule::new(vec![
            (Timestamp::ZERO, 1),
            (Timestamp::from_secs(12), 2),
            (Timestamp::from_secs(12), 3),
        ])
        .unwrap_err();
        assert!(err.to_string().contains("starts strictly increasing"));
    }

    #[test]
    fn rejects_bad_first_step_and_zero_rate() {
        assert!(matches!(
            CapacitySchedule::new(vec![(Timestamp::from_secs(1), 5)]),
            Err(ScheduleError::FirstStartNonZero(_))
        ));
        assert!(matches!(
            CapacitySchedule::new(vec![(Timestamp::ZERO, 0)]),
            Err(ScheduleError::BadValue { .. })
        ));
        assert_eq!(CapacitySchedule::new(vec![]), Err(ScheduleError::Empty));
    }

    #[test]
    fn integral_straddles_steps() {
        let s = stepped_bandwidth_schedule();
        // 11.5 s .. 12.5 s: half at 15 Mbps, half at 40 Mbps.
        let bits = s.integral_bit_micros(Timestamp::from_millis(11_500), Timestamp::from_millis(12_500));
        assert_eq!(bits / 1_000_000, 7_500_000 + 20_000_000);
    }

    fn schedule_strategy() -> impl Strategy<Value = Vec<(Timestamp, u64)>> {
        prop::collection::vec((1u64..5_000_000, 1u64..1_000_000_000), 0..12).prop_map(|gaps| {
            let mut t = 0;
            let mut steps = vec![(Timestamp::ZERO, 7)];
            for (gap, rate) in gaps {
                t += gap;
                steps.push((Timestamp::from_micros(t), rate));
            }
            steps
        })
    }

    proptest! {
        #[test]
        fn lookup_matches_linear_scan(steps in schedule_strategy(), t in 0u64..80_000_000) {
            let s = CapacitySchedule::new(steps.clone()).unwrap();
            let t = Timestamp::from_micros(t);
            prop_assert_eq!(s.capacity_at(t), scan(&steps, t));
        }

        #[test]
        fn loss_lookup_matches_linear_scan(steps in schedule_strategy(), t in 0u64..80_000_000) {
            let steps: Vec<_> = steps
                .into_iter()
                .map(|(s, v)| (s, Probability::from_ppm((v % 1_000_001) as u32).unwrap()))
                .collect();
            let s = LossSchedule::new(steps.clone()).unwrap();
            let t = Timestamp::from_micros(t);
            prop_assert_eq!(s.loss_at(t), scan(&steps, t));
        }
    }
}
