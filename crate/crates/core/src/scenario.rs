//! Scenario files: a medium, a feedback channel and a set of flows, written
//! in TOML.
//!
//! ```toml
//! name = "fig3"
//! duration = "60s"
//! seed = 1               # optional, default 1
//! bin = "1s"             # optional metric bin width, default 1 s
//! start_jitter = "1ms"   # optional, each flow starts up to this much late
//! expect = ["tcp-unfairness"]
//!
//! [medium]
//! capacity = "0:15Mbps 12:40Mbps 24:10Mbps 36:30Mbps 48:15Mbps"
//! loss = "0:0.3% 12:0.5%"   # optional, default lossless
//! prop_delay = "1ms"
//! buffer = 1000             # or buffer_up / buffer_down
//! weight_up = 1
//! weight_down = 1
//! turnaround = "100us"
//!
//! [feedback]                # optional
//! delay = "1ms"
//! loss = "0%"
//! via_link = false
//!
//! [replay]                  # optional, used when the flows run over traces
//! prop_delay = "20ms"
//! queue_limit = 1000
//! wrap = true
//! inject_loss = "0%"
//!
//! [[flow]]
//! kind = "saturator"        # saturator | cbr | aimd | bulk
//! dir = "uplink"            # uplink | downlink | both (saturator only)
//! profile = "cellular"      # saturator: cellular | wifi
//!
//! [[flow]]
//! kind = "aimd"
//! count = 1
//! rate = "5Mbps"            # cbr: send rate; aimd: optional pacing cap
//! label = "iperf-tcp"
//! ```
//!
//! Schedules are whitespace-separated `start:value` steps; a start without a
//! unit is in seconds. A single value without a start means a constant.
//! Flows get ids 1, 2, ... in file order, with `count` expanding in place.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::bulk::{BulkFlow, DEFAULT_BULK_WINDOW};
use crate::cross::{AimdFlow, AimdStream, CbrFlow, CbrStream};
use crate::engine::{FeedbackConfig, Flow, FlowKind, Route, RunOutput, SimError, Simulation};
use crate::medium::{
    Medium, MediumConfig, DEFAULT_BUFFER, DEFAULT_PROP_DELAY, DEFAULT_TURNAROUND,
};
use crate::model::{
    CapacitySchedule, Direction, FlowId, LossSchedule, Probability, Timestamp, DEFAULT_PACKET_SIZE,
    MAX_PACKET_SIZE,
};
use crate::replay::{ReplayConfig, DEFAULT_QUEUE_LIMIT, DEFAULT_REPLAY_PROP_DELAY};
use crate::saturator::{ControllerParams, Profile, SaturatorFlow, SaturatorSender, DEFAULT_WATCHDOG_TIMEOUT};
use crate::trace::DeliveryTrace;
use crate::units::{parse_bytes, parse_duration, parse_probability, parse_rate};
use crate::metrics::MIN_BIN_MS;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_AIMD_CWND: u64 = 10;
/// Seeded start offsets keep repeated runs of lossless scenarios apart.
pub const DEFAULT_START_JITTER: Timestamp = Timestamp::from_millis(1);
/// RNG stream for start offsets.
const JITTER_STREAM: u64 = 11;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    description: Option<String>,
    duration: String,
    seed: Option<u64>,
    bin: Option<String>,
    start_jitter: Option<String>,
    #[serde(default)]
    expect: Vec<String>,
    medium: RawMedium,
    feedback: Option<RawFeedback>,
    replay: Option<RawReplay>,
    #[serde(default, rename = "flow")]
    flows: Vec<RawFlow>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMedium {
    capacity: String,
    loss: Option<String>,
    prop_delay: Option<String>,
    buffer: Option<u32>,
    buffer_up: Option<u32>,
    buffer_down: Option<u32>,
    weight_up: Option<u32>,
    weight_down: Option<u32>,
    turnaround: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeedback {
    delay: Option<String>,
    loss: Option<String>,
    via_link: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReplay {
    prop_delay: Option<String>,
    queue_limit: Option<u32>,
    wrap: Option<bool>,
    inject_loss: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    kind: String,
    dir: Option<String>,
    count: Option<u32>,
    label: Option<String>,
    start: Option<String>,
    packet_size: Option<u32>,
    profile: Option<String>,
    watchdog: Option<String>,
    rate: Option<String>,
    cwnd: Option<u64>,
    size: Option<String>,
    window: Option<u32>,
    acks: Option<String>,
}

/// One problem found while validating a scenario, tagged with where it is.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            f.write_str(&self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Every problem found in a scenario, not just the first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioError {
    pub errors: Vec<ConfigError>,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowParams {
    Saturator { profile: Profile, watchdog: Timestamp },
    Cbr { rate: u64 },
    Aimd { rate_cap: Option<u64>, initial_cwnd: u64 },
    Bulk { bytes: u64, window: u32 },
}

impl FlowParams {
    pub fn kind(&self) -> FlowKind {
        match self {
            FlowParams::Saturator { .. } => FlowKind::Saturator,
            FlowParams::Cbr { .. } => FlowKind::Cbr,
            FlowParams::Aimd { .. } => FlowKind::Aimd,
            FlowParams::Bulk { .. } => FlowKind::Bulk,
        }
    }

    /// Rate this flow is expected to take, if it is bounded.
    pub fn rate_bound(&self) -> Option<u64> {
        match *self {
            FlowParams::Cbr { rate } => Some(rate),
            FlowParams::Aimd { rate_cap, .. } => rate_cap,
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowSpec {
    pub id: FlowId,
    pub label: String,
    pub dirs: Vec<Direction>,
    pub start: Timestamp,
    pub packet_size: u32,
    pub ack_route: Option<Route>,
    pub params: FlowParams,
}

impl FlowSpec {
    pub fn kind(&self) -> FlowKind {
        self.params.kind()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplaySettings {
    pub prop_delay: Timestamp,
    pub queue_limit: u32,
    pub wrap: bool,
    pub inject_loss: Probability,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        ReplaySettings {
            prop_delay: DEFAULT_REPLAY_PROP_DELAY,
            queue_limit: DEFAULT_QUEUE_LIMIT,
            wrap: true,
            inject_loss: Probability::ZERO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioConfig {
    pub name: String,
    pub description: String,
    pub duration: Timestamp,
    pub seed: u64,
    pub bin_ms: u64,
    pub start_jitter: Timestamp,
    pub expect: Vec<String>,
    pub medium: MediumConfig,
    pub feedback: FeedbackConfig,
    pub replay: ReplaySettings,
    pub flows: Vec<FlowSpec>,
}

struct Collector {
    errors: Vec<ConfigError>,
}

impl Collector {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.errors.push(ConfigError {
            path: path.into(),
            message: message.into(),
        });
    }

    fn check<T>(&mut self, path: &str, r: Result<T, String>) -> Option<T> {
        r.map_err(|m| self.push(path, m)).ok()
    }

    fn opt<T>(&mut self, path: &str, raw: Option<&str>, parse: impl Fn(&str) -> Result<T, String>) -> Option<Option<T>> {
        match raw {
            None => Some(None),
            Some(s) => self.check(path, parse(s)).map(Some),
        }
    }
}

fn parse_steps<V>(s: &str, value: impl Fn(&str) -> Result<V, String>) -> Result<Vec<(Timestamp, V)>, String> {
    let words: Vec<&str> = s.split_whitespace().collect();
    if words.is_empty() {
        return Err("schedule is empty".into());
    }
    if let [single] = words[..] {
        if !single.contains(':') {
            return Ok(vec![(Timestamp::ZERO, value(single)?)]);
        }
    }
    words
        .iter()
        .map(|w| {
            let (t, v) = w
                .split_once(':')
                .ok_or_else(|| format!("step `{w}` is not `start:value`"))?;
            Ok((parse_duration(t)?, value(v)?))
        })
        .collect()
}

pub fn parse_capacity_schedule(s: &str) -> Result<CapacitySchedule, String> {
    CapacitySchedule::new(parse_steps(s, parse_rate)?).map_err(|e| e.to_string())
}

pub fn parse_loss_schedule(s: &str) -> Result<LossSchedule, String> {
    LossSchedule::new(parse_steps(s, parse_probability)?).map_err(|e| e.to_string())
}

fn parse_dirs(s: &str) -> Result<Vec<Direction>, String> {
    match s {
        "both" => Ok(Direction::BOTH.to_vec()),
        other => other.parse::<Direction>().map(|d| vec![d]).map_err(|e| e.to_string()),
    }
}

fn parse_route(s: &str) -> Result<Route, String> {
    match s {
        "link" => Ok(Route::Link),
        "feedback" => Ok(Route::Feedback),
        other => Err(format!("acks must go over `link` or `feedback`, not `{other}`")),
    }
}

/// Parse and validate a scenario, reporting every problem found.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ScenarioError {
        errors: vec![ConfigError {
            path: String::new(),
            message: e.to_string().trim_end().to_string(),
        }],
    })?;
    validate_scenario(raw)
}

fn validate_scenario(raw: RawScenario) -> Result<ScenarioConfig, ScenarioError> {
    let mut c = Collector { errors: Vec::new() };

    let duration = c.check("duration", parse_duration(&raw.duration));
    if duration == Some(Timestamp::ZERO) {
        c.push("duration", "must be positive");
    }
    let bin_ms = match c.opt("bin", raw.bin.as_deref(), parse_duration) {
        Some(Some(b)) if b.as_micros() % 1000 != 0 || b.as_millis() < MIN_BIN_MS => {
            c.push("bin", format!("must be a whole number of milliseconds, at least {MIN_BIN_MS} ms"));
            None
        }
        Some(b) => Some(b.map_or(crate::metrics::DEFAULT_BIN_MS, |b| b.as_millis())),
        None => None,
    };
    let start_jitter = c.opt("start_jitter", raw.start_jitter.as_deref(), parse_duration);

    let m = &raw.medium;
    let capacity = c.check("medium.capacity", parse_capacity_schedule(&m.capacity));
    let loss = c.opt("medium.loss", m.loss.as_deref(), parse_loss_schedule);
    let prop = c.opt("medium.prop_delay", m.prop_delay.as_deref(), parse_duration);
    let turnaround = c.opt("medium.turnaround", m.turnaround.as_deref(), parse_duration);
    if m.buffer.is_some() && (m.buffer_up.is_some() || m.buffer_down.is_some()) {
        c.push("medium.buffer", "give either `buffer` or `buffer_up`/`buffer_down`, not both");
    }
    let buffer_up = m.buffer_up.or(m.buffer).unwrap_or(DEFAULT_BUFFER);
    let buffer_down = m.buffer_down.or(m.buffer).unwrap_or(DEFAULT_BUFFER);
    for (path, v) in [("medium.buffer_up", buffer_up), ("medium.buffer_down", buffer_down)] {
        if v == 0 {
            c.push(path, "must be at least 1 packet");
        }
    }
    let weight_up = m.weight_up.unwrap_or(1);
    let weight_down = m.weight_down.unwrap_or(1);
    for (path, v) in [("medium.weight_up", weight_up), ("medium.weight_down", weight_down)] {
        if v == 0 {
            c.push(path, "must be at least 1");
        }
    }

    let mut feedback = FeedbackConfig::default();
    if let Some(fb) = &raw.feedback {
        if let Some(Some(d)) = c.opt("feedback.delay", fb.delay.as_deref(), parse_duration) {
            feedback.delay = d;
        }
        if let Some(Some(p)) = c.opt("feedback.loss", fb.loss.as_deref(), parse_probability) {
            feedback.loss = p;
        }
        feedback.via_link = fb.via_link.unwrap_or(false);
    }

    let mut replay = ReplaySettings::default();
    if let Some(r) = &raw.replay {
        if let Some(Some(d)) = c.opt("replay.prop_delay", r.prop_delay.as_deref(), parse_duration) {
            replay.prop_delay = d;
        }
        if let Some(q) = r.queue_limit {
            if q == 0 {
                c.push("replay.queue_limit", "must be at least 1 packet");
            }
            replay.queue_limit = q;
        }
        replay.wrap = r.wrap.unwrap_or(true);
        if let Some(Some(p)) = c.opt("replay.inject_loss", r.inject_loss.as_deref(), parse_probability) {
            replay.inject_loss = p;
        }
    }

    let mut flows = Vec::new();
    let mut next_id: FlowId = 1;
    for (i, f) in raw.flows.iter().enumerate() {
        let at = |field: &str| format!("flow[{i}].{field}");
        let kind = c.check(&at("kind"), f.kind.parse::<FlowKind>());
        let dirs = match &f.dir {
            Some(d) => c.check(&at("dir"), parse_dirs(d)),
            None => Some(vec![Direction::Uplink]),
        };
        if let (Some(k), Some(d)) = (kind, &dirs) {
            if d.len() > 1 && k != FlowKind::Saturator {
                c.push(at("dir"), "only saturator flows can run in both directions");
            }
        }
        let start = c.opt(&at("start"), f.start.as_deref(), parse_duration).map(|s| s.unwrap_or(Timestamp::ZERO));
        let packet_size = f.packet_size.unwrap_or(DEFAULT_PACKET_SIZE);
        if !(1..=MAX_PACKET_SIZE).contains(&packet_size) {
            c.push(at("packet_size"), format!("must be between 1 and {MAX_PACKET_SIZE} bytes"));
        }
        let count = f.count.unwrap_or(1);
        if count == 0 {
            c.push(at("count"), "must be at least 1");
        }
        let ack_route = c.opt(&at("acks"), f.acks.as_deref(), parse_route);
        let rate = c.opt(&at("rate"), f.rate.as_deref(), parse_rate);
        if rate == Some(Some(0)) {
            c.push(at("rate"), "must be positive");
        }

        let unused = |field: &str, present: bool, c: &mut Collector| {
            if present {
                c.push(at(field), format!("not used by {} flows", f.kind));
            }
        };
        let params = match kind {
            Some(FlowKind::Saturator) => {
                unused("rate", f.rate.is_some(), &mut c);
                unused("cwnd", f.cwnd.is_some(), &mut c);
                unused("size", f.size.is_some(), &mut c);
                unused("window", f.window.is_some(), &mut c);
                let profile = c.opt(&at("profile"), f.profile.as_deref(), |s| s.parse::<Profile>().map_err(|e| e.to_string()));
                let watchdog = c.opt(&at("watchdog"), f.watchdog.as_deref(), parse_duration);
                match (profile, watchdog) {
                    (Some(p), Some(w)) => Some(FlowParams::Saturator {
                        profile: p.unwrap_or(Profile::Cellular),
                        watchdog: w.unwrap_or(DEFAULT_WATCHDOG_TIMEOUT),
                    }),
                    _ => None,
                }
            }
            Some(FlowKind::Cbr) => {
                unused("profile", f.profile.is_some(), &mut c);
                unused("cwnd", f.cwnd.is_some(), &mut c);
                unused("size", f.size.is_some(), &mut c);
                unused("window", f.window.is_some(), &mut c);
                unused("acks", f.acks.is_some(), &mut c);
                match rate {
                    Some(Some(r)) => Some(FlowParams::Cbr { rate: r }),
                    Some(None) => {
                        c.push(at("rate"), "cbr flows need a rate");
                        None
                    }
                    None => None,
                }
            }
            Some(FlowKind::Aimd) => {
                unused("profile", f.profile.is_some(), &mut c);
                unused("size", f.size.is_some(), &mut c);
                unused("window", f.window.is_some(), &mut c);
                let cwnd = f.cwnd.unwrap_or(DEFAULT_AIMD_CWND);
                if cwnd == 0 {
                    c.push(at("cwnd"), "must be at least 1 packet");
                }
                rate.map(|r| FlowParams::Aimd {
                    rate_cap: r,
                    initial_cwnd: cwnd,
                })
            }
            Some(FlowKind::Bulk) => {
                unused("profile", f.profile.is_some(), &mut c);
                unused("rate", f.rate.is_some(), &mut c);
                unused("cwnd", f.cwnd.is_some(), &mut c);
                let window = f.window.unwrap_or(DEFAULT_BULK_WINDOW);
                if window == 0 {
                    c.push(at("window"), "must be at least 1 packet");
                }
                match &f.size {
                    Some(s) => c.check(&at("size"), parse_bytes(s)).map(|bytes| FlowParams::Bulk { bytes, window }),
                    None => {
                        c.push(at("size"), "bulk flows need a transfer size");
                        None
                    }
                }
            }
            None => None,
        };

        if let (Some(params), Some(dirs), Some(start), Some(ack_route)) = (params, dirs, start, ack_route) {
            let label = f.label.clone().unwrap_or_else(|| f.kind.clone());
            for _ in 0..count {
                flows.push(FlowSpec {
                    id: next_id,
                    label: label.clone(),
                    dirs: dirs.clone(),
                    start,
                    packet_size,
                    ack_route,
                    params,
                });
                next_id += 1;
            }
        }
    }
    if raw.flows.is_empty() {
        c.push("flow", "a scenario needs at least one flow");
    }

    if !c.errors.is_empty() {
        return Err(ScenarioError { errors: c.errors });
    }
    let capacity = capacity.expect("no errors");
    let medium = MediumConfig {
        capacity,
        loss: loss.flatten().unwrap_or_else(LossSchedule::lossless),
        prop_delay: prop.flatten().unwrap_or(DEFAULT_PROP_DELAY),
        buffer_up,
        buffer_down,
        weight_up,
        weight_down,
        turnaround: turnaround.flatten().unwrap_or(DEFAULT_TURNAROUND),
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
    };
    Ok(ScenarioConfig {
        name: raw.name.unwrap_or_default(),
        description: raw.description.unwrap_or_default(),
        duration: duration.expect("no errors"),
        seed: raw.seed.unwrap_or(DEFAULT_SEED),
        bin_ms: bin_ms.expect("no errors"),
        start_jitter: start_jitter.flatten().unwrap_or(DEFAULT_START_JITTER),
        expect: raw.expect,
        medium,
        feedback,
        replay,
        flows,
    })
}

impl ScenarioConfig {
    /// Use `profile` for every saturator flow.
    pub fn with_profile(mut self, profile: Profile) -> Self {
        for f in &mut self.flows {
            if let FlowParams::Saturator { profile: p, .. } = &mut f.params {
                *p = profile;
            }
        }
        self
    }

    pub fn has_saturator(&self) -> bool {
        self.flows.iter().any(|f| f.kind() == FlowKind::Saturator)
    }

    pub fn flow(&self, id: FlowId) -> Option<&FlowSpec> {
        self.flows.iter().find(|f| f.id == id)
    }

    /// Traffic set aside for bounded flows other than `id` in `dir`.
    pub fn reserved_bps(&self, id: FlowId, dir: Direction) -> u64 {
        self.flows
            .iter()
            .filter(|f| f.id != id && f.dirs.contains(&dir))
            .filter_map(|f| f.params.rate_bound())
            .sum()
    }

    /// Instantiate every flow for a run over a medium with this scenario's
    /// buffers. `seed` picks each flow's start offset within `start_jitter`.
    pub fn build_flows(&self, seed: u64) -> Vec<Box<dyn Flow>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(JITTER_STREAM);
        let jitter = self.start_jitter.as_micros();
        let mut out: Vec<Box<dyn Flow>> = Vec::new();
        for spec in &self.flows {
            for &dir in &spec.dirs {
                let offset = if jitter == 0 { 0 } else { rng.gen_range(0..=jitter) };
                out.push(self.build_flow(spec, dir, spec.start + Timestamp::from_micros(offset)));
            }
        }
        out
    }

    fn build_flow(&self, spec: &FlowSpec, dir: Direction, start: Timestamp) -> Box<dyn Flow> {
        match spec.params {
            FlowParams::Saturator { profile, watchdog } => {
                let params = ControllerParams::for_profile(profile, self.medium.buffer(dir));
                let sender = SaturatorSender::new(spec.id, dir, params, Timestamp::ZERO).with_packet_size(spec.packet_size);
                Box::new(SaturatorFlow::new(sender, start).with_watchdog(watchdog))
            }
            FlowParams::Cbr { rate } => {
                Box::new(CbrFlow::new(CbrStream::new(spec.id, dir, rate, spec.packet_size, start)))
            }
            FlowParams::Aimd { rate_cap, initial_cwnd } => {
                let stream = AimdStream::new(spec.id, initial_cwnd, rate_cap);
                let f = AimdFlow::new(stream, dir, spec.packet_size, start);
                Box::new(match spec.ack_route {
                    Some(r) => f.with_ack_route(r),
                    None => f,
                })
            }
            FlowParams::Bulk { bytes, window } => {
                let f = BulkFlow::new(spec.id, dir, bytes, window, spec.packet_size, start);
                Box::new(match spec.ack_route {
                    Some(r) => f.with_ack_route(r),
                    None => f,
                })
            }
        }
    }

    /// Replay settings combined with recorded traces.
    pub fn replay_config(&self, trace_up: Option<DeliveryTrace>, trace_down: Option<DeliveryTrace>, seed: u64) -> ReplayConfig {
        ReplayConfig {
            trace_up,
            trace_down,
            prop_delay: self.replay.prop_delay,
            queue_limit: self.replay.queue_limit,
            inject_loss: self.replay.inject_loss,
            seed,
            wrap: self.replay.wrap,
        }
    }
}

/// Run the scenario on the simulated medium.
pub fn run_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput<Medium>, SimError> {
    let mut medium_cfg = cfg.medium.clone();
    medium_cfg.seed = seed;
    let mut sim = Simulation::new(Medium::new(medium_cfg), cfg.feedback, seed);
    for f in cfg.build_flows(seed) {
        sim.attach(f)?;
    }
    sim.run(cfg.duration)
}

/// A shipped scenario.
#[derive(Clone, Debug)]
pub struct ScenarioLibraryEntry {
    pub name: &'static str,
    pub config: ScenarioConfig,
    pub expected_properties: Vec<String>,
}

const LIBRARY: &[(&str, &str)] = &[
    ("fig2", include_str!("../scenarios/fig2.toml")),
    ("fig3", include_str!("../scenarios/fig3.toml")),
    ("fig3-8", include_str!("../scenarios/fig3-8.toml")),
    ("fig4", include_str!("../scenarios/fig4.toml")),
    ("fig5", include_str!("../scenarios/fig5.toml")),
    ("fig6", include_str!("../scenarios/fig6.toml")),
    ("fig7", include_str!("../scenarios/fig7.toml")),
    ("fig8", include_str!("../scenarios/fig8.toml")),
    ("fig9", include_str!("../scenarios/fig9.toml")),
    ("fig10", include_str!("../scenarios/fig10.toml")),
    ("fig11", include_str!("../scenarios/fig11.toml")),
    ("fig12", include_str!("../scenarios/fig12.toml")),
    ("fig12-15", include_str!("../scenarios/fig12-15.toml")),
    ("fig13", include_str!("../scenarios/fig13.toml")),
    ("fig13-15", include_str!("../scenarios/fig13-15.toml")),
    ("table1-record", include_str!("../scenarios/table1-record.toml")),
    ("table1", include_str!("../scenarios/table1.toml")),
    ("table1-wifi", include_str!("../scenarios/table1-wifi.toml")),
];

pub fn library_names() -> impl Iterator<Item = &'static str> {
    LIBRARY.iter().map(|(n, _)| *n)
}

pub fn library_source(name: &str) -> Option<&'static str> {
    LIBRARY.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn library_entry(name: &str) -> Option<ScenarioLibraryEntry> {
    let (name, text) = LIBRARY.iter().find(|(n, _)| *n == name)?;
    let config = parse_scenario(text).unwrap_or_else(|e| panic!("shipped scenario {name} is invalid:\n{e}"));
    Some(ScenarioLibraryEntry {
        name,
        expected_properties: config.expect.clone(),
        config,
    })
}

pub fn library() -> Vec<ScenarioLibraryEntry> {
    library_names().filter_map(library_entry).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        duration = "10s"
        [medium]
        capacity = "20Mbps"
        [[flow]]
        kind = "saturator"
    "#;

    #[test]
    fn minimal_scenario_defaults() {
        let cfg = parse_scenario(MINIMAL).unwrap();
        assert_eq!(cfg.duration, Timestamp::from_secs(10));
        assert_eq!(cfg.bin_ms, 1000);
        assert_eq!(cfg.medium.capacity, CapacitySchedule::constant(20_000_000));
        assert_eq!(cfg.medium.buffer_up, DEFAULT_BUFFER);
        assert_eq!(cfg.flows.len(), 1);
        assert_eq!(cfg.flows[0].dirs, vec![Direction::Uplink]);
    }

    #[test]
    fn schedule_steps() {
        let s = parse_capacity_schedule("0:15Mbps 12:40Mbps 24s:10Mbps").unwrap();
        assert_eq!(s.capacity_at(Timestamp::from_secs(12)), 40_000_000);
        assert_eq!(s.capacity_at(Timestamp::from_secs(30)), 10_000_000);
        let l = parse_loss_schedule("0:0.3% 12:1%").unwrap();
        assert_eq!(l.loss_at(Timestamp::from_secs(13)).ppm(), 10_000);
        assert!(parse_capacity_schedule("5:10Mbps").is_err());
        assert!(parse_capacity_schedule("0:10Mbps 0:20Mbps").is_err());
    }

    #[test]
    fn counts_expand_with_consecutive_ids() {
        let text = r#"
            duration = "1s"
            [medium]
            capacity = "40Mbps"
            [[flow]]
            kind = "aimd"
            count = 3
            label = "a"
            [[flow]]
            kind = "cbr"
            rate = "5Mbps"
            count = 2
        "#;
        let cfg = parse_scenario(text).unwrap();
        let ids: Vec<_> = cfg.flows.iter().map(|f| (f.id, f.label.as_str())).collect();
        assert_eq!(ids, vec![(1, "a"), (2, "a"), (3, "a"), (4, "cbr"), (5, "cbr")]);
        assert_eq!(cfg.reserved_bps(1, Direction::Uplink), 10_000_000);
    }

    #[test]
    fn collects_every_error_with_its_path() {
        let text = r#"
            duration = "soon"
            [medium]
            capacity = "0:10Mbps 0:5Mbps"
            buffer_up = 0
            [[flow]]
            kind = "cbr"
            [[flow]]
            kind = "teleport"
        "#;
        let err = parse_scenario(text).unwrap_err();
        let paths: Vec<_> = err.errors.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, vec!["duration", "medium.capacity", "medium.buffer_up", "flow[0].rate", "flow[1].kind"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = parse_scenario(&MINIMAL.replace("[medium]", "[medium]\nbandwith = 3")).unwrap_err();
        assert!(err.to_string().contains("bandwith"), "{err}");
    }

    #[test]
    fn profile_override_touches_only_saturators() {
        let cfg = parse_scenario(MINIMAL).unwrap().with_profile(Profile::Wifi);
        assert!(matches!(cfg.flows[0].params, FlowParams::Saturator { profile: Profile::Wifi, .. }));
    }

    #[test]
    fn every_shipped_scenario_validates() {
        let entries = library();
        assert_eq!(entries.len(), LIBRARY.len());
        for e in &entries {
            assert_eq!(e.name, e.config.name, "file name and `name` differ");
        }
        let mut names: Vec<_> = entries.iter().map(|e| e.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), entries.len());
    }
}
