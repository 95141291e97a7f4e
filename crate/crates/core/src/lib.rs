//! Packet-level simulation of a shared wireless medium, a saturating traffic
//! generator for recording delivery traces, and a trace-driven replay link.

pub mod bulk;
pub mod cross;
pub mod engine;
pub mod live;
pub mod log;
pub mod medium;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod replay;
pub mod report;
pub mod saturator;
pub mod scenario;
pub mod trace;
pub mod units;
