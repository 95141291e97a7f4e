//! Record a link with the saturator, then run a workload over the recorded
//! traces and compare it with the same workload on the link itself.

use thiserror::Error;

use crate::engine::{FlowKind, RunOutput, SimError};
use crate::log::LogRecord;
use crate::medium::Medium;
use crate::metrics::completion_time;
use crate::model::{Direction, FlowId, Timestamp};
use crate::replay::{replay_run, ReplayLink};
use crate::scenario::{run_scenario, FlowParams, ScenarioConfig};
use crate::trace::{log_to_trace, DeliveryTrace, TraceError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scenario `{0}` has no saturator flow to record with")]
    NoSaturator(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

pub struct Recording {
    pub run: RunOutput<Medium>,
    /// Indexed by [`Direction::index`]; `None` where nothing was saturated.
    pub traces: [Option<DeliveryTrace>; 2],
}

impl Recording {
    pub fn trace(&self, dir: Direction) -> Option<&DeliveryTrace> {
        self.traces[dir.index()].as_ref()
    }
}

/// Run `cfg` and turn what its saturator flows received into traces.
pub fn record(cfg: &ScenarioConfig, seed: u64) -> Result<Recording, PipelineError> {
    if !cfg.has_saturator() {
        return Err(PipelineError::NoSaturator(cfg.name.clone()));
    }
    let run = run_scenario(cfg, seed)?;
    let mut traces = [None, None];
    for dir in Direction::BOTH {
        let recv: Vec<LogRecord> = run
            .flows
            .iter()
            .filter(|f| f.kind == FlowKind::Saturator && f.dir == dir)
            .flat_map(|f| f.recv_log.iter().cloned())
            .collect();
        let saturated = run.flows.iter().any(|f| f.kind == FlowKind::Saturator && f.dir == dir);
        if saturated {
            traces[dir.index()] = Some(log_to_trace(&recv, dir)?);
        }
    }
    Ok(Recording { run, traces })
}

/// Run the workload's flows over traces instead of its medium.
pub fn replay_workload(
    workload: &ScenarioConfig,
    trace_up: Option<DeliveryTrace>,
    trace_down: Option<DeliveryTrace>,
    seed: u64,
) -> Result<RunOutput<ReplayLink>, SimError> {
    let cfg = workload.replay_config(trace_up, trace_down, seed);
    replay_run(cfg, workload.feedback, workload.build_flows(seed), workload.duration)
}

/// Completion times of one bulk flow on the link and over traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletionRow {
    pub flow_id: FlowId,
    pub dir: Direction,
    pub network: Option<Timestamp>,
    pub traces: Option<Timestamp>,
    /// End of both runs; an unfinished transfer takes longer than this.
    pub horizon: Timestamp,
}

impl CompletionRow {
    /// Completion time, or the horizon as a lower bound when unfinished.
    pub fn network_at_least(&self) -> (Timestamp, bool) {
        (self.network.unwrap_or(self.horizon), self.network.is_some())
    }

    pub fn traces_at_least(&self) -> (Timestamp, bool) {
        (self.traces.unwrap_or(self.horizon), self.traces.is_some())
    }
}

pub struct Comparison {
    pub direct: RunOutput<Medium>,
    pub replayed: RunOutput<ReplayLink>,
    pub rows: Vec<CompletionRow>,
}

/// Run `workload` both directly and over the traces, pairing up bulk
/// transfer completion times.
pub fn compare(
    workload: &ScenarioConfig,
    trace_up: Option<DeliveryTrace>,
    trace_down: Option<DeliveryTrace>,
    seed: u64,
) -> Result<Comparison, SimError> {
    let direct = run_scenario(workload, seed)?;
    let replayed = replay_workload(workload, trace_up, trace_down, seed)?;
    let mut rows = Vec::new();
    for spec in &workload.flows {
        let FlowParams::Bulk { bytes, .. } = spec.params else {
            continue;
        };
        for &dir in &spec.dirs {
            let time = |run_flows: &[crate::engine::FlowLog]| {
                run_flows
                    .iter()
                    .find(|f| f.flow_id == spec.id && f.dir == dir)
                    .and_then(|f| completion_time(f, bytes).ok())
            };
            rows.push(CompletionRow {
                flow_id: spec.id,
                dir,
                network: time(&direct.flows),
                traces: time(&replayed.flows),
                horizon: workload.duration.saturating_sub(spec.start),
            });
        }
    }
    Ok(Comparison {
        direct,
        replayed,
        rows,
    })
}

/// The two-column completion table printed by the replay command. A
/// transfer that never finished shows as `>` its horizon.
pub fn format_completion_table(rows: &[CompletionRow]) -> String {
    let cell = |(t, done): (Timestamp, bool)| {
        let secs = format!("{:.2}", t.as_secs_f64());
        if done {
            secs
        } else {
            format!(">{secs}")
        }
    };
    let mut s = String::from("flow  dir       Network (s)  Traces (s)\n");
    for r in rows {
        s.push_str(&format!(
            "{:<5} {:<9} {:>11}  {:>10}\n",
            r.flow_id,
            r.dir.as_str(),
            cell(r.network_at_least()),
            cell(r.traces_at_least())
        ));
    }
    s
}
