use std::time::{Duration, Instant};

use linkforge::model::{Direction, Timestamp};
use linkforge::pipeline::{compare, record, PipelineError};
use linkforge::scenario::{library, library_entry, run_scenario};
use linkforge::trace::trace_implied_rate;

#[test]
fn recorded_trace_tracks_the_bandwidth_schedule() {
    let cfg = library_entry("fig2").unwrap().config;
    let rec = record(&cfg, 1).unwrap();
    assert!(rec.trace(Direction::Downlink).is_none(), "one-way run records only uplink");
    let trace = rec.trace(Direction::Uplink).unwrap();
    let rates = trace_implied_rate(trace, 1_000);
    let steps: Vec<u64> = cfg.medium.capacity.steps().iter().map(|(t, _)| t.as_millis()).collect();
    for (i, rate) in rates.iter().enumerate().take(59) {
        let t = i as u64 * 1_000;
        if steps.iter().any(|&s| s > 0 && t >= s && t < s + 2_000) {
            continue;
        }
        let cap = cfg.medium.capacity.capacity_at(Timestamp::from_millis(t)) as f64;
        assert!((rate - cap).abs() <= 0.1 * cap, "second {i}: trace {rate} vs capacity {cap}");
    }
}

#[test]
fn two_way_recording_yields_both_traces() {
    let rec = record(&library_entry("fig8").unwrap().config, 1).unwrap();
    assert!(rec.trace(Direction::Uplink).is_some());
    assert!(rec.trace(Direction::Downlink).is_some());
}

#[test]
fn recording_needs_a_saturator() {
    let cfg = library_entry("fig12").unwrap().config;
    assert!(matches!(record(&cfg, 1), Err(PipelineError::NoSaturator(_))));
}

#[test]
fn missing_direction_replays_as_a_delay_line() {
    let workload = library_entry("table1").unwrap().config;
    let c = compare(&workload, None, None, 1).unwrap();
    let row = c.rows[0];
    let direct = row.network.unwrap().as_secs_f64();
    let replayed = row.traces.unwrap().as_secs_f64();
    assert!(replayed < direct, "no trace means no rate limit: {replayed} vs {direct}");
}

#[test]
fn every_shipped_scenario_runs_quickly() {
    for entry in library() {
        let started = Instant::now();
        run_scenario(&entry.config, entry.config.seed).unwrap();
        let took = started.elapsed();
        assert!(took < Duration::from_secs(10), "{} took {took:?}", entry.name);
    }
}
