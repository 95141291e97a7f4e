use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn linkforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linkforge"))
        .args(args)
        .env_remove("LINKFORGE_SEED")
        .output()
        .expect("spawn linkforge")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SHORT: &str = r#"
duration = "3s"
[medium]
capacity = "0:10Mbps 1:20Mbps"
loss = "0.5%"
[[flow]]
kind = "saturator"
[[flow]]
kind = "cbr"
rate = "2Mbps"
"#;

const TWO_WAY: &str = r#"
duration = "2s"
[medium]
capacity = "12Mbps"
[[flow]]
kind = "saturator"
dir = "both"
profile = "wifi"
"#;

const STEADY: &str = r#"
duration = "10s"
[medium]
capacity = "12Mbps"
[[flow]]
kind = "saturator"
profile = "wifi"
"#;

const CBR_WORKLOAD: &str = r#"
duration = "10s"
[medium]
capacity = "12Mbps"
[[flow]]
kind = "cbr"
rate = "6Mbps"
"#;

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn scenario_list_names_the_library() {
    let out = linkforge(&["scenario", "list"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for name in ["fig2", "fig5", "fig8", "fig13-15", "table1"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing from:\n{text}");
    }
    let show = linkforge(&["scenario", "show", "fig2"]);
    assert_eq!(code(&show), 0);
    assert!(stdout(&show).contains("[medium]"));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "short.toml", SHORT);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let r = linkforge(&["simulate", s(&cfg), "-o", s(out), "--seed", "7"]);
        assert_eq!(code(&r), 0, "{}", stderr(&r));
    }
    let fa = files(&a);
    assert!(fa.iter().any(|(p, _)| p.ends_with("metrics/summary.csv")));
    assert!(fa.iter().any(|(p, _)| p.ends_with("metrics/series.csv")));
    assert!(fa.iter().any(|(p, _)| p.ends_with("metrics/drops.csv")));
    assert!(fa.iter().any(|(p, _)| p.ends_with("logs/index.csv")));
    assert_eq!(fa, files(&b));

    let c = tmp.path().join("c");
    let r = linkforge(&["simulate", s(&cfg), "-o", s(&c), "--seed", "8"]);
    assert_eq!(code(&r), 0);
    assert_ne!(fa, files(&c), "a different seed draws different losses");
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "short.toml", SHORT);
    let out = tmp.path().join("env");
    let r = Command::new(env!("CARGO_BIN_EXE_linkforge"))
        .args(["simulate", s(&cfg), "-o", s(&out)])
        .env("LINKFORGE_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let summary = fs::read_to_string(out.join("metrics/summary.csv")).unwrap();
    assert!(summary.lines().skip(1).all(|l| l.starts_with("42,")), "{summary}");
}

#[test]
fn repeats_write_each_seed_and_an_aggregate() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "short.toml", SHORT);
    let out = tmp.path().join("rep");
    let r = linkforge(&["simulate", s(&cfg), "-o", s(&out), "--seed", "3", "--repeats", "3"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    for seed in 3..6 {
        assert!(out.join(format!("seed-{seed}/metrics/summary.csv")).exists());
    }
    let agg = fs::read_to_string(out.join("metrics/aggregate.csv")).unwrap();
    assert!(agg.lines().nth(1).unwrap().contains(",3,"), "{agg}");
}

#[test]
fn analyze_reproduces_the_written_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "short.toml", SHORT);
    let out = tmp.path().join("run");
    assert_eq!(code(&linkforge(&["simulate", s(&cfg), "-o", s(&out)])), 0);
    let before = fs::read(out.join("metrics/summary.csv")).unwrap();
    let series = fs::read(out.join("metrics/series.csv")).unwrap();
    let r = linkforge(&["analyze", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert_eq!(fs::read(out.join("metrics/summary.csv")).unwrap(), before);
    assert_eq!(fs::read(out.join("metrics/series.csv")).unwrap(), series);
}

#[test]
fn invalid_config_exits_2_with_every_problem() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "bad.toml",
        "duration = \"0s\"\n[medium]\ncapacity = \"fast\"\n[[flow]]\nkind = \"cbr\"\n",
    );
    let r = linkforge(&["simulate", s(&cfg), "-o", s(&tmp.path().join("o"))]);
    assert_eq!(code(&r), 2);
    let err = stderr(&r);
    assert!(err.contains("duration"), "{err}");
    assert!(err.contains("medium.capacity"), "{err}");
    assert!(err.contains("flow[0].rate"), "{err}");

    let r = linkforge(&["simulate", "no-such-scenario", "-o", s(&tmp.path().join("o"))]);
    assert_eq!(code(&r), 2);
}

#[test]
fn unwritable_output_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "short.toml", SHORT);
    let blocker = write(tmp.path(), "file", "");
    let r = linkforge(&["simulate", s(&cfg), "-o", s(&blocker.join("sub"))]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
}

#[test]
fn record_writes_one_trace_per_saturated_direction() {
    let tmp = TempDir::new().unwrap();
    let one = write(tmp.path(), "one.toml", STEADY);
    let two = write(tmp.path(), "two.toml", TWO_WAY);
    let r1 = tmp.path().join("r1");
    let r2 = tmp.path().join("r2");
    assert_eq!(code(&linkforge(&["record", s(&one), "-o", s(&r1)])), 0);
    assert!(r1.join("traces/uplink.trace").exists());
    assert!(!r1.join("traces/downlink.trace").exists());
    assert_eq!(code(&linkforge(&["record", s(&two), "-o", s(&r2)])), 0);
    assert!(r2.join("traces/uplink.trace").exists());
    assert!(r2.join("traces/downlink.trace").exists());

    let r = linkforge(&["record", "fig12", "-o", s(&tmp.path().join("r3"))]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("no saturator"));
}

#[test]
fn replay_prints_the_completion_table() {
    let tmp = TempDir::new().unwrap();
    let rec = tmp.path().join("rec");
    assert_eq!(code(&linkforge(&["record", "table1-record", "-o", s(&rec)])), 0);
    let out = tmp.path().join("rep");
    let r = linkforge(&["replay", s(&rec), "table1", "-o", s(&out)]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let text = stdout(&r);
    assert!(text.contains("Network (s)  Traces (s)"), "{text}");
    let row = text.lines().last().unwrap();
    let cols: Vec<f64> = row.split_whitespace().skip(2).map(|c| c.parse().unwrap()).collect();
    assert!((cols[1] - cols[0]).abs() <= 0.1 * cols[0], "{row}");
    assert!(out.join("metrics/replay.csv").exists());
    assert!(out.join("network/metrics/summary.csv").exists());
    assert!(out.join("traces/uplink.trace").exists());
}

fn delivered_up(out: &Path) -> u64 {
    let text = fs::read_to_string(out.join("metrics/replay.csv")).unwrap();
    let row = text.lines().find(|l| l.starts_with("uplink,")).unwrap();
    row.split(',').nth(1).unwrap().parse().unwrap()
}

#[test]
fn injected_loss_removes_about_one_percent() {
    let tmp = TempDir::new().unwrap();
    let steady = write(tmp.path(), "steady.toml", STEADY);
    let workload = write(tmp.path(), "cbr.toml", CBR_WORKLOAD);
    let rec = tmp.path().join("rec");
    assert_eq!(code(&linkforge(&["record", s(&steady), "-o", s(&rec)])), 0);
    let trace = rec.join("traces/uplink.trace");
    let clean = tmp.path().join("clean");
    let lossy = tmp.path().join("lossy");
    assert_eq!(code(&linkforge(&["replay", s(&trace), s(&workload), "-o", s(&clean)])), 0);
    let r = linkforge(&["replay", s(&trace), s(&workload), "-o", s(&lossy), "--inject-loss", "0.01"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let ratio = delivered_up(&lossy) as f64 / delivered_up(&clean) as f64;
    // About 5000 packets: three standard deviations is 0.42 pp.
    assert!((0.9858..=0.9942).contains(&ratio), "delivered ratio {ratio}");
}

#[test]
fn replay_rejects_missing_or_garbled_traces() {
    let tmp = TempDir::new().unwrap();
    let out = s(&tmp.path().join("o")).to_string();
    let r = linkforge(&["replay", "/nonexistent/uplink.trace", "table1", "-o", &out]);
    assert_eq!(code(&r), 2);
    let bad = write(tmp.path(), "uplink.trace", "0\n1\nabc\n");
    let r = linkforge(&["replay", s(&bad), "table1", "-o", &out]);
    assert_eq!(code(&r), 2);
    assert!(stderr(&r).contains("line 3"), "{}", stderr(&r));
}

const LIVE: &str = r#"
duration = "1s"
[medium]
capacity = "20Mbps"
[[flow]]
kind = "saturator"
profile = "wifi"
watchdog = "200ms"
"#;

#[test]
fn live_loopback_runs_and_logs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "live.toml", LIVE);
    let out = tmp.path().join("live");
    let r = linkforge(&["live-loopback", s(&cfg), "-o", s(&out), "--rate", "10Mbps"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    assert!(out.join("logs/flow1_uplink.csv").exists());
    assert!(out.join("traces/uplink.trace").exists());

    let blocked = tmp.path().join("blocked");
    let r = linkforge(&["live-loopback", s(&cfg), "-o", s(&blocked), "--block-feedback"]);
    assert_eq!(code(&r), 0, "{}", stderr(&r));
    let resets: u64 = stdout(&r)
        .lines()
        .find_map(|l| l.strip_prefix("watchdog resets: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(resets >= 1);
}

#[test]
fn live_loopback_bind_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "live.toml", LIVE);
    let holder = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let port = holder.local_addr().unwrap().port().to_string();
    let r = linkforge(&["live-loopback", s(&cfg), "-o", s(&tmp.path().join("o")), "--data-port", &port]);
    assert_eq!(code(&r), 3, "{}", stderr(&r));
}
