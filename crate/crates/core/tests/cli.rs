mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::fixture;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_overlay-latency"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ingest_then_detours() {
    let dir = tempfile::tempdir().unwrap();
    let feed = fixture("feed_100.txt");
    let o = run(&["--output-dir", s(dir.path()), "ingest", s(&feed)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("records read: 100"), "{stdout}");
    let graph = dir.path().join("graph.csv");
    assert!(graph.exists());

    let o = run(&["--output-dir", s(dir.path()), "detours", s(&graph), "--threshold", "1", "--top", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let insights = fs::read_to_string(dir.path().join("insights.csv")).unwrap();
    assert!(insights.starts_with("source,via,destination,"));
    assert!(dir.path().join("histogram.csv").exists());
}

#[test]
fn config_file_filters_status() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        format!(
            "output_dir = {:?}\n\n[filter]\nrequired_status = \"stopped\"\n",
            dir.path().join("out").to_str().unwrap()
        ),
    )
    .unwrap();
    let o = run(&["--config", s(&config), "--format", "json", "ingest", s(&fixture("feed_100.txt"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["kept"], 90);
    assert_eq!(summary["dropped"][0][0], "status");
    assert_eq!(summary["dropped"][0][1], 10);
}

#[test]
fn missing_input_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--output-dir", s(dir.path()), "ingest", "/nonexistent/feed.jsonl"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("input not found"));
}

#[test]
fn unknown_flag_is_usage_error() {
    assert_eq!(code(&run(&["detours", "--bogus"])), 2);
    assert_eq!(code(&run(&["--format", "xml", "traceroutes", "."])), 2);
}

#[test]
fn malformed_snapshot_is_analysis_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("graph.csv");
    fs::write(&bad, "source,destination,rtt_ms,sample_count,measurement_count\na,b,fast,1,1\n").unwrap();
    let o = run(&["--output-dir", s(dir.path()), "detours", s(&bad)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn empty_sample_file_is_analysis_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("leg.txt");
    fs::write(&empty, "# nothing yet\n").unwrap();
    let o = run(&["--output-dir", s(dir.path()), "overlay", "--leg", s(&empty)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("leg.txt"));
}

#[test]
fn traceroutes_report_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--output-dir", s(dir.path()), "traceroutes", s(&fixture("traceroutes"))]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("traceroutes.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "source_label,destination,hop_count,city_verdict");
    assert_eq!(lines[1], "UCSD CSE wifi,ieng6.ucsd.edu,5,No");
    assert_eq!(lines[10], "SAN wifi,ieng6.ucsd.edu,15,Unknown");
}

#[test]
fn traceroutes_skip_unparseable_files() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("traces");
    fs::create_dir(&traces).unwrap();
    fs::copy(fixture("traceroutes/01_ucsd_cse_wifi.txt"), traces.join("a.txt")).unwrap();
    fs::write(traces.join("b.txt"), "this is not a traceroute\n").unwrap();
    let out = dir.path().join("out");
    let o = run(&["--output-dir", s(&out), "traceroutes", s(&traces)]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("b.txt"));
    assert_eq!(fs::read_to_string(out.join("traceroutes.csv")).unwrap().lines().count(), 2);
}

#[test]
fn empty_trace_directory_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let traces = dir.path().join("none");
    fs::create_dir(&traces).unwrap();
    let o = run(&["--output-dir", s(dir.path()), "traceroutes", s(&traces)]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read_to_string(dir.path().join("traceroutes.csv")).unwrap(),
        "source_label,destination,hop_count,city_verdict\n"
    );
}

#[test]
fn overlay_reproduces_summary_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "--output-dir",
        s(dir.path()),
        "overlay",
        "--leg",
        s(&fixture("overlay/a_to_b.txt")),
        "--label",
        "A-B",
        "--leg",
        s(&fixture("overlay/b_to_c.txt")),
        "--label",
        "B-C",
        "--direct",
        s(&fixture("overlay/a_to_c.txt")),
        "--bin-width",
        "0.02",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("overlay_summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "label,mean_ms,median_ms,variance_ms2,mode_ms,std_dev_ms,sample_count,modality");
    assert_eq!(lines[1], "A-B,57.45,58.00,159.09,59.00,12.61,984,unimodal");
    assert_eq!(lines[2], "B-C,10.47,12.22,11.51,12.52,3.39,988,bimodal");
    assert_eq!(lines[3], "overlay,67.92,70.22,170.60,71.52,13.06,984,bimodal");
    assert_eq!(lines[4], "direct,61.72,62.00,117.50,61.00,10.84,998,unimodal");
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("median delta: 8.22 ms, mode delta: 10.52 ms"), "{stdout}");
    assert!(stdout.contains("direct route is 8.22 ms faster by median"), "{stdout}");
    assert!(dir.path().join("distribution_B-C.csv").exists());
}

#[test]
fn geo_warm_fills_cache_from_static_table() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("geo.toml");
    fs::write(
        &config,
        format!(
            "[geo]\nprovider = \"static\"\nstatic_file = {:?}\n",
            fixture("geo_static.csv").to_str().unwrap()
        ),
    )
    .unwrap();
    let list = dir.path().join("ips.txt");
    fs::write(&list, "73.158.12.4\n10.0.0.1\n203.0.113.250\nnot-an-ip\n").unwrap();
    let cache = dir.path().join("cache.csv");
    let o = run(&["--config", s(&config), "geo-warm", s(&list), "--cache", s(&cache)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("addresses: 4"), "{stdout}");
    assert!(stdout.contains("invalid: 1"), "{stdout}");
    let text = fs::read_to_string(&cache).unwrap();
    assert!(text.starts_with("ip,city,region,country,timestamp\n"));
    assert!(text.contains("73.158.12.4,Milpitas,California,US,"));
    assert!(!text.contains("10.0.0.1"));
}
