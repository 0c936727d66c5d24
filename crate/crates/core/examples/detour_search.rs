//! Search a small graph for relays that beat the direct route, and for
//! pairs that can only talk through a relay.
//!
//! cargo run --example detour_search

use std::fs;
use std::path::PathBuf;

use overlay_latency::detour::{self, InsightKind};
use overlay_latency::report::fmt_fixed;
use overlay_latency::{best_detour, EndpointKey, LatencyGraph};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/insight_graph.csv");
    let graph = LatencyGraph::read_snapshot(fs::read_to_string(path)?.as_bytes())?;

    let mut insights = detour::enumerate_detours(&graph, 1.0);
    detour::sort_for_report(&mut insights);
    for i in insights.iter().take(8) {
        match i.kind {
            InsightKind::Improvement => println!(
                "{} -> {} via {}: {} ms instead of {} ms ({}% better)",
                i.source,
                i.destination,
                i.via,
                fmt_fixed(i.overlay_rtt_ms, 2),
                fmt_fixed(i.direct_rtt_ms.unwrap_or_default(), 2),
                fmt_fixed(i.improvement_pct.unwrap_or_default(), 2)
            ),
            InsightKind::Bridge => println!(
                "{} -> {} via {}: {} ms, no direct measurement",
                i.source,
                i.destination,
                i.via,
                fmt_fixed(i.overlay_rtt_ms, 2)
            ),
        }
    }

    let key = |s: &str| EndpointKey::infer(s).unwrap();
    if let Some(best) = best_detour(&graph, &key("Milpitas"), &key("Morrisdale")) {
        println!(
            "best Milpitas -> Morrisdale relay: {} saving {} ms",
            best.via,
            fmt_fixed(best.improvement_ms.unwrap_or_default(), 2)
        );
    }

    let (census, histogram) = detour::census(&graph, 1.0, 10.0);
    println!("{census:?}");
    for (bucket, count) in histogram.buckets() {
        println!("{:>6}% {count}", fmt_fixed(bucket, 0));
    }
    Ok(())
}
