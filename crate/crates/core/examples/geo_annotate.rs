//! Attach locations to detour insights: probe ids from a sidecar table,
//! addresses through a cache-first resolver backed by a static table.
//!
//! cargo run --example geo_annotate

use std::fs;
use std::path::PathBuf;

use overlay_latency::detour;
use overlay_latency::geo::{self, GeoCache, GeoResolver, ProbeLocations, StaticFileProvider};
use overlay_latency::LatencyGraph;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let graph = LatencyGraph::read_snapshot(fs::read_to_string(fixtures.join("insight_graph.csv"))?.as_bytes())?;
    let probes = ProbeLocations::open(&fixtures.join("probe_locations.csv"))?;
    let provider = StaticFileProvider::open(&fixtures.join("geo_static.csv"))?;
    let resolver = GeoResolver::new(GeoCache::default(), Box::new(provider));

    for ip in ["73.158.12.4", "209.93.4.71", "10.1.2.3", "8.8.8.8"] {
        let r = resolver.lookup(ip)?;
        println!("{ip:<14} {:<32} ({:?})", r.place(), r.source);
    }
    println!("provider calls: {}", resolver.provider_calls());

    let insights = detour::enumerate_detours(&graph, 1.0)
        .into_iter()
        .filter(|i| i.source.as_str().bytes().all(|b| b.is_ascii_digit()))
        .collect();
    for located in geo::annotate(insights, &resolver, Some(&probes)) {
        println!(
            "{} ({}) -> {} ({}) via {} ({}): {:.2} ms",
            located.insight.source,
            located.source_geo.place(),
            located.insight.destination,
            located.destination_geo.place(),
            located.insight.via,
            located.via_geo.place(),
            located.insight.overlay_rtt_ms
        );
    }
    Ok(())
}
