//! Parse a mixed JSON/CSV result feed, filter it and build the latency graph.
//!
//! cargo run --example ingest_feed [feed]

use std::fs::File;
use std::io::{self, BufReader};
use std::path::PathBuf;

use overlay_latency::ingest::{self, FilterSpec, Granularity, MeasurementStatus, RecordFilter};
use overlay_latency::GraphBuilder;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/feed_100.txt"));

    let spec = FilterSpec {
        required_status: Some(MeasurementStatus::Stopped),
        min_start_time: Some(ingest::parse_time("2023-04-01T00:00:00Z")?),
        ..FilterSpec::default()
    };
    let mut filter = RecordFilter::new(&spec);
    let mut builder = GraphBuilder::new();
    let mut bad = 0;
    for item in ingest::read_feed(BufReader::new(File::open(&path)?), Granularity::Ip) {
        match item {
            Ok(record) if filter.admit(&record) => builder.add(record),
            Ok(_) => {}
            Err(e) => {
                bad += 1;
                eprintln!("skipping: {e}");
            }
        }
    }
    println!("malformed lines: {bad}");
    for (reason, count) in filter.counts().iter() {
        println!("dropped for {reason}: {count}");
    }
    let stats = builder.stats();
    let graph = builder.build();
    println!(
        "accepted {} records into {} nodes and {} edges",
        stats.accepted,
        graph.node_count(),
        graph.edge_count()
    );
    graph.write_snapshot(io::stdout().lock())?;
    Ok(())
}
