//! Hop counts and a "does the path cross Los Angeles" verdict for a
//! directory of traceroute captures, plus a TTL cross-check.
//!
//! cargo run --example traceroute_city [dir]

use std::fs;
use std::path::PathBuf;

use overlay_latency::traceroute::{self, CitySpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/traceroutes"));
    let mut files: Vec<_> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    files.sort();

    let la = CitySpec::los_angeles();
    println!("{:<22} {:>4}  {:<8} evidence", "source", "hops", "via LA");
    for path in files {
        let trace = match traceroute::parse_traceroute(&fs::read_to_string(&path)?) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                continue;
            }
        };
        let found = traceroute::detect_city(&trace, &la);
        let evidence: Vec<String> = found.evidence.iter().map(|(hop, token)| format!("{token}@{hop}")).collect();
        println!(
            "{:<22} {:>4}  {:<8} {}",
            trace.source_label,
            traceroute::hop_count(&trace),
            found.verdict.to_string(),
            evidence.join(" ")
        );
    }

    // A reply arriving with TTL 60 left a host that started at 64.
    println!("TTL 60 -> {:?} hops", traceroute::ttl_hop_estimate(60));
    Ok(())
}
