//! Predict the RTT of A -> C relayed through B from the A -> B and B -> C
//! samples, and compare it with the measured direct A -> C route.
//!
//! cargo run --example overlay_compose

use std::fs::File;
use std::io::{self, BufReader};
use std::path::PathBuf;

use overlay_latency::stats::{self, RttSummary};
use overlay_latency::{compare, compose, OverlayPath};

const BIN_WIDTH_MS: f64 = 0.02;

fn load(name: &str) -> Result<RttSummary, Box<dyn std::error::Error>> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/overlay").join(name);
    let samples = stats::read_samples(BufReader::new(File::open(path)?))?;
    Ok(stats::summarize(&samples, BIN_WIDTH_MS)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ab = load("a_to_b.txt")?;
    let bc = load("b_to_c.txt")?;
    let ac = load("a_to_c.txt")?;
    let via_b = compose(&OverlayPath::new(vec![ab.clone(), bc.clone()]).with_labels(vec!["A-B".into(), "B-C".into()]))?;

    stats::write_summary_csv(
        io::stdout().lock(),
        [("A-B", &ab), ("B-C", &bc), ("A-C via B", &via_b), ("A-C", &ac)],
    )?;
    let verdict = compare(&ac, &via_b);
    println!(
        "median delta {:.2} ms, mode delta {:.2} ms: {}",
        verdict.median_delta_ms, verdict.mode_delta_ms, verdict.text
    );
    Ok(())
}
