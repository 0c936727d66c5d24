mod common;

use std::fs::File;
use std::io::BufReader;

use common::fixture;
use overlay_latency::stats::{self, Modality};
use overlay_latency::{compose, OverlayPath};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn mean_of_a_million_samples() {
    let mut rng = StdRng::seed_from_u64(1);
    let samples: Vec<f64> = (0..1_000_000).map(|_| rng.random_range(0.1..500.0)).collect();
    let s = stats::summarize(&samples, 0.5).unwrap();
    // Kahan-compensated recomputation
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for &x in &samples {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    let mean = sum / samples.len() as f64;
    assert!(((s.mean_ms - mean) / mean).abs() < 1e-9, "{} vs {mean}", s.mean_ms);
    assert!((s.std_dev_ms * s.std_dev_ms - s.variance_ms2).abs() <= 1e-9 * s.variance_ms2);
}

fn load(name: &str) -> Vec<f64> {
    stats::read_samples(BufReader::new(File::open(fixture(name)).unwrap())).unwrap()
}

#[test]
fn monte_carlo_agrees_on_mean_and_variance() {
    let ab = load("overlay/a_to_b.txt");
    let bc = load("overlay/b_to_c.txt");
    let composed = compose(&OverlayPath::new(vec![
        stats::summarize(&ab, 0.02).unwrap(),
        stats::summarize(&bc, 0.02).unwrap(),
    ]))
    .unwrap();
    let mut rng = StdRng::seed_from_u64(2);
    let sums = stats::monte_carlo_sums(&[&ab, &bc], 100_000, &mut rng).unwrap();
    let empirical = stats::summarize(&sums, 0.5).unwrap();
    assert!((empirical.mean_ms / composed.mean_ms - 1.0).abs() < 0.02);
    assert!((empirical.variance_ms2 / composed.variance_ms2 - 1.0).abs() < 0.02);
}

#[test]
fn fixture_legs_have_expected_shape() {
    let bc = stats::summarize(&load("overlay/b_to_c.txt"), 0.02).unwrap();
    assert_eq!(bc.modality, Modality::Bimodal);
    assert_eq!(bc.mode_ms, 12.52);
    let ab = stats::summarize(&load("overlay/a_to_b.txt"), 0.02).unwrap();
    assert_eq!(ab.modality, Modality::Unimodal);
    assert_eq!(ab.median_ms, 58.0);
}
