//! Acceptance checks. Each criterion prints one PASS/FAIL line with the
//! measured values and elapsed time; the test fails if any line fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::time::{Duration, Instant};

use common::{fixture, oracle_best, oracle_detours, rows, synthetic_feed, Matrix};
use overlay_latency::detour::{self, InsightKind};
use overlay_latency::ingest::{self, representative_rtt, Granularity};
use overlay_latency::report::{self, PipelineConfig};
use overlay_latency::stats::{self, Metric, Modality, Route};
use overlay_latency::traceroute::{self, Verdict};
use overlay_latency::{best_detour, build_graph, EndpointKey, LatencyGraph, OverlayPath, RttSummary};
use proptest::prelude::*;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;

struct Check {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn within(actual: f64, expected: f64, tol: f64) -> bool {
    (actual - expected).abs() <= tol
}

fn leg_ab() -> RttSummary {
    RttSummary::from_moments(57.451219512195124, 58.0, 159.0850188379932, 59.0, 984, Modality::Unimodal)
}

fn leg_bc() -> RttSummary {
    RttSummary::from_moments(10.466880566801635, 12.216999999999999, 11.510906220553505, 12.52, 988, Modality::Bimodal)
}

fn composed_abc() -> RttSummary {
    stats::compose(&OverlayPath::new(vec![leg_ab(), leg_bc()])).expect("two legs")
}

fn composition() -> Outcome {
    let c = composed_abc();
    let got = [c.mean_ms, c.median_ms, c.variance_ms2, c.mode_ms, c.std_dev_ms];
    let want = [67.918100079, 70.217, 170.5959250585, 71.52, 13.061237501];
    let detail = format!("composed mean/median/var/mode/std = {got:.3?}");
    if got.iter().zip(want).all(|(g, w)| within(*g, w, 0.005)) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn comparison() -> Outcome {
    let direct = RttSummary::from_moments(61.723446893787575, 62.0, 117.50267669607766, 61.0, 998, Modality::Unimodal);
    let v = stats::compare(&direct, &composed_abc());
    let detail = format!(
        "median delta {:.3}, mode delta {:.3}, metric {:?}, faster {:?}: {}",
        v.median_delta_ms, v.mode_delta_ms, v.preferred_metric, v.faster, v.text
    );
    let ok = within(v.median_delta_ms, 8.22, 0.01)
        && within(v.mode_delta_ms, 10.52, 0.01)
        && v.faster == Route::Direct
        && v.preferred_metric == Metric::Median;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn insight_fixtures() -> Outcome {
    let text = fs::read_to_string(fixture("insight_graph.csv")).map_err(|e| e.to_string())?;
    let graph = LatencyGraph::read_snapshot(text.as_bytes()).map_err(|e| e.to_string())?;
    let key = |s: &str| EndpointKey::infer(s).unwrap();
    let best = |s: &str, d: &str| best_detour(&graph, &key(s), &key(d)).ok_or(format!("no detour {s} -> {d}"));

    let a = best("Milpitas", "Morrisdale")?;
    let b = best("Newark", "Las Cruces")?;
    let c = best("10194", "6636")?;
    let detail = format!(
        "Milpitas->Morrisdale via {} gains {:.3} ms; Newark->Las Cruces via {} overlay {:.3} ms, {:.3}%; 10194->6636 via {} overlay {:.3} ms, direct {:?}",
        a.via,
        a.improvement_ms.unwrap_or(f64::NAN),
        b.via,
        b.overlay_rtt_ms,
        b.improvement_pct.unwrap_or(f64::NAN),
        c.via,
        c.overlay_rtt_ms,
        c.direct_rtt_ms
    );
    let listed = detour::enumerate_detours(&graph, 1.0);
    let has = |s: &str, v: &str, d: &str| {
        listed
            .iter()
            .any(|i| i.source == key(s) && i.via == key(v) && i.destination == key(d))
    };
    let ok = a.via == key("Las Cruces")
        && a.improvement_ms.is_some_and(|x| within(x, 200.49, 0.01))
        && b.via == key("Kennett Square")
        && within(b.overlay_rtt_ms, 43.85, 0.01)
        && b.improvement_pct.is_some_and(|x| within(x, 18.04, 0.05))
        && c.via == key("1003746")
        && c.kind == InsightKind::Bridge
        && within(c.overlay_rtt_ms, 4.9, 0.01)
        && c.direct_rtt_ms.is_none()
        && has("Milpitas", "Las Cruces", "Morrisdale")
        && has("Newark", "Kennett Square", "Las Cruces")
        && has("10194", "1003746", "6636");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let (mut insights, mut pairs) = (0usize, 0usize);
    for case in 0..200 {
        let nodes = rng.random_range(2..=50);
        let m = Matrix::random(&mut rng, nodes, 0.3, case % 4 == 3);
        let graph = m.graph();
        let threshold = [0.0, 0.5, 1.0, 10.0][case % 4];
        let got = rows(&detour::enumerate_detours(&graph, threshold));
        let want = oracle_detours(&m, threshold);
        if got != want {
            return Err(format!(
                "case {case}: {} insights vs {} from oracle",
                got.len(),
                want.len()
            ));
        }
        insights += got.len();
        for s in 0..nodes {
            for d in 0..nodes {
                if s == d {
                    continue;
                }
                let got = best_detour(&graph, &EndpointKey::label(m.names[s].clone()), &EndpointKey::label(m.names[d].clone()))
                    .map(|i| (i.via.to_string(), i.overlay_rtt_ms));
                if got != oracle_best(&m, s, d) {
                    return Err(format!("case {case}: best {s}->{d} {got:?} vs {:?}", oracle_best(&m, s, d)));
                }
                pairs += 1;
            }
        }
    }
    Ok(format!("200 graphs, {insights} insights and {pairs} best-detour pairs identical"))
}

fn threshold_nesting() -> Outcome {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 128,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    let strategy = (2usize..=25, 0.05f64..0.9, any::<u64>(), any::<bool>());
    let result = runner.run(&strategy, |(nodes, density, seed, quantize)| {
        let mut rng = StdRng::seed_from_u64(seed);
        let m = Matrix::random(&mut rng, nodes, density, quantize);
        let graph = m.graph();
        let sets: Vec<BTreeSet<_>> = [1.0, 0.5, 0.0]
            .iter()
            .map(|t| rows(&detour::enumerate_detours(&graph, *t)))
            .collect();
        prop_assert!(sets[0].is_subset(&sets[1]));
        prop_assert!(sets[1].is_subset(&sets[2]));
        for t in [0.0, 0.5, 1.0] {
            let insights = detour::enumerate_detours(&graph, t);
            let improvable: BTreeSet<_> = insights
                .iter()
                .filter(|i| i.kind == InsightKind::Improvement)
                .map(|i| (i.source.clone(), i.destination.clone()))
                .collect();
            let hist = detour::improvement_histogram(&insights, 1.0);
            let (census, streamed) = detour::census(&graph, t, 1.0);
            prop_assert_eq!(hist.total_pairs(), improvable.len() as u64);
            prop_assert_eq!(hist.buckets().map(|(_, c)| c).sum::<u64>(), improvable.len() as u64);
            prop_assert_eq!(census.improvable_pairs, improvable.len() as u64);
            prop_assert_eq!(&streamed, &hist);
        }
        Ok(())
    });
    match result {
        Ok(()) => Ok("128 generated graphs: 1% within 0.5% within 0%, histogram totals equal improvable pairs".into()),
        Err(e) => Err(e.to_string()),
    }
}

fn aggregation_properties() -> Outcome {
    let grid = [0.1, 1.0, 10.0, 100.0];
    let mut triples = 0;
    for a in grid {
        for b in grid {
            for c in grid {
                let mut sorted = [a, b, c];
                sorted.sort_by(f64::total_cmp);
                for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                    let got = representative_rtt(&p).map_err(|e| e.to_string())?;
                    if got != sorted[1] {
                        return Err(format!("{p:?}: {got} != {}", sorted[1]));
                    }
                }
                triples += 1;
            }
        }
    }

    let mut rng = StdRng::seed_from_u64(17);
    let feed = synthetic_feed(&mut rng, 1000, 40);
    let mut records: Vec<_> = feed
        .lines()
        .map(|l| ingest::parse_result_line(l).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let snapshot = |g: &LatencyGraph| {
        let mut buf = Vec::new();
        g.write_snapshot(&mut buf).unwrap();
        buf
    };
    let reference = build_graph(records.clone());
    let reference_edges: Vec<_> = reference.edges().collect();
    let reference_text = snapshot(&reference);
    for round in 0..50 {
        records.shuffle(&mut rng);
        let g = build_graph(records.clone());
        let same_bits = g
            .edges()
            .zip(&reference_edges)
            .all(|(x, y)| x.source == y.source && x.destination == y.destination && x.rtt_ms.to_bits() == y.rtt_ms.to_bits());
        if g.edge_count() != reference.edge_count() || !same_bits || snapshot(&g) != reference_text {
            return Err(format!("shuffle {round} changed the graph"));
        }
    }
    Ok(format!(
        "{triples} value triples x 6 orders give the median; 50 shuffles of 1000 records give a bit-identical graph ({} edges)",
        reference.edge_count()
    ))
}

fn traceroute_corpus() -> Outcome {
    let mut files: Vec<_> = fs::read_dir(fixture("traceroutes"))
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    let spec = traceroute::CitySpec::los_angeles();
    let mut hops = Vec::new();
    let mut verdicts = Vec::new();
    for path in &files {
        let trace = traceroute::parse_traceroute(&fs::read_to_string(path).unwrap()).map_err(|e| format!("{}: {e}", path.display()))?;
        hops.push(traceroute::hop_count(&trace));
        verdicts.push(traceroute::detect_city(&trace, &spec).verdict);
    }
    use Verdict::*;
    let detail = format!("hops {hops:?}, verdicts {verdicts:?}");
    if hops == [5, 5, 12, 18, 12, 14, 16, 14, 16, 15] && verdicts == [No, No, Yes, Yes, Yes, Yes, Yes, Yes, Yes, Unknown] {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ttl_round_trip() -> Outcome {
    for initial in [64u32, 128, 255] {
        for hops in 1..=30u32 {
            let observed = initial - hops + 1;
            match traceroute::ttl_hop_estimate(observed) {
                Ok(h) if h == hops => {}
                other => return Err(format!("initial {initial}, hops {hops}: {other:?}")),
            }
        }
    }
    Ok("90 (hops, initial TTL) combinations recovered".into())
}

fn bimodality() -> Outcome {
    let mut rng = StdRng::seed_from_u64(4);
    let low = Normal::new(4.0, 0.5).unwrap();
    let high = Normal::new(12.5, 0.5).unwrap();
    let samples: Vec<f64> = (0..1000)
        .map(|_| {
            let x: f64 = if rng.random_bool(0.2) { low.sample(&mut rng) } else { high.sample(&mut rng) };
            x.max(0.01)
        })
        .collect();
    let s = stats::summarize(&samples, stats::DEFAULT_MODE_BIN_WIDTH_MS).map_err(|e| e.to_string())?;
    let detail = format!("modality {}, mode {:.2} ms", s.modality, s.mode_ms);
    if s.modality == Modality::Bimodal && within(s.mode_ms, 12.5, 0.5) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn throughput() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let feed_path = dir.path().join("feed.csv");
    let mut rng = StdRng::seed_from_u64(99);
    fs::write(&feed_path, synthetic_feed(&mut rng, 1_000_000, 300)).map_err(|e| e.to_string())?;

    let start = Instant::now();
    let config = PipelineConfig {
        inputs: vec![feed_path],
        granularity: Granularity::Ip,
        output_dir: dir.path().to_path_buf(),
        ..PipelineConfig::default()
    };
    let (mut out, mut diag) = (Vec::new(), Vec::new());
    let ingest = report::cmd_ingest(&config, &mut out, &mut diag).map_err(|e| e.to_string())?;
    let detours = report::cmd_detours(&config, &ingest.snapshot, &mut out, &mut diag).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let detail = format!(
        "1,000,000 lines -> {} edges, {} insights in {:.1} s (global dataset counts are not reproducible here)",
        ingest.edges,
        detours.insights.len(),
        elapsed.as_secs_f64()
    );
    if ingest.kept == 1_000_000 && ingest.parse_errors == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

#[test]
fn acceptance() {
    let checks = [
        Check { name: "overlay composition of two legs", budget: Duration::from_secs(1), run: composition },
        Check { name: "direct versus overlay verdict", budget: Duration::from_secs(1), run: comparison },
        Check { name: "known detour and bridge insights", budget: Duration::from_secs(1), run: insight_fixtures },
        Check { name: "detour search matches brute force", budget: Duration::from_secs(30), run: oracle_equivalence },
        Check { name: "threshold nesting and histogram totals", budget: Duration::from_secs(10), run: threshold_nesting },
        Check { name: "aggregation order invariance", budget: Duration::from_secs(5), run: aggregation_properties },
        Check { name: "traceroute corpus hops and verdicts", budget: Duration::from_secs(1), run: traceroute_corpus },
        Check { name: "TTL hop round trip", budget: Duration::from_secs(1), run: ttl_round_trip },
        Check { name: "two-cluster sample is bimodal", budget: Duration::from_secs(1), run: bimodality },
        Check { name: "1M-line feed end to end", budget: Duration::from_secs(60), run: throughput },
    ];
    let mut failed = Vec::new();
    for check in &checks {
        let start = Instant::now();
        let outcome = (check.run)();
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= check.budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget {:?}", check.budget)),
            Err(d) => (false, d),
        };
        // straight to stderr so the lines survive test output capture
        let _ = writeln!(
            io::stderr(),
            "{} {}: {} [{:.3} s]",
            if ok { "PASS" } else { "FAIL" },
            check.name,
            detail,
            elapsed.as_secs_f64()
        );
        if !ok {
            failed.push(check.name);
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
