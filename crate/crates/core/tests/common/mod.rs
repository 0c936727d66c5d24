#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use overlay_latency::{EndpointKey, LatencyGraph};
use rand::Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// Dense RTT matrix with `None` for unmeasured pairs; node names sort in
/// index order.
#[derive(Debug, Clone)]
pub struct Matrix {
    pub names: Vec<String>,
    pub rtt: Vec<Vec<Option<f64>>>,
}

impl Matrix {
    pub fn random<R: Rng>(rng: &mut R, nodes: usize, density: f64, quantize: bool) -> Self {
        let names: Vec<String> = (0..nodes).map(|i| format!("n{i:02}")).collect();
        let mut rtt = vec![vec![None; nodes]; nodes];
        for (s, row) in rtt.iter_mut().enumerate() {
            for (d, cell) in row.iter_mut().enumerate() {
                if s != d && rng.random_bool(density) {
                    let v: f64 = 300.0 - rng.random_range(0.0..299.9);
                    *cell = Some(if quantize { v.ceil() } else { v });
                }
            }
        }
        Self { names, rtt }
    }

    pub fn graph(&self) -> LatencyGraph {
        let keys: Vec<EndpointKey> = self.names.iter().map(|n| EndpointKey::label(n.clone())).collect();
        let mut edges = Vec::new();
        for (s, row) in self.rtt.iter().enumerate() {
            for (d, cell) in row.iter().enumerate() {
                if let Some(v) = cell {
                    edges.push((&keys[s], &keys[d], *v));
                }
            }
        }
        LatencyGraph::from_rtts(edges).expect("valid matrix")
    }
}

/// (source, via, destination, overlay bits, direct bits if any)
pub type Row = (String, String, String, u64, Option<u64>);

pub fn oracle_detours(m: &Matrix, threshold_pct: f64) -> BTreeSet<Row> {
    let n = m.names.len();
    let mut out = BTreeSet::new();
    for s in 0..n {
        for v in 0..n {
            for d in 0..n {
                if s == v || v == d || s == d {
                    continue;
                }
                let (Some(a), Some(b)) = (m.rtt[s][v], m.rtt[v][d]) else { continue };
                let overlay = a + b;
                let keep = match m.rtt[s][d] {
                    None => true,
                    Some(direct) => overlay < direct && 100.0 * (direct - overlay) / direct >= threshold_pct,
                };
                if keep {
                    out.insert((
                        m.names[s].clone(),
                        m.names[v].clone(),
                        m.names[d].clone(),
                        overlay.to_bits(),
                        m.rtt[s][d].map(f64::to_bits),
                    ));
                }
            }
        }
    }
    out
}

/// Smallest overlay over all relays, first relay in name order on ties.
pub fn oracle_best(m: &Matrix, s: usize, d: usize) -> Option<(String, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for v in 0..m.names.len() {
        if v == s || v == d {
            continue;
        }
        if let (Some(a), Some(b)) = (m.rtt[s][v], m.rtt[v][d]) {
            let o = a + b;
            match best {
                Some((_, cur)) if o >= cur => {}
                _ => best = Some((v, o)),
            }
        }
    }
    best.map(|(v, o)| (m.names[v].clone(), o))
}

pub fn rows(insights: &[overlay_latency::DetourInsight]) -> BTreeSet<Row> {
    insights
        .iter()
        .map(|i| {
            (
                i.source.to_string(),
                i.via.to_string(),
                i.destination.to_string(),
                i.overlay_rtt_ms.to_bits(),
                i.direct_rtt_ms.map(f64::to_bits),
            )
        })
        .collect()
}

/// Synthetic CSV feed over `nodes` addresses placed on a plane; RTT tracks
/// distance with per-record jitter.
pub fn synthetic_feed<R: Rng>(rng: &mut R, lines: usize, nodes: usize) -> String {
    let points: Vec<(f64, f64)> = (0..nodes)
        .map(|_| (rng.random_range(0.0..100.0), rng.random_range(0.0..100.0)))
        .collect();
    let mut out = String::with_capacity(lines * 64);
    for i in 0..lines {
        let s = rng.random_range(0..nodes);
        let mut d = rng.random_range(0..nodes - 1);
        if d >= s {
            d += 1;
        }
        let (a, b) = (points[s], points[d]);
        let base = 1.0 + ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        let r = |rng: &mut R| base * rng.random_range(0.95..1.15);
        let (r1, r2, r3) = (r(rng), r(rng), r(rng));
        out.push_str(&format!(
            "{},10.{}.{}.1,10.{}.{}.1,4,Stopped,{},{r1:.3},{r2:.3},{r3:.3}\n",
            i % 97,
            s / 256,
            s % 256,
            d / 256,
            d % 256,
            1_680_000_000 + i
        ));
    }
    out
}
