//! One-hop detour search over a [`LatencyGraph`].
//!
//! For every source `s`, every relay `m` reachable from `s` and every
//! destination `d` reachable from `m`, the overlay RTT is
//! `rtt(s, m) + rtt(m, d)`. If `s -> d` was measured the triplet is an
//! improvement when the overlay beats it by at least the threshold
//! percentage; if not, the triplet is a bridge.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::endpoint::EndpointKey;
use crate::graph::LatencyGraph;
use crate::report::{fmt_fixed, fmt_opt};

pub const INSIGHT_HEADER: [&str; 8] = [
    "source",
    "via",
    "destination",
    "overlay_rtt_ms",
    "direct_rtt_ms",
    "improvement_ms",
    "improvement_pct",
    "kind",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InsightKind {
    Improvement,
    Bridge,
}

impl fmt::Display for InsightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Improvement => "improvement",
            Self::Bridge => "bridge",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetourInsight {
    pub source: EndpointKey,
    pub via: EndpointKey,
    pub destination: EndpointKey,
    pub overlay_rtt_ms: f64,
    pub direct_rtt_ms: Option<f64>,
    pub improvement_ms: Option<f64>,
    pub improvement_pct: Option<f64>,
    pub kind: InsightKind,
}

/// Index-level detour; cheap to produce in bulk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detour {
    pub source: usize,
    pub via: usize,
    pub destination: usize,
    pub overlay_rtt_ms: f64,
    pub direct_rtt_ms: Option<f64>,
}

impl Detour {
    pub fn improvement_pct(&self) -> Option<f64> {
        self.direct_rtt_ms.map(|direct| improvement_pct(direct, self.overlay_rtt_ms))
    }

    pub fn to_insight(&self, graph: &LatencyGraph) -> DetourInsight {
        let (kind, improvement_ms, improvement_pct) = match self.direct_rtt_ms {
            Some(direct) => (
                InsightKind::Improvement,
                Some(direct - self.overlay_rtt_ms),
                Some(improvement_pct(direct, self.overlay_rtt_ms)),
            ),
            None => (InsightKind::Bridge, None, None),
        };
        DetourInsight {
            source: graph.node(self.source).clone(),
            via: graph.node(self.via).clone(),
            destination: graph.node(self.destination).clone(),
            overlay_rtt_ms: self.overlay_rtt_ms,
            direct_rtt_ms: self.direct_rtt_ms,
            improvement_ms,
            improvement_pct,
            kind,
        }
    }
}

pub fn improvement_pct(direct_ms: f64, overlay_ms: f64) -> f64 {
    100.0 * (direct_ms - overlay_ms) / direct_ms
}

fn qualifies(direct: f64, overlay: f64, threshold_pct: f64) -> bool {
    overlay < direct && improvement_pct(direct, overlay) >= threshold_pct
}

/// Visits the detours starting at one source. `direct` is scratch space of
/// length `node_count` filled with NaN; it is restored before returning.
fn scan_source<F>(graph: &LatencyGraph, s: usize, threshold_pct: f64, direct: &mut [f64], mut emit: F)
where
    F: FnMut(Detour),
{
    let first_legs = graph.out_edges(s);
    for a in first_legs {
        direct[a.target] = a.rtt_ms;
    }
    for first in first_legs {
        let m = first.target;
        for second in graph.out_edges(m) {
            let d = second.target;
            if d == s {
                continue;
            }
            let overlay = first.rtt_ms + second.rtt_ms;
            let direct_rtt = direct[d];
            if direct_rtt.is_nan() {
                emit(Detour {
                    source: s,
                    via: m,
                    destination: d,
                    overlay_rtt_ms: overlay,
                    direct_rtt_ms: None,
                });
            } else if qualifies(direct_rtt, overlay, threshold_pct) {
                emit(Detour {
                    source: s,
                    via: m,
                    destination: d,
                    overlay_rtt_ms: overlay,
                    direct_rtt_ms: Some(direct_rtt),
                });
            }
        }
    }
    for a in first_legs {
        direct[a.target] = f64::NAN;
    }
}

/// Streams every improvement and bridge detour, source by source, using
/// memory proportional to the node count.
pub fn for_each_detour<F>(graph: &LatencyGraph, threshold_pct: f64, mut visit: F)
where
    F: FnMut(Detour),
{
    let mut direct = vec![f64::NAN; graph.node_count()];
    for s in 0..graph.node_count() {
        scan_source(graph, s, threshold_pct, &mut direct, &mut visit);
    }
}

/// All improvement insights at `threshold_pct` plus all bridges. Sources
/// are scanned in parallel; output is grouped by source in key order.
pub fn enumerate_detours(graph: &LatencyGraph, threshold_pct: f64) -> Vec<DetourInsight> {
    assert!(threshold_pct >= 0.0, "threshold must be non-negative");
    let n = graph.node_count();
    (0..n)
        .into_par_iter()
        .map_init(
            || vec![f64::NAN; n],
            |direct, s| {
                let mut found = Vec::new();
                scan_source(graph, s, threshold_pct, direct, |d| found.push(d.to_insight(graph)));
                found
            },
        )
        .flatten()
        .collect()
}

/// The relay with the smallest overlay RTT for `source -> destination`,
/// ties going to the smallest relay key. No threshold is applied: when the
/// direct edge exists the result is reported as an improvement even if its
/// gain is zero or negative.
pub fn best_detour(graph: &LatencyGraph, source: &EndpointKey, destination: &EndpointKey) -> Option<DetourInsight> {
    let s = graph.node_index(source)?;
    let d = graph.node_index(destination)?;
    best_detour_by_index(graph, s, d).map(|det| det.to_insight(graph))
}

pub fn best_detour_by_index(graph: &LatencyGraph, s: usize, d: usize) -> Option<Detour> {
    if s == d {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    // out_edges are sorted by index, which is key order, so a strict
    // comparison keeps the smallest relay on ties.
    for first in graph.out_edges(s) {
        let m = first.target;
        if m == d {
            continue;
        }
        if let Some(second) = graph.edge_by_index(m, d) {
            let overlay = first.rtt_ms + second.rtt_ms;
            if best.is_none_or(|(_, b)| overlay < b) {
                best = Some((m, overlay));
            }
        }
    }
    best.map(|(via, overlay_rtt_ms)| Detour {
        source: s,
        via,
        destination: d,
        overlay_rtt_ms,
        direct_rtt_ms: graph.edge_by_index(s, d).map(|a| a.rtt_ms),
    })
}

/// Pair counts for the whole graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DetourCensus {
    /// Ordered pairs with a measured direct edge.
    pub direct_pairs: u64,
    /// Direct pairs with at least one qualifying detour.
    pub improvable_pairs: u64,
    /// Pairs without a direct edge but with a two-leg path.
    pub bridge_pairs: u64,
    pub improvement_insights: u64,
    pub bridge_insights: u64,
}

/// Counts pairs and computes the best-per-pair histogram in one streaming pass.
pub fn census(graph: &LatencyGraph, threshold_pct: f64, bucket_width_pct: f64) -> (DetourCensus, ImprovementHistogram) {
    let n = graph.node_count();
    let per_source: Vec<(DetourCensus, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![f64::NAN; n], vec![f64::NEG_INFINITY; n], vec![false; n]),
            |(direct, best_pct, bridged), s| {
                let mut c = DetourCensus {
                    direct_pairs: graph.out_edges(s).len() as u64,
                    ..DetourCensus::default()
                };
                let mut touched = Vec::new();
                scan_source(graph, s, threshold_pct, direct, |det| match det.improvement_pct() {
                    Some(pct) => {
                        c.improvement_insights += 1;
                        if best_pct[det.destination] == f64::NEG_INFINITY {
                            touched.push(det.destination);
                        }
                        best_pct[det.destination] = best_pct[det.destination].max(pct);
                    }
                    None => {
                        c.bridge_insights += 1;
                        if !bridged[det.destination] {
                            bridged[det.destination] = true;
                            touched.push(det.destination);
                        }
                    }
                });
                let mut best = Vec::new();
                for d in touched {
                    if best_pct[d] > f64::NEG_INFINITY {
                        best.push(best_pct[d]);
                        c.improvable_pairs += 1;
                    }
                    if bridged[d] {
                        c.bridge_pairs += 1;
                    }
                    best_pct[d] = f64::NEG_INFINITY;
                    bridged[d] = false;
                }
                (c, best)
            },
        )
        .collect();

    let mut total = DetourCensus::default();
    let mut histogram = ImprovementHistogram::new(bucket_width_pct);
    for (c, best) in per_source {
        total.direct_pairs += c.direct_pairs;
        total.improvable_pairs += c.improvable_pairs;
        total.bridge_pairs += c.bridge_pairs;
        total.improvement_insights += c.improvement_insights;
        total.bridge_insights += c.bridge_insights;
        for pct in best {
            histogram.add(pct);
        }
    }
    (total, histogram)
}

/// Pair counts per improvement bucket. Each source-destination pair is
/// counted once, at its best detour's improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementHistogram {
    bucket_width_pct: f64,
    counts: BTreeMap<i64, u64>,
}

impl ImprovementHistogram {
    pub fn new(bucket_width_pct: f64) -> Self {
        assert!(
            bucket_width_pct.is_finite() && bucket_width_pct > 0.0,
            "bucket width must be positive"
        );
        Self {
            bucket_width_pct,
            counts: BTreeMap::new(),
        }
    }

    pub fn bucket_width_pct(&self) -> f64 {
        self.bucket_width_pct
    }

    /// Adds one pair's best improvement.
    pub fn add(&mut self, improvement_pct: f64) {
        let index = (improvement_pct / self.bucket_width_pct).floor() as i64;
        *self.counts.entry(index).or_default() += 1;
    }

    /// `(bucket lower bound, pair count)` in ascending order.
    pub fn buckets(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.counts
            .iter()
            .map(|(i, c)| (*i as f64 * self.bucket_width_pct, *c))
    }

    /// `(bucket lower bound, pairs at or above it)` in ascending order.
    pub fn cumulative(&self) -> Vec<(f64, u64)> {
        let mut running = self.total_pairs();
        self.buckets()
            .map(|(b, c)| {
                let at_or_above = running;
                running -= c;
                (b, at_or_above)
            })
            .collect()
    }

    pub fn count(&self, bucket_pct: f64) -> u64 {
        let index = (bucket_pct / self.bucket_width_pct).round() as i64;
        self.counts.get(&index).copied().unwrap_or(0)
    }

    pub fn total_pairs(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Writes `bucket_pct,pair_count`, per bucket or cumulative.
    pub fn write_csv<W: Write>(&self, writer: W, cumulative: bool) -> io::Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["bucket_pct", "pair_count"])?;
        let rows: Vec<(f64, u64)> = if cumulative { self.cumulative() } else { self.buckets().collect() };
        for (bucket, count) in rows {
            csv.write_record([fmt_fixed(bucket, 2), count.to_string()])?;
        }
        csv.flush()
    }
}

/// Builds the best-per-pair histogram from improvement insights; bridges
/// are ignored.
pub fn improvement_histogram<'a, I>(insights: I, bucket_width_pct: f64) -> ImprovementHistogram
where
    I: IntoIterator<Item = &'a DetourInsight>,
{
    let mut best: HashMap<(&EndpointKey, &EndpointKey), f64> = HashMap::new();
    for insight in insights {
        if insight.kind != InsightKind::Improvement {
            continue;
        }
        let Some(pct) = insight.improvement_pct else { continue };
        best.entry((&insight.source, &insight.destination))
            .and_modify(|b| *b = b.max(pct))
            .or_insert(pct);
    }
    let mut histogram = ImprovementHistogram::new(bucket_width_pct);
    for pct in best.into_values() {
        histogram.add(pct);
    }
    histogram
}

/// Report order: improvements by descending percentage, then bridges by
/// ascending overlay RTT; ties by source, via, destination.
pub fn sort_for_report(insights: &mut [DetourInsight]) {
    insights.sort_by(|a, b| {
        let primary = match (a.improvement_pct, b.improvement_pct) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.overlay_rtt_ms.total_cmp(&b.overlay_rtt_ms),
        };
        primary
            .then_with(|| a.source.cmp(&b.source))
            .then_with(|| a.via.cmp(&b.via))
            .then_with(|| a.destination.cmp(&b.destination))
    });
}

/// Insight CSV: absent values are empty cells, RTTs have 3 decimals and
/// percentages 2.
pub fn write_insights_csv<'a, W, I>(writer: W, insights: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a DetourInsight>,
{
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(INSIGHT_HEADER)?;
    for i in insights {
        csv.write_record([
            i.source.to_string(),
            i.via.to_string(),
            i.destination.to_string(),
            fmt_fixed(i.overlay_rtt_ms, 3),
            fmt_opt(i.direct_rtt_ms, 3),
            fmt_opt(i.improvement_ms, 3),
            fmt_opt(i.improvement_pct, 2),
            i.kind.to_string(),
        ])?;
    }
    csv.flush()
}
