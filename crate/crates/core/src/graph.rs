//! Directed latency graph built from cleaned ping samples.
//!
//! Edge weights use two-level averaging: samples are averaged within each
//! measurement, then the per-measurement means are averaged. Sums are taken
//! over sorted values so the result does not depend on input order.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::endpoint::EndpointKey;
use crate::ingest::PingRecord;
use crate::report::fmt_fixed;

pub const SNAPSHOT_HEADER: [&str; 5] = ["source", "destination", "rtt_ms", "sample_count", "measurement_count"];

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyEdge {
    pub source: EndpointKey,
    pub destination: EndpointKey,
    pub rtt_ms: f64,
    pub sample_count: u64,
    pub measurement_count: u64,
}

/// Outgoing edge in the adjacency index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adjacent {
    pub target: usize,
    pub rtt_ms: f64,
    pub sample_count: u64,
    pub measurement_count: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("self edge on {0}")]
    SelfEdge(EndpointKey),
    #[error("edge {0} -> {1} has invalid rtt {2}")]
    InvalidRtt(EndpointKey, EndpointKey, f64),
    #[error("edge {0} -> {1} has invalid counts (samples {2}, measurements {3})")]
    InvalidCounts(EndpointKey, EndpointKey, u64, u64),
    #[error("duplicate edge {0} -> {1}")]
    Duplicate(EndpointKey, EndpointKey),
}

/// Immutable directed graph. Nodes are indexed in key order and each
/// node's outgoing edges are sorted by target index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatencyGraph {
    nodes: Vec<EndpointKey>,
    index: HashMap<EndpointKey, usize>,
    out: Vec<Vec<Adjacent>>,
}

impl LatencyGraph {
    /// Builds a graph from explicit edges. Nodes are the edge endpoints.
    pub fn from_edges<I>(edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = LatencyEdge>,
    {
        let edges: Vec<LatencyEdge> = edges.into_iter().collect();
        for e in &edges {
            if e.source == e.destination {
                return Err(GraphError::SelfEdge(e.source.clone()));
            }
            if !(e.rtt_ms.is_finite() && e.rtt_ms > 0.0) {
                return Err(GraphError::InvalidRtt(e.source.clone(), e.destination.clone(), e.rtt_ms));
            }
            if e.measurement_count < 1 || e.sample_count < e.measurement_count {
                return Err(GraphError::InvalidCounts(
                    e.source.clone(),
                    e.destination.clone(),
                    e.sample_count,
                    e.measurement_count,
                ));
            }
        }
        let mut nodes: Vec<EndpointKey> = edges
            .iter()
            .flat_map(|e| [e.source.clone(), e.destination.clone()])
            .collect();
        nodes.sort();
        nodes.dedup();
        let index: HashMap<EndpointKey, usize> = nodes.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
        let mut out = vec![Vec::new(); nodes.len()];
        for e in edges {
            out[index[&e.source]].push(Adjacent {
                target: index[&e.destination],
                rtt_ms: e.rtt_ms,
                sample_count: e.sample_count,
                measurement_count: e.measurement_count,
            });
        }
        for (s, list) in out.iter_mut().enumerate() {
            list.sort_by_key(|a| a.target);
            if let Some(w) = list.windows(2).find(|w| w[0].target == w[1].target) {
                return Err(GraphError::Duplicate(nodes[s].clone(), nodes[w[0].target].clone()));
            }
        }
        Ok(Self { nodes, index, out })
    }

    /// Shorthand for hand-built graphs: one sample, one measurement per edge.
    pub fn from_rtts<'a, I>(edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (&'a EndpointKey, &'a EndpointKey, f64)>,
    {
        Self::from_edges(edges.into_iter().map(|(s, d, rtt_ms)| LatencyEdge {
            source: s.clone(),
            destination: d.clone(),
            rtt_ms,
            sample_count: 1,
            measurement_count: 1,
        }))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    /// Nodes in key order; position is the node index.
    pub fn nodes(&self) -> &[EndpointKey] {
        &self.nodes
    }

    pub fn node_index(&self, key: &EndpointKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn node(&self, index: usize) -> &EndpointKey {
        &self.nodes[index]
    }

    pub fn out_edges(&self, index: usize) -> &[Adjacent] {
        &self.out[index]
    }

    pub fn edge_by_index(&self, source: usize, destination: usize) -> Option<&Adjacent> {
        let list = &self.out[source];
        list.binary_search_by_key(&destination, |a| a.target).ok().map(|i| &list[i])
    }

    /// Aggregated RTT, or `None` when no connectivity was observed.
    pub fn edge_rtt(&self, source: &EndpointKey, destination: &EndpointKey) -> Option<f64> {
        let s = self.node_index(source)?;
        let d = self.node_index(destination)?;
        self.edge_by_index(s, d).map(|a| a.rtt_ms)
    }

    pub fn edge(&self, source: &EndpointKey, destination: &EndpointKey) -> Option<LatencyEdge> {
        let s = self.node_index(source)?;
        let d = self.node_index(destination)?;
        self.edge_by_index(s, d).map(|a| self.materialize(s, a))
    }

    /// All edges ordered by (source, destination).
    pub fn edges(&self) -> impl Iterator<Item = LatencyEdge> + '_ {
        self.out
            .iter()
            .enumerate()
            .flat_map(move |(s, list)| list.iter().map(move |a| self.materialize(s, a)))
    }

    fn materialize(&self, s: usize, a: &Adjacent) -> LatencyEdge {
        LatencyEdge {
            source: self.nodes[s].clone(),
            destination: self.nodes[a.target].clone(),
            rtt_ms: a.rtt_ms,
            sample_count: a.sample_count,
            measurement_count: a.measurement_count,
        }
    }

    /// Writes the snapshot CSV; RTTs are rendered with 3 decimals.
    pub fn write_snapshot<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(SNAPSHOT_HEADER)?;
        for e in self.edges() {
            csv.write_record([
                e.source.to_string(),
                e.destination.to_string(),
                fmt_fixed(e.rtt_ms, 3),
                e.sample_count.to_string(),
                e.measurement_count.to_string(),
            ])?;
        }
        csv.flush()
    }

    pub fn read_snapshot<R: Read>(reader: R) -> Result<Self, SnapshotError> {
        let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = csv.headers().map_err(|e| SnapshotError::new(1, e.to_string()))?;
        if header.iter().collect::<Vec<_>>() != SNAPSHOT_HEADER {
            return Err(SnapshotError::new(1, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
        }
        let mut edges = Vec::new();
        for (i, row) in csv.records().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| SnapshotError::new(line, e.to_string()))?;
            let field = |j: usize| row.get(j).unwrap_or("");
            let key = |j: usize| EndpointKey::infer(field(j)).map_err(|e| SnapshotError::new(line, e.to_string()));
            let number = |j: usize| {
                field(j)
                    .parse::<u64>()
                    .map_err(|_| SnapshotError::new(line, format!("invalid {} {:?}", SNAPSHOT_HEADER[j], field(j))))
            };
            edges.push(LatencyEdge {
                source: key(0)?,
                destination: key(1)?,
                rtt_ms: field(2)
                    .parse::<f64>()
                    .map_err(|_| SnapshotError::new(line, format!("invalid rtt_ms {:?}", field(2))))?,
                sample_count: number(3)?,
                measurement_count: number(4)?,
            });
        }
        Self::from_edges(edges).map_err(|e| SnapshotError::new(0, e.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("snapshot line {line}: {reason}")]
pub struct SnapshotError {
    pub line: usize,
    pub reason: String,
}

impl SnapshotError {
    fn new(line: usize, reason: impl Into<String>) -> Self {
        Self {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub accepted: u64,
    pub skipped_no_data: u64,
    pub skipped_self_pair: u64,
}

/// Partial aggregation state. Builders merge associatively, so feeds can be
/// aggregated per file in parallel and combined afterwards.
#[derive(Debug, Clone, Default)]
pub struct GraphBuilder {
    pairs: HashMap<(EndpointKey, EndpointKey), BTreeMap<String, Vec<f64>>>,
    stats: BuildStats,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, record: PingRecord) {
        if record.source == record.destination {
            self.stats.skipped_self_pair += 1;
            return;
        }
        let Ok(rtt) = record.representative_rtt() else {
            self.stats.skipped_no_data += 1;
            return;
        };
        self.stats.accepted += 1;
        self.pairs
            .entry((record.source, record.destination))
            .or_default()
            .entry(record.measurement_id)
            .or_default()
            .push(rtt);
    }

    pub fn merge(&mut self, other: GraphBuilder) {
        for (pair, measurements) in other.pairs {
            let slot = self.pairs.entry(pair).or_default();
            for (id, mut samples) in measurements {
                slot.entry(id).or_default().append(&mut samples);
            }
        }
        self.stats.accepted += other.stats.accepted;
        self.stats.skipped_no_data += other.stats.skipped_no_data;
        self.stats.skipped_self_pair += other.stats.skipped_self_pair;
    }

    pub fn stats(&self) -> BuildStats {
        self.stats
    }

    pub fn build(self) -> LatencyGraph {
        let edges = self.pairs.into_iter().map(|((source, destination), measurements)| {
            let measurement_count = measurements.len() as u64;
            let mut sample_count = 0u64;
            let mut means: Vec<f64> = measurements
                .into_values()
                .map(|mut samples| {
                    sample_count += samples.len() as u64;
                    order_free_mean(&mut samples)
                })
                .collect();
            LatencyEdge {
                source,
                destination,
                rtt_ms: order_free_mean(&mut means),
                sample_count,
                measurement_count,
            }
        });
        LatencyGraph::from_edges(edges).expect("builder only produces valid edges")
    }
}

/// Mean over sorted values, clamped to the value range so that rounding
/// never pushes it outside [min, max].
fn order_free_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let sum: f64 = values.iter().sum();
    let mean = sum / values.len() as f64;
    mean.clamp(values[0], values[values.len() - 1])
}

/// Aggregates cleaned records into a graph. Records without runs and
/// self-pairs are skipped; use [`GraphBuilder`] to see how many.
pub fn build_graph<I>(records: I) -> LatencyGraph
where
    I: IntoIterator<Item = PingRecord>,
{
    let mut builder = GraphBuilder::new();
    for record in records {
        builder.add(record);
    }
    builder.build()
}
