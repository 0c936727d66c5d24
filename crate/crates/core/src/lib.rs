//! Overlay latency analysis for ping measurement feeds.
//!
//! The pipeline turns raw ping results into a directed latency graph,
//! searches it for one-relay detours that beat the direct route, annotates
//! findings with locations, and compares composed overlay RTT distributions
//! against direct ones. Traceroute captures can be checked for whether
//! their paths cross a given city.
//!
//! ```
//! use overlay_latency::{build_graph, enumerate_detours, parse_result_line};
//!
//! let lines = [
//!     "m1,a,b,4,Stopped,1680000000,10,10,10",
//!     "m1,b,c,4,Stopped,1680000000,10,10,10",
//!     "m1,a,c,4,Stopped,1680000000,50,50,50",
//! ];
//! let records = lines.iter().map(|l| parse_result_line(l).unwrap());
//! let graph = build_graph(records);
//! let detours = enumerate_detours(&graph, 1.0);
//! assert_eq!(detours.len(), 1);
//! assert_eq!(detours[0].improvement_pct, Some(60.0));
//! ```

pub mod detour;
pub mod endpoint;
pub mod geo;
pub mod graph;
pub mod ingest;
pub mod report;
pub mod stats;
pub mod traceroute;

pub use detour::{best_detour, enumerate_detours, DetourInsight, InsightKind};
pub use endpoint::{EndpointKey, EndpointKind};
pub use geo::{GeoCache, GeoProvider, GeoRecord, GeoResolver};
pub use graph::{build_graph, GraphBuilder, LatencyEdge, LatencyGraph};
pub use ingest::{parse_result_line, FilterSpec, PingRecord};
pub use report::PipelineConfig;
pub use stats::{compare, compose, summarize, OverlayPath, RttSummary};
pub use traceroute::{detect_city, parse_traceroute, ttl_hop_estimate, CitySpec, Verdict};
