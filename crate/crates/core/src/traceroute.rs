//! Traceroute text parsing, hop counting, TTL cross-checks and detection
//! of a named city (by default Los Angeles) along the path.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::endpoint::canonical_ip;
use crate::geo::{GeoRecord, GeoResolver};

/// Initial TTLs used by common operating systems.
pub const COMMON_INITIAL_TTLS: [u32; 3] = [64, 128, 255];

pub const REPORT_HEADER: [&str; 4] = ["source_label", "destination", "hop_count", "city_verdict"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracerouteHop {
    pub index: u32,
    /// `None` for a hop that answered no probe.
    pub address: Option<String>,
    pub rdns_name: Option<String>,
    pub rtts_ms: Vec<f64>,
    pub geo: Option<GeoRecord>,
}

impl TracerouteHop {
    pub fn is_unresponsive(&self) -> bool {
        self.address.is_none() && self.rdns_name.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracerouteTrace {
    pub source_label: String,
    pub destination: String,
    pub destination_address: Option<String>,
    pub hops: Vec<TracerouteHop>,
    pub reached: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {reason}")]
pub struct TraceParseError {
    pub line: usize,
    pub reason: String,
}

fn err(line: usize, reason: impl Into<String>) -> TraceParseError {
    TraceParseError {
        line,
        reason: reason.into(),
    }
}

/// Parses conventional traceroute output. An optional first line
/// `# source_label | destination` names the trace; `traceroute to ...`
/// banners are read for the destination address.
pub fn parse_traceroute(text: &str) -> Result<TracerouteTrace, TraceParseError> {
    let mut source_label = String::new();
    let mut destination = String::new();
    let mut destination_address = None;
    let mut hops: Vec<TracerouteHop> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if hops.is_empty() && source_label.is_empty() {
                if let Some((label, dest)) = comment.split_once('|') {
                    source_label = label.trim().to_string();
                    destination = dest.trim().to_string();
                }
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("traceroute to ").or_else(|| line.strip_prefix("traceroute6 to ")) {
            let mut words = rest.split_whitespace();
            let host = words.next().unwrap_or("").trim_end_matches(',');
            if destination.is_empty() {
                destination = host.to_string();
            }
            destination_address = words
                .next()
                .map(|w| w.trim_end_matches(',').trim_start_matches('(').trim_end_matches(')'))
                .and_then(canonical_ip)
                .or_else(|| canonical_ip(host));
            continue;
        }
        let hop = parse_hop_line(line).map_err(|reason| err(line_no, reason))?;
        if let Some(prev) = hops.last() {
            if hop.index <= prev.index {
                return Err(err(line_no, format!("hop {} does not follow hop {}", hop.index, prev.index)));
            }
        }
        hops.push(hop);
    }

    if hops.is_empty() {
        return Err(err(text.lines().count().max(1), "no hops found"));
    }
    if destination.is_empty() {
        return Err(err(1, "destination unknown: no header or traceroute banner"));
    }

    let reached = hops.last().is_some_and(|last| {
        let by_address = match (&destination_address, &last.address) {
            (Some(want), Some(got)) => want == got,
            _ => false,
        };
        let by_name = [&last.rdns_name, &last.address]
            .into_iter()
            .flatten()
            .any(|n| n.eq_ignore_ascii_case(&destination));
        by_address || by_name
    });

    Ok(TracerouteTrace {
        source_label,
        destination,
        destination_address,
        hops,
        reached,
    })
}

fn parse_hop_line(line: &str) -> Result<TracerouteHop, String> {
    let mut words = line.split_whitespace().peekable();
    let first = words.next().unwrap_or("");
    let index: u32 = first
        .parse()
        .map_err(|_| format!("unrecognized line {:?}", truncate(line)))?;
    if index == 0 {
        return Err("hop numbers start at 1".into());
    }

    let mut address = None;
    let mut rdns_name = None;
    let mut rtts_ms = Vec::new();
    let mut probes = 0usize;

    while let Some(word) = words.next() {
        if word == "*" {
            probes += 1;
            continue;
        }
        if word == "ms" || word.starts_with('!') || (word.starts_with('[') && word.ends_with(']')) {
            continue;
        }
        if let Ok(rtt) = word.trim_end_matches("ms").parse::<f64>() {
            if rtt.is_finite() && rtt >= 0.0 {
                rtts_ms.push(rtt);
                probes += 1;
                continue;
            }
        }
        if word.starts_with('(') {
            // stray "(addr)" with no preceding name
            let inner = word.trim_start_matches('(').trim_end_matches(')');
            if address.is_none() {
                address = canonical_ip(inner);
            }
            continue;
        }
        // responder: "name (addr)" or bare "addr"
        let paired = words
            .peek()
            .filter(|w| w.starts_with('(') && w.ends_with(')'))
            .map(|w| w.trim_start_matches('(').trim_end_matches(')').to_string());
        if paired.is_some() {
            words.next();
        }
        if address.is_none() && rdns_name.is_none() {
            match (canonical_ip(word), paired.as_deref().and_then(canonical_ip)) {
                (Some(ip), _) => {
                    address = Some(ip);
                }
                (None, ip) => {
                    if !is_hostname(word) {
                        return Err(format!("unrecognized token {word:?}"));
                    }
                    rdns_name = Some(word.to_string());
                    address = ip;
                }
            }
        }
    }

    if probes == 0 && address.is_none() && rdns_name.is_none() {
        return Err(format!("hop {index} has no responses"));
    }
    Ok(TracerouteHop {
        index,
        address,
        rdns_name,
        rtts_ms,
        geo: None,
    })
}

fn is_hostname(word: &str) -> bool {
    !word.is_empty()
        && word
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'-' | b'_'))
        && word.bytes().any(|b| b.is_ascii_alphabetic())
}

fn truncate(line: &str) -> &str {
    match line.char_indices().nth(40) {
        Some((i, _)) => &line[..i],
        None => line,
    }
}

/// Number of hop lines, unresponsive ones included.
pub fn hop_count(trace: &TracerouteTrace) -> usize {
    trace.hops.len()
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("observed TTL {0} does not map to a hop count")]
pub struct AmbiguousTtl(pub u32);

/// Hop count implied by a received TTL: the smallest common initial TTL at
/// or above the observed value, minus the observed value, plus one (the
/// destination is counted as a hop, as in traceroute output).
pub fn ttl_hop_estimate(observed_ttl: u32) -> Result<u32, AmbiguousTtl> {
    if observed_ttl == 0 || observed_ttl > 255 {
        return Err(AmbiguousTtl(observed_ttl));
    }
    let initial = COMMON_INITIAL_TTLS
        .iter()
        .copied()
        .find(|&t| t >= observed_ttl)
        .ok_or(AmbiguousTtl(observed_ttl))?;
    Ok(initial - observed_ttl + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HopCrossCheck {
    pub trace_hops: usize,
    pub ttl_hops: Option<u32>,
    /// True when both counts exist and differ by at most one.
    pub agrees: bool,
}

pub fn cross_check(trace: &TracerouteTrace, observed_ttl: u32) -> HopCrossCheck {
    let trace_hops = hop_count(trace);
    let ttl_hops = ttl_hop_estimate(observed_ttl).ok();
    HopCrossCheck {
        trace_hops,
        ttl_hops,
        agrees: ttl_hops.is_some_and(|t| (t as i64 - trace_hops as i64).abs() <= 1),
    }
}

/// What to look for. Tokens match the start of a reverse-DNS label or of
/// a `-`-separated piece of one; a token without a trailing `-` must be
/// followed by a digit or the end of the piece ("lax25" matches "lax").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitySpec {
    pub tokens: Vec<String>,
    pub geo_city: Option<String>,
}

impl CitySpec {
    pub fn los_angeles() -> Self {
        Self {
            tokens: vec!["lax".into(), "losangeles".into(), "la-".into()],
            geo_city: Some("Los Angeles".into()),
        }
    }

    pub fn matching_token(&self, rdns_name: &str) -> Option<&str> {
        let name = rdns_name.to_ascii_lowercase();
        for token in &self.tokens {
            let t = token.to_ascii_lowercase();
            if t.is_empty() {
                continue;
            }
            let hit = name.split('.').any(|label| {
                if t.ends_with('-') {
                    label.starts_with(&t) || label.contains(&format!("-{t}"))
                } else {
                    label.split('-').any(|piece| {
                        piece
                            .strip_prefix(t.as_str())
                            .is_some_and(|rest| rest.is_empty() || rest.starts_with(|c: char| c.is_ascii_digit()))
                    })
                }
            });
            if hit {
                return Some(token.as_str());
            }
        }
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Yes,
    No,
    Unknown,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Yes => "Yes",
            Self::No => "No",
            Self::Unknown => "Unknown",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CityDetection {
    pub verdict: Verdict,
    /// (hop index, matched token or geolocated city)
    pub evidence: Vec<(u32, String)>,
}

/// Reverse-DNS tokens are checked first; hop geolocation only when no name
/// matched. With no match, a trace where at least half of the hops are
/// unresponsive or carry neither a name nor a location is `Unknown`.
pub fn detect_city(trace: &TracerouteTrace, spec: &CitySpec) -> CityDetection {
    let mut evidence: Vec<(u32, String)> = trace
        .hops
        .iter()
        .filter_map(|hop| {
            let name = hop.rdns_name.as_deref()?;
            spec.matching_token(name).map(|t| (hop.index, t.to_string()))
        })
        .collect();

    if evidence.is_empty() {
        if let Some(city) = &spec.geo_city {
            evidence = trace
                .hops
                .iter()
                .filter_map(|hop| {
                    let found = hop.geo.as_ref()?.city.as_deref()?;
                    found.eq_ignore_ascii_case(city).then(|| (hop.index, found.to_string()))
                })
                .collect();
        }
    }

    let verdict = if !evidence.is_empty() {
        Verdict::Yes
    } else {
        let unresolved = trace
            .hops
            .iter()
            .filter(|h| {
                h.address.is_none() || (h.rdns_name.is_none() && h.geo.as_ref().is_none_or(|g| g.city.is_none()))
            })
            .count();
        if unresolved * 2 >= trace.hops.len() {
            Verdict::Unknown
        } else {
            Verdict::No
        }
    };
    CityDetection { verdict, evidence }
}

/// Fills `geo` on every hop with an address, using only cached knowledge.
pub fn geolocate_hops(trace: &mut TracerouteTrace, resolver: &GeoResolver) {
    for hop in &mut trace.hops {
        if let Some(addr) = &hop.address {
            hop.geo = resolver.lookup_cached(addr);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceReportRow {
    pub source_label: String,
    pub destination: String,
    pub hop_count: usize,
    pub city_verdict: Verdict,
}

pub fn write_report_csv<'a, W, I>(writer: W, rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TraceReportRow>,
{
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(REPORT_HEADER)?;
    for r in rows {
        csv.write_record([
            r.source_label.clone(),
            r.destination.clone(),
            r.hop_count.to_string(),
            r.city_verdict.to_string(),
        ])?;
    }
    csv.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAMPUS: &str = "\
# UCSD CSE wifi | ieng6.ucsd.edu
traceroute to ieng6.ucsd.edu (132.239.180.101), 30 hops max, 60 byte packets
 1  cse-wifi-gw.ucsd.edu (132.239.8.1)  2.301 ms  2.118 ms  2.094 ms
 2  ebu3b-core.ucsd.edu (132.239.254.33)  2.881 ms  2.802 ms  2.771 ms
 3  * * *
 4  dc-core-2.ucsd.edu (132.239.255.97)  3.912 ms  3.877 ms  3.850 ms
 5  ieng6.ucsd.edu (132.239.180.101)  4.210 ms  4.187 ms  4.152 ms
";

    #[test]
    fn parses_campus_trace() {
        let t = parse_traceroute(CAMPUS).unwrap();
        assert_eq!(t.source_label, "UCSD CSE wifi");
        assert_eq!(t.destination, "ieng6.ucsd.edu");
        assert_eq!(hop_count(&t), 5);
        assert!(t.reached);
        assert!(t.hops[2].is_unresponsive());
        assert_eq!(t.hops[2].index, 3);
        assert_eq!(t.hops[0].rtts_ms, vec![2.301, 2.118, 2.094]);
        assert_eq!(t.hops[0].address.as_deref(), Some("132.239.8.1"));
        assert_eq!(detect_city(&t, &CitySpec::los_angeles()).verdict, Verdict::No);
    }

    #[test]
    fn numeric_and_mixed_responders() {
        let text = "\
traceroute to 8.8.8.8 (8.8.8.8), 30 hops max
 1  192.168.1.1  1.0 ms  1.1 ms  *
 2  a.example.net (10.0.0.1)  5 ms b.example.net (10.0.0.2)  6 ms !H
 3  8.8.8.8  9.0 ms
";
        let t = parse_traceroute(text).unwrap();
        assert_eq!(t.hops[0].rdns_name, None);
        assert_eq!(t.hops[1].rdns_name.as_deref(), Some("a.example.net"));
        assert_eq!(t.hops[1].rtts_ms, vec![5.0, 6.0]);
        assert!(t.reached);
        assert_eq!(t.source_label, "");
    }

    #[test]
    fn garbage_fails_on_first_line() {
        let e = parse_traceroute("hello there\nnot a trace\n").unwrap_err();
        assert_eq!(e.line, 1);
        assert!(parse_traceroute("").is_err());
    }

    #[test]
    fn non_increasing_hops_rejected() {
        let e = parse_traceroute("# a | b\n 1  x.net (1.1.1.1) 1 ms\n 1  y.net (1.1.1.2) 1 ms\n").unwrap_err();
        assert_eq!(e.line, 3);
    }

    #[test]
    fn loopback_single_hop() {
        let t = parse_traceroute("traceroute to localhost (127.0.0.1), 64 hops max\n 1  localhost (127.0.0.1)  0.05 ms\n").unwrap();
        assert_eq!(hop_count(&t), 1);
        assert!(t.reached);
    }

    #[test]
    fn gtt_lax_hop_is_evidence() {
        let text = "\
# SD Downtown wifi | ieng6.ucsd.edu
traceroute to ieng6.ucsd.edu (132.239.180.101), 30 hops max, 60 byte packets
 1  192.168.0.1 (192.168.0.1)  3.1 ms  2.9 ms  3.0 ms
 2  10.20.0.1 (10.20.0.1)  11.2 ms  10.9 ms  11.5 ms
 3  sd-bb1.coxnet.example (68.6.8.1)  12.0 ms  12.3 ms  12.1 ms
 4  * * *
 5  ae12.cr1.san1.example.net (68.1.5.1)  13.5 ms  13.2 ms  13.9 ms
 6  et-0-0-3.cr2.irv1.example.net (68.1.2.9)  15.0 ms  15.4 ms  15.1 ms
 7  lax25.ip4.gtt.net (89.149.180.22)  18.8 ms  18.6 ms  18.9 ms
 8  cenic-gw.ip4.gtt.net (173.205.45.2)  19.2 ms  19.0 ms  19.4 ms
 9  ieng6.ucsd.edu (132.239.180.101)  24.1 ms  24.0 ms  24.3 ms
";
        let t = parse_traceroute(text).unwrap();
        let d = detect_city(&t, &CitySpec::los_angeles());
        assert_eq!(d.verdict, Verdict::Yes);
        assert_eq!(d.evidence, vec![(7, "lax".to_string())]);
    }

    #[test]
    fn token_rules() {
        let la = CitySpec::los_angeles();
        assert_eq!(la.matching_token("lax25.ip4.gtt.net"), Some("lax"));
        assert_eq!(la.matching_token("dc-lax-agg8--lax-agg10-100ge.cenic.net"), Some("lax"));
        assert_eq!(la.matching_token("ae-2-3601.ear4.LosAngeles1.Level3.net"), Some("losangeles"));
        assert_eq!(la.matching_token("la-core-02.example.net"), Some("la-"));
        assert_eq!(la.matching_token("laxmi.example.com"), None);
        assert_eq!(la.matching_token("lajolla-gw.example.net"), None);
        assert_eq!(la.matching_token("sandiego-la.example.net"), None);
    }

    #[test]
    fn geo_fallback_and_unknown() {
        let mut t = parse_traceroute("# x | 9.9.9.9\n 1  * * *\n 2  * * *\n 3  4.4.4.4  5 ms\n 4  9.9.9.9  6 ms\n").unwrap();
        let la = CitySpec::los_angeles();
        assert_eq!(detect_city(&t, &la).verdict, Verdict::Unknown);
        t.hops[2].geo = Some(GeoRecord::new(
            "4.4.4.4",
            crate::geo::GeoFields::new("Los Angeles", "California", "US"),
            crate::geo::GeoSource::Cache,
        ));
        let d = detect_city(&t, &la);
        assert_eq!(d.verdict, Verdict::Yes);
        assert_eq!(d.evidence, vec![(3, "Los Angeles".to_string())]);
    }

    #[test]
    fn ttl_examples() {
        assert_eq!(ttl_hop_estimate(60), Ok(5));
        assert_eq!(ttl_hop_estimate(64), Ok(1));
        assert_eq!(ttl_hop_estimate(0), Err(AmbiguousTtl(0)));
        assert_eq!(ttl_hop_estimate(256), Err(AmbiguousTtl(256)));
        assert_eq!(ttl_hop_estimate(255), Ok(1));
    }

    #[test]
    fn ttl_cross_check() {
        let t = parse_traceroute(CAMPUS).unwrap();
        assert!(cross_check(&t, 60).agrees);
        assert!(cross_check(&t, 59).agrees);
        let far = cross_check(&t, 50);
        assert_eq!(far.ttl_hops, Some(15));
        assert!(!far.agrees);
    }
}
