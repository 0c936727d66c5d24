//! Ping measurement ingestion.
//!
//! Two line formats are accepted, detected per line:
//!
//! * JSON objects following the public ping result layout (`msm_id`,
//!   `prb_id`, `from`, `dst_addr`, `af`, `timestamp`, `result: [{rtt}, ...]`),
//!   optionally extended with `status`, `start_time`, `dst_prb_id`,
//!   `src_region` and `dst_region`;
//! * plain CSV rows `measurement_id,source,destination,af,status,start_time,rtt1,rtt2,rtt3`
//!   where an empty RTT cell is a lost run.
//!
//! Records are cleaned with [`RecordFilter`] and reduced to one value per
//! sample with [`representative_rtt`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead};
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::endpoint::EndpointKey;

/// Number of runs kept per sample; later entries of a longer result array are ignored.
pub const MAX_RUNS: usize = 3;

pub const CSV_HEADER: &str = "measurement_id,source,destination,af,status,start_time,rtt1,rtt2,rtt3";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementStatus {
    Stopped,
    Ongoing,
    Other,
}

impl MeasurementStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stopped => "stopped",
            Self::Ongoing => "ongoing",
            Self::Other => "other",
        }
    }

    fn from_text(text: &str) -> Self {
        match text.trim().to_ascii_lowercase().as_str() {
            "stopped" => Self::Stopped,
            "ongoing" => Self::Ongoing,
            _ => Self::Other,
        }
    }
}

impl FromStr for MeasurementStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stopped" => Ok(Self::Stopped),
            "ongoing" => Ok(Self::Ongoing),
            "other" => Ok(Self::Other),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

impl fmt::Display for MeasurementStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One ping sample: up to three runs between a source and a destination.
#[derive(Debug, Clone, PartialEq)]
pub struct PingRecord {
    pub measurement_id: String,
    pub source: EndpointKey,
    pub destination: EndpointKey,
    pub address_family: u8,
    pub status: MeasurementStatus,
    pub start_time: Option<DateTime<Utc>>,
    pub source_region: Option<String>,
    pub destination_region: Option<String>,
    /// Successful runs only, in arrival order. Lost runs are not stored.
    pub rtt_runs: Vec<f64>,
}

impl PingRecord {
    pub fn representative_rtt(&self) -> Result<f64, NoDataError> {
        representative_rtt(&self.rtt_runs)
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("sample has no successful runs")]
pub struct NoDataError;

/// Reduces the runs of one sample to a single RTT: median of three, mean of
/// two, or the single run itself.
pub fn representative_rtt(runs: &[f64]) -> Result<f64, NoDataError> {
    let mut sorted = [0.0f64; MAX_RUNS];
    let n = runs.len().min(MAX_RUNS);
    sorted[..n].copy_from_slice(&runs[..n]);
    let sorted = &mut sorted[..n];
    sorted.sort_by(f64::total_cmp);
    match sorted {
        [] => Err(NoDataError),
        [only] => Ok(*only),
        [a, b] => Ok((*a + *b) / 2.0),
        [_, mid, _] => Ok(*mid),
        _ => unreachable!(),
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("byte {offset}: {reason}")]
pub struct ParseError {
    pub offset: usize,
    pub reason: String,
}

impl ParseError {
    fn new(offset: usize, reason: impl Into<String>) -> Self {
        Self {
            offset,
            reason: reason.into(),
        }
    }
}

/// Which identifier becomes the graph node for JSON records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Source probe id, destination probe id (`dst_prb_id`) when present.
    Probe,
    /// Source address (`from`) and destination address (`dst_addr`).
    #[default]
    Ip,
}

/// Parses one record at IP granularity.
pub fn parse_result_line(line: &str) -> Result<PingRecord, ParseError> {
    parse_result_line_with(line, Granularity::Ip)
}

pub fn parse_result_line_with(line: &str, granularity: Granularity) -> Result<PingRecord, ParseError> {
    let lead = line.len() - line.trim_start().len();
    let body = line.trim();
    if body.is_empty() {
        return Err(ParseError::new(0, "empty line"));
    }
    if body.starts_with('{') {
        parse_json(body, granularity).map_err(|e| ParseError::new(e.offset + lead, e.reason))
    } else {
        parse_csv(body).map_err(|e| ParseError::new(e.offset + lead, e.reason))
    }
}

#[derive(Deserialize)]
struct RawRun {
    rtt: Option<f64>,
}

#[derive(Deserialize)]
struct RawPing {
    msm_id: Option<Value>,
    prb_id: Option<u64>,
    from: Option<String>,
    dst_addr: Option<String>,
    dst_name: Option<String>,
    dst_prb_id: Option<u64>,
    af: Option<u8>,
    timestamp: Option<i64>,
    start_time: Option<Value>,
    status: Option<Value>,
    src_region: Option<String>,
    dst_region: Option<String>,
    result: Option<Vec<Value>>,
}

fn parse_json(body: &str, granularity: Granularity) -> Result<PingRecord, ParseError> {
    let raw: RawPing = serde_json::from_str(body).map_err(|e| {
        if e.classify() == serde_json::error::Category::Eof {
            ParseError::new(body.len(), "unterminated record")
        } else {
            ParseError::new(byte_offset(body, e.line(), e.column()), e.to_string())
        }
    })?;

    let measurement_id = match raw.msm_id {
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::String(s)) => s,
        _ => return Err(ParseError::new(0, "missing msm_id")),
    };

    let source_ip = match raw.from.as_deref().filter(|s| !s.is_empty()) {
        Some(text) => Some(EndpointKey::ip(text).map_err(|e| ParseError::new(0, e.to_string()))?),
        None => None,
    };
    let source_probe = raw.prb_id.map(EndpointKey::probe);
    let source = match granularity {
        Granularity::Probe => source_probe.or(source_ip),
        Granularity::Ip => source_ip.or(source_probe),
    }
    .ok_or_else(|| ParseError::new(0, "missing source"))?;

    let dst_text = raw
        .dst_addr
        .as_deref()
        .filter(|s| !s.is_empty())
        .or(raw.dst_name.as_deref().filter(|s| !s.is_empty()));
    let destination_ip = match dst_text {
        Some(text) => Some(EndpointKey::ip(text).map_err(|e| ParseError::new(0, e.to_string()))?),
        None => None,
    };
    let destination_probe = raw.dst_prb_id.map(EndpointKey::probe);
    let destination = match granularity {
        Granularity::Probe => destination_probe.or(destination_ip),
        Granularity::Ip => destination_ip.or(destination_probe),
    }
    .ok_or_else(|| ParseError::new(0, "missing destination"))?;

    let status = match raw.status {
        None | Some(Value::Null) => MeasurementStatus::Other,
        Some(Value::String(s)) => MeasurementStatus::from_text(&s),
        Some(Value::Object(map)) => map
            .get("name")
            .and_then(Value::as_str)
            .map(MeasurementStatus::from_text)
            .unwrap_or(MeasurementStatus::Other),
        Some(_) => return Err(ParseError::new(0, "status must be a string or object")),
    };

    let start_time = match raw.start_time {
        None | Some(Value::Null) => None,
        Some(Value::Number(n)) => {
            let secs = n.as_i64().ok_or_else(|| ParseError::new(0, "start_time out of range"))?;
            Some(unix_time(secs).map_err(|r| ParseError::new(0, r))?)
        }
        Some(Value::String(s)) => Some(parse_time(&s).map_err(|r| ParseError::new(0, r))?),
        Some(_) => return Err(ParseError::new(0, "start_time must be a number or string")),
    };
    let start_time = match (start_time, raw.timestamp) {
        (Some(t), _) => Some(t),
        (None, Some(secs)) => Some(unix_time(secs).map_err(|r| ParseError::new(0, r))?),
        (None, None) => None,
    };

    let mut rtt_runs = Vec::with_capacity(MAX_RUNS);
    for run in raw.result.unwrap_or_default().into_iter().take(MAX_RUNS) {
        // {"x":"*"} and {"error":..} entries are lost runs.
        if let Ok(RawRun { rtt: Some(rtt) }) = serde_json::from_value::<RawRun>(run) {
            if rtt.is_finite() && rtt > 0.0 {
                rtt_runs.push(rtt);
            }
        }
    }

    Ok(PingRecord {
        measurement_id,
        source,
        destination,
        address_family: raw.af.unwrap_or(4),
        status,
        start_time,
        source_region: raw.src_region.filter(|s| !s.is_empty()),
        destination_region: raw.dst_region.filter(|s| !s.is_empty()),
        rtt_runs,
    })
}

fn byte_offset(body: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (i, l) in body.split('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(body.len());
        }
        offset += l.len() + 1;
    }
    body.len()
}

fn parse_csv(body: &str) -> Result<PingRecord, ParseError> {
    let mut cells: Vec<(usize, &str)> = Vec::with_capacity(9);
    let mut start = 0;
    for (i, b) in body.bytes().enumerate() {
        if b == b',' {
            cells.push((start, &body[start..i]));
            start = i + 1;
        }
    }
    cells.push((start, &body[start..]));
    if cells.len() < 6 {
        return Err(ParseError::new(body.len(), "unterminated record"));
    }
    if cells.len() > 9 {
        return Err(ParseError::new(cells[9].0, "too many fields"));
    }

    let cell = |i: usize| cells.get(i).map(|(o, s)| (*o, s.trim())).unwrap_or((body.len(), ""));
    let endpoint = |i: usize| {
        let (offset, text) = cell(i);
        EndpointKey::infer(text).map_err(|e| ParseError::new(offset, e.to_string()))
    };

    let (offset, measurement_id) = cell(0);
    if measurement_id.is_empty() {
        return Err(ParseError::new(offset, "missing measurement_id"));
    }
    let source = endpoint(1)?;
    let destination = endpoint(2)?;
    let (offset, af) = cell(3);
    let address_family = af
        .parse::<u8>()
        .map_err(|_| ParseError::new(offset, format!("invalid address family {af:?}")))?;
    let status = MeasurementStatus::from_text(cell(4).1);
    let (offset, time) = cell(5);
    let start_time = if time.is_empty() {
        None
    } else {
        Some(parse_time(time).map_err(|r| ParseError::new(offset, r))?)
    };

    let mut rtt_runs = Vec::with_capacity(MAX_RUNS);
    for i in 6..9 {
        let (offset, text) = cell(i);
        if text.is_empty() {
            continue;
        }
        let rtt = text
            .parse::<f64>()
            .map_err(|_| ParseError::new(offset, format!("invalid rtt {text:?}")))?;
        if !(rtt.is_finite() && rtt > 0.0) {
            return Err(ParseError::new(offset, format!("rtt must be positive, got {text}")));
        }
        rtt_runs.push(rtt);
    }

    Ok(PingRecord {
        measurement_id: measurement_id.to_string(),
        source,
        destination,
        address_family,
        status,
        start_time,
        source_region: None,
        destination_region: None,
        rtt_runs,
    })
}

fn unix_time(secs: i64) -> Result<DateTime<Utc>, String> {
    Utc.timestamp_opt(secs, 0)
        .single()
        .ok_or_else(|| format!("timestamp {secs} out of range"))
}

/// Accepts unix seconds or RFC 3339.
pub fn parse_time(text: &str) -> Result<DateTime<Utc>, String> {
    let text = text.trim();
    if let Ok(secs) = text.parse::<i64>() {
        return unix_time(secs);
    }
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("invalid time {text:?}: {e}"))
}

fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

/// Serializes a record to the JSON line layout accepted by [`parse_result_line`].
pub fn to_json_line(record: &PingRecord) -> String {
    use serde_json::{json, Map};

    let mut obj = Map::new();
    obj.insert("msm_id".into(), json!(record.measurement_id));
    endpoint_json(&mut obj, &record.source, "from", "prb_id");
    endpoint_json(&mut obj, &record.destination, "dst_addr", "dst_prb_id");
    obj.insert("af".into(), json!(record.address_family));
    obj.insert("status".into(), json!(record.status.as_str()));
    if let Some(t) = &record.start_time {
        obj.insert("start_time".into(), json!(format_time(t)));
    }
    if let Some(r) = &record.source_region {
        obj.insert("src_region".into(), json!(r));
    }
    if let Some(r) = &record.destination_region {
        obj.insert("dst_region".into(), json!(r));
    }
    let runs: Vec<Value> = record.rtt_runs.iter().map(|rtt| json!({ "rtt": rtt })).collect();
    obj.insert("result".into(), Value::Array(runs));
    Value::Object(obj).to_string()
}

fn endpoint_json(obj: &mut serde_json::Map<String, Value>, key: &EndpointKey, ip_field: &str, probe_field: &str) {
    use crate::endpoint::EndpointKind;
    match key.kind() {
        EndpointKind::Probe => {
            let id: u64 = key.as_str().parse().expect("probe keys are decimal");
            obj.insert(probe_field.into(), Value::from(id));
        }
        EndpointKind::Ip | EndpointKind::Label => {
            obj.insert(ip_field.into(), Value::from(key.as_str()));
        }
    }
}

/// Serializes a record to the CSV fallback layout. Regions are not carried.
pub fn to_csv_line(record: &PingRecord) -> String {
    let mut line = format!(
        "{},{},{},{},{},{}",
        record.measurement_id,
        record.source,
        record.destination,
        record.address_family,
        record.status,
        record.start_time.as_ref().map(format_time).unwrap_or_default(),
    );
    for i in 0..MAX_RUNS {
        line.push(',');
        if let Some(rtt) = record.rtt_runs.get(i) {
            line.push_str(&rtt.to_string());
        }
    }
    line
}

#[derive(Debug, Error)]
pub enum FeedError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("read error after line {line}: {source}")]
    Io { line: usize, source: io::Error },
}

/// Iterates records of a line-delimited feed, skipping blank lines and CSV
/// header rows. Bad lines are yielded as errors; callers decide whether to skip.
pub fn read_feed<R: BufRead>(reader: R, granularity: Granularity) -> impl Iterator<Item = Result<PingRecord, FeedError>> {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line_no = i + 1;
        let line = match line {
            Ok(line) => line,
            Err(source) => return Some(Err(FeedError::Io { line: line_no, source })),
        };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("measurement_id,") {
            return None;
        }
        Some(
            parse_result_line_with(trimmed, granularity).map_err(|source| FeedError::Parse { line: line_no, source }),
        )
    })
}

/// Per-measurement status/start-time table for feeds that do not carry them inline.
#[derive(Debug, Clone, Default)]
pub struct MeasurementMetadata {
    entries: HashMap<String, (MeasurementStatus, Option<DateTime<Utc>>)>,
}

impl MeasurementMetadata {
    /// Reads `measurement_id,status,start_time` rows (header optional).
    pub fn from_csv<R: io::Read>(reader: R) -> Result<Self, ParseError> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut entries = HashMap::new();
        for (i, row) in csv.records().enumerate() {
            let row = row.map_err(|e| ParseError::new(0, format!("row {}: {e}", i + 1)))?;
            let id = row.get(0).unwrap_or("");
            if id.is_empty() || (i == 0 && id == "measurement_id") {
                continue;
            }
            let status = MeasurementStatus::from_text(row.get(1).unwrap_or(""));
            let start = match row.get(2).filter(|s| !s.is_empty()) {
                Some(t) => Some(parse_time(t).map_err(|r| ParseError::new(0, format!("row {}: {r}", i + 1)))?),
                None => None,
            };
            entries.insert(id.to_string(), (status, start));
        }
        Ok(Self { entries })
    }

    pub fn insert(&mut self, measurement_id: impl Into<String>, status: MeasurementStatus, start: Option<DateTime<Utc>>) {
        self.entries.insert(measurement_id.into(), (status, start));
    }

    /// Overrides status and start time of records whose measurement is listed.
    pub fn apply(&self, record: &mut PingRecord) {
        if let Some((status, start)) = self.entries.get(&record.measurement_id) {
            record.status = *status;
            if start.is_some() {
                record.start_time = *start;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Cleaning rules. Only `address_family` is always enforced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterSpec {
    pub required_status: Option<MeasurementStatus>,
    /// Inclusive lower bound on the measurement start.
    pub min_start_time: Option<DateTime<Utc>>,
    /// Exclusive upper bound on the measurement start.
    pub max_start_time: Option<DateTime<Utc>>,
    pub address_family: u8,
    /// Country codes; both endpoints must resolve into this set.
    pub region_allowlist: Option<BTreeSet<String>>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            required_status: None,
            min_start_time: None,
            max_start_time: None,
            address_family: 4,
            region_allowlist: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DropReason {
    Status,
    StartTime,
    AddressFamily,
    RegionUnresolved,
    RegionDisallowed,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Status => "status",
            Self::StartTime => "start_time",
            Self::AddressFamily => "address_family",
            Self::RegionUnresolved => "region_unresolved",
            Self::RegionDisallowed => "region_disallowed",
        }
    }
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DropCounts(BTreeMap<DropReason, u64>);

impl DropCounts {
    pub fn record(&mut self, reason: DropReason) {
        *self.0.entry(reason).or_default() += 1;
    }

    pub fn get(&self, reason: DropReason) -> u64 {
        self.0.get(&reason).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (DropReason, u64)> + '_ {
        self.0.iter().map(|(r, c)| (*r, *c))
    }

    pub fn merge(&mut self, other: &DropCounts) {
        for (reason, count) in other.iter() {
            *self.0.entry(reason).or_default() += count;
        }
    }
}

/// Resolves an endpoint to a country/region code for the region filter.
pub trait RegionLookup {
    fn region_of(&self, endpoint: &EndpointKey) -> Option<String>;
}

impl RegionLookup for HashMap<EndpointKey, String> {
    fn region_of(&self, endpoint: &EndpointKey) -> Option<String> {
        self.get(endpoint).cloned()
    }
}

/// Applies a [`FilterSpec`] and counts what it drops, by reason.
pub struct RecordFilter<'a> {
    spec: &'a FilterSpec,
    regions: Option<&'a dyn RegionLookup>,
    allow: Option<BTreeSet<String>>,
    counts: DropCounts,
}

impl<'a> RecordFilter<'a> {
    pub fn new(spec: &'a FilterSpec) -> Self {
        let allow = spec
            .region_allowlist
            .as_ref()
            .map(|set| set.iter().map(|r| r.trim().to_ascii_uppercase()).collect());
        Self {
            spec,
            regions: None,
            allow,
            counts: DropCounts::default(),
        }
    }

    pub fn with_regions(mut self, regions: &'a dyn RegionLookup) -> Self {
        self.regions = Some(regions);
        self
    }

    /// The first rule the record violates, if any. Does not count.
    pub fn check(&self, record: &PingRecord) -> Result<(), DropReason> {
        let spec = self.spec;
        if record.address_family != spec.address_family {
            return Err(DropReason::AddressFamily);
        }
        if let Some(status) = spec.required_status {
            if record.status != status {
                return Err(DropReason::Status);
            }
        }
        if spec.min_start_time.is_some() || spec.max_start_time.is_some() {
            let Some(start) = record.start_time else {
                return Err(DropReason::StartTime);
            };
            if spec.min_start_time.is_some_and(|min| start < min) || spec.max_start_time.is_some_and(|max| start >= max) {
                return Err(DropReason::StartTime);
            }
        }
        if let Some(allow) = &self.allow {
            for (key, inline) in [
                (&record.source, &record.source_region),
                (&record.destination, &record.destination_region),
            ] {
                let region = inline.clone().or_else(|| self.regions.and_then(|r| r.region_of(key)));
                match region {
                    None => return Err(DropReason::RegionUnresolved),
                    Some(r) if !allow.contains(&r.trim().to_ascii_uppercase()) => {
                        return Err(DropReason::RegionDisallowed)
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }

    /// Returns whether the record passes, counting it otherwise.
    pub fn admit(&mut self, record: &PingRecord) -> bool {
        match self.check(record) {
            Ok(()) => true,
            Err(reason) => {
                self.counts.record(reason);
                false
            }
        }
    }

    /// Lazily filters a stream, preserving order.
    pub fn filter_iter<'f, I>(&'f mut self, records: I) -> impl Iterator<Item = PingRecord> + use<'f, 'a, I>
    where
        I: IntoIterator<Item = PingRecord>,
        I::IntoIter: 'f,
    {
        records.into_iter().filter(move |r| self.admit(r))
    }

    pub fn counts(&self) -> &DropCounts {
        &self.counts
    }

    pub fn into_counts(self) -> DropCounts {
        self.counts
    }
}

/// Eager convenience wrapper around [`RecordFilter`] without a region table.
pub fn filter_records<I>(records: I, spec: &FilterSpec) -> (Vec<PingRecord>, DropCounts)
where
    I: IntoIterator<Item = PingRecord>,
{
    let mut filter = RecordFilter::new(spec);
    let kept: Vec<_> = filter.filter_iter(records).collect();
    (kept, filter.into_counts())
}
