//! IP geolocation with a persistent CSV cache.
//!
//! Lookups consult the in-memory view of the cache first and fall back to a
//! [`GeoProvider`] on a miss. Provider calls and cache appends go through a
//! single lock; reads only take a shared lock. Reserved address ranges
//! never reach the provider.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detour::DetourInsight;
use crate::endpoint::{parse_ipv4_lenient, EndpointKey, EndpointKind};
use crate::ingest::RegionLookup;

pub const CACHE_HEADER: [&str; 5] = ["ip", "city", "region", "country", "timestamp"];
pub const DEFAULT_MIN_INTERVAL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeoSource {
    Cache,
    Provider,
    StaticFile,
    /// Private, loopback or otherwise non-routable address.
    Reserved,
}

/// What a provider knows about one address.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoFields {
    pub city: Option<String>,
    pub region: Option<String>,
    pub country: Option<String>,
}

impl GeoFields {
    pub fn new(city: &str, region: &str, country: &str) -> Self {
        let some = |s: &str| Some(s.trim().to_string()).filter(|s| !s.is_empty());
        Self {
            city: some(city),
            region: some(region),
            country: some(country),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeoRecord {
    /// Canonical address, or the probe id / label for non-IP endpoints.
    pub ip: String,
    pub city: Option<String>,
    pub region: Option<String>,
    pub country: Option<String>,
    pub source: GeoSource,
}

impl GeoRecord {
    /// A city without a country is dropped to keep records consistent.
    pub fn new(ip: impl Into<String>, fields: GeoFields, source: GeoSource) -> Self {
        let city = if fields.country.is_some() { fields.city } else { None };
        Self {
            ip: ip.into(),
            city,
            region: fields.region,
            country: fields.country,
            source,
        }
    }

    pub fn unknown(ip: impl Into<String>, source: GeoSource) -> Self {
        Self::new(ip, GeoFields::default(), source)
    }

    pub fn is_unknown(&self) -> bool {
        self.city.is_none() && self.region.is_none() && self.country.is_none()
    }

    pub fn fields(&self) -> GeoFields {
        GeoFields {
            city: self.city.clone(),
            region: self.region.clone(),
            country: self.country.clone(),
        }
    }

    /// "City, Region, Country" with unknown parts omitted, or "unknown".
    pub fn place(&self) -> String {
        let parts: Vec<&str> = [&self.city, &self.region, &self.country]
            .into_iter()
            .filter_map(|p| p.as_deref())
            .collect();
        if parts.is_empty() {
            "unknown".to_string()
        } else {
            parts.join(", ")
        }
    }
}

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("invalid IPv4 address {0:?}")]
    InvalidAddress(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("cache line {line}: {reason}")]
    Cache { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reserved IPv4 blocks as (network, prefix length).
pub const RESERVED_V4: [([u8; 4], u8); 15] = [
    ([0, 0, 0, 0], 8),
    ([10, 0, 0, 0], 8),
    ([100, 64, 0, 0], 10),
    ([127, 0, 0, 0], 8),
    ([169, 254, 0, 0], 16),
    ([172, 16, 0, 0], 12),
    ([192, 0, 0, 0], 24),
    ([192, 0, 2, 0], 24),
    ([192, 88, 99, 0], 24),
    ([192, 168, 0, 0], 16),
    ([198, 18, 0, 0], 15),
    ([198, 51, 100, 0], 24),
    ([203, 0, 113, 0], 24),
    ([224, 0, 0, 0], 4),
    ([240, 0, 0, 0], 4),
];

pub fn is_reserved(addr: Ipv4Addr) -> bool {
    let bits = u32::from(addr);
    RESERVED_V4.iter().any(|(net, len)| {
        let mask = u32::MAX << (32 - *len as u32);
        bits & mask == u32::from(Ipv4Addr::from(*net)) & mask
    })
}

pub trait GeoProvider: Send + Sync {
    fn fetch(&self, ip: Ipv4Addr) -> Result<GeoFields, GeoError>;

    /// Source tag for records this provider produces.
    fn source(&self) -> GeoSource {
        GeoSource::Provider
    }
}

/// Knows nothing; keeps runs fully offline.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnknownProvider;

impl GeoProvider for UnknownProvider {
    fn fetch(&self, _ip: Ipv4Addr) -> Result<GeoFields, GeoError> {
        Ok(GeoFields::default())
    }
}

/// Table loaded from a CSV of `ip,city,region,country`.
#[derive(Debug, Clone, Default)]
pub struct StaticFileProvider {
    table: HashMap<String, GeoFields>,
}

impl StaticFileProvider {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, GeoError> {
        let table = read_location_table(reader, "ip")?
            .into_iter()
            .filter_map(|(ip, fields)| crate::endpoint::canonical_ip(&ip).map(|ip| (ip, fields)))
            .collect();
        Ok(Self { table })
    }

    pub fn open(path: &Path) -> Result<Self, GeoError> {
        Self::from_csv(File::open(path)?)
    }
}

impl GeoProvider for StaticFileProvider {
    fn fetch(&self, ip: Ipv4Addr) -> Result<GeoFields, GeoError> {
        Ok(self.table.get(&ip.to_string()).cloned().unwrap_or_default())
    }

    fn source(&self) -> GeoSource {
        GeoSource::StaticFile
    }
}

#[derive(Deserialize)]
struct IpInfoResponse {
    city: Option<String>,
    region: Option<String>,
    country: Option<String>,
    #[serde(default)]
    bogon: bool,
}

/// HTTP provider for ipinfo-style JSON (`city`, `region`, `country`).
/// Requests are spaced at least `min_interval` apart.
pub struct HttpProvider {
    agent: ureq::Agent,
    url_template: String,
    token: Option<String>,
    min_interval: Duration,
    last_request: Mutex<Option<Instant>>,
}

impl HttpProvider {
    /// `url_template` must contain `{ip}`, e.g. `https://ipinfo.io/{ip}/json`.
    pub fn new(url_template: impl Into<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        Self {
            agent,
            url_template: url_template.into(),
            token: None,
            min_interval: DEFAULT_MIN_INTERVAL,
            last_request: Mutex::new(None),
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn with_min_interval(mut self, interval: Duration) -> Self {
        self.min_interval = interval;
        self
    }

    fn pace(&self) {
        let mut last = self.last_request.lock().expect("rate limiter poisoned");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl GeoProvider for HttpProvider {
    fn fetch(&self, ip: Ipv4Addr) -> Result<GeoFields, GeoError> {
        self.pace();
        let url = self.url_template.replace("{ip}", &ip.to_string());
        let mut request = self.agent.get(&url);
        if let Some(token) = &self.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = request.call().map_err(|e| GeoError::Provider(e.to_string()))?;
        let body: IpInfoResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| GeoError::Provider(e.to_string()))?;
        if body.bogon {
            return Ok(GeoFields::default());
        }
        Ok(GeoFields::new(
            body.city.as_deref().unwrap_or(""),
            body.region.as_deref().unwrap_or(""),
            body.country.as_deref().unwrap_or(""),
        ))
    }
}

/// Append-only `ip,city,region,country,timestamp` file; the last entry
/// for an address wins.
#[derive(Debug, Clone, Default)]
pub struct GeoCache {
    entries: HashMap<String, (GeoFields, Option<DateTime<Utc>>)>,
}

impl GeoCache {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, GeoError> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut entries = HashMap::new();
        for (i, row) in csv.records().enumerate() {
            let line = i + 1;
            let row = row.map_err(|e| GeoError::Cache {
                line,
                reason: e.to_string(),
            })?;
            let ip = row.get(0).unwrap_or("");
            if ip.is_empty() || (line == 1 && ip == "ip") {
                continue;
            }
            let ip = crate::endpoint::canonical_ip(ip).ok_or_else(|| GeoError::Cache {
                line,
                reason: format!("invalid address {ip:?}"),
            })?;
            let field = |j| row.get(j).unwrap_or("");
            let ts = match field(4) {
                "" => None,
                t => Some(crate::ingest::parse_time(t).map_err(|reason| GeoError::Cache { line, reason })?),
            };
            entries.insert(ip, (GeoFields::new(field(1), field(2), field(3)), ts));
        }
        Ok(Self { entries })
    }

    /// Loads a cache file; a missing file is an empty cache.
    pub fn load(path: &Path) -> Result<Self, GeoError> {
        match File::open(path) {
            Ok(f) => Self::from_csv(f),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn get(&self, ip: &str) -> Option<GeoRecord> {
        self.entries
            .get(ip)
            .map(|(fields, _)| GeoRecord::new(ip, fields.clone(), GeoSource::Cache))
    }

    pub fn timestamp(&self, ip: &str) -> Option<DateTime<Utc>> {
        self.entries.get(ip).and_then(|(_, t)| *t)
    }

    pub fn insert(&mut self, ip: impl Into<String>, fields: GeoFields, at: DateTime<Utc>) {
        self.entries.insert(ip.into(), (fields, Some(at)));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the whole cache, sorted by address.
    pub fn write_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(CACHE_HEADER)?;
        let mut ips: Vec<&String> = self.entries.keys().collect();
        ips.sort();
        for ip in ips {
            let (fields, ts) = &self.entries[ip];
            csv.write_record(cache_row(ip, fields, ts.as_ref()))?;
        }
        csv.flush()
    }
}

fn cache_row(ip: &str, fields: &GeoFields, ts: Option<&DateTime<Utc>>) -> [String; 5] {
    [
        ip.to_string(),
        fields.city.clone().unwrap_or_default(),
        fields.region.clone().unwrap_or_default(),
        fields.country.clone().unwrap_or_default(),
        ts.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true)).unwrap_or_default(),
    ]
}

/// Appends one entry, writing the header first if the file is new or empty.
pub fn append_cache_entry(path: &Path, ip: &str, fields: &GeoFields, at: DateTime<Utc>) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let fresh = file.metadata()?.len() == 0;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(&mut file);
    if fresh {
        csv.write_record(CACHE_HEADER)?;
    }
    csv.write_record(cache_row(ip, fields, Some(&at)))?;
    csv.flush()
}

struct WriterState {
    cache_path: Option<PathBuf>,
}

/// Cache-first resolver. Safe to share across annotation workers.
pub struct GeoResolver {
    known: RwLock<HashMap<String, GeoRecord>>,
    writer: Mutex<WriterState>,
    provider: Option<Box<dyn GeoProvider>>,
    provider_calls: AtomicU64,
}

impl GeoResolver {
    pub fn new(cache: GeoCache, provider: Box<dyn GeoProvider>) -> Self {
        Self::build(cache, Some(provider), None)
    }

    /// Resolver that never calls a provider; misses resolve to unknown.
    pub fn cache_only(cache: GeoCache) -> Self {
        Self::build(cache, None, None)
    }

    /// Loads `path` and appends every new provider answer to it.
    pub fn with_cache_file(path: impl Into<PathBuf>, provider: Box<dyn GeoProvider>) -> Result<Self, GeoError> {
        let path = path.into();
        let cache = GeoCache::load(&path)?;
        Ok(Self::build(cache, Some(provider), Some(path)))
    }

    fn build(cache: GeoCache, provider: Option<Box<dyn GeoProvider>>, cache_path: Option<PathBuf>) -> Self {
        let known = cache
            .entries
            .keys()
            .filter_map(|ip| cache.get(ip).map(|r| (ip.clone(), r)))
            .collect();
        Self {
            known: RwLock::new(known),
            writer: Mutex::new(WriterState { cache_path }),
            provider,
            provider_calls: AtomicU64::new(0),
        }
    }

    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::Relaxed)
    }

    /// Resolves an IPv4 address. Only malformed input is an error; provider
    /// failures come back as a record with unknown fields.
    pub fn lookup(&self, ip: &str) -> Result<GeoRecord, GeoError> {
        let octets = parse_ipv4_lenient(ip.trim()).ok_or_else(|| GeoError::InvalidAddress(ip.to_string()))?;
        let addr = Ipv4Addr::from(octets);
        let canonical = addr.to_string();
        if is_reserved(addr) {
            return Ok(GeoRecord::unknown(canonical, GeoSource::Reserved));
        }
        if let Some(hit) = self.known.read().expect("geo map poisoned").get(&canonical) {
            return Ok(hit.clone());
        }

        let state = self.writer.lock().expect("geo writer poisoned");
        if let Some(hit) = self.known.read().expect("geo map poisoned").get(&canonical) {
            return Ok(hit.clone());
        }
        let record = match &self.provider {
            None => GeoRecord::unknown(canonical.clone(), GeoSource::Cache),
            Some(provider) => {
                self.provider_calls.fetch_add(1, Ordering::Relaxed);
                match provider.fetch(addr) {
                    Ok(fields) => {
                        let record = GeoRecord::new(canonical.clone(), fields, provider.source());
                        if let Some(path) = &state.cache_path {
                            if let Err(e) = append_cache_entry(path, &canonical, &record.fields(), Utc::now()) {
                                log::warn!("could not persist geo cache entry for {canonical}: {e}");
                            }
                        }
                        record
                    }
                    Err(e) => {
                        log::warn!("geolocation of {canonical} failed: {e}");
                        GeoRecord::unknown(canonical.clone(), provider.source())
                    }
                }
            }
        };
        self.known
            .write()
            .expect("geo map poisoned")
            .insert(canonical, record.clone());
        drop(state);
        Ok(record)
    }

    /// Only what is already known; never calls the provider.
    pub fn lookup_cached(&self, ip: &str) -> Option<GeoRecord> {
        let canonical = crate::endpoint::canonical_ip(ip)?;
        self.known.read().expect("geo map poisoned").get(&canonical).cloned()
    }

    /// Everything resolved so far, including this session's answers.
    pub fn snapshot(&self) -> GeoCache {
        let now = Utc::now();
        let mut cache = GeoCache::default();
        for (ip, record) in self.known.read().expect("geo map poisoned").iter() {
            cache.insert(ip.clone(), record.fields(), now);
        }
        cache
    }
}

impl RegionLookup for GeoResolver {
    fn region_of(&self, endpoint: &EndpointKey) -> Option<String> {
        match endpoint.kind() {
            EndpointKind::Ip => self.lookup_cached(endpoint.as_str()).and_then(|r| r.country),
            _ => None,
        }
    }
}

fn read_location_table<R: Read>(reader: R, key_column: &str) -> Result<HashMap<String, GeoFields>, GeoError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut table = HashMap::new();
    for (i, row) in csv.records().enumerate() {
        let row = row.map_err(|e| GeoError::Cache {
            line: i + 1,
            reason: e.to_string(),
        })?;
        let key = row.get(0).unwrap_or("");
        if key.is_empty() || (i == 0 && key == key_column) {
            continue;
        }
        let field = |j| row.get(j).unwrap_or("");
        table.insert(key.to_string(), GeoFields::new(field(1), field(2), field(3)));
    }
    Ok(table)
}

/// `probe_id,city,region,country` sidecar for probe-keyed graphs.
#[derive(Debug, Clone, Default)]
pub struct ProbeLocations {
    table: HashMap<String, GeoFields>,
}

impl ProbeLocations {
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, GeoError> {
        Ok(Self {
            table: read_location_table(reader, "probe_id")?,
        })
    }

    pub fn open(path: &Path) -> Result<Self, GeoError> {
        Self::from_csv(File::open(path)?)
    }

    pub fn insert(&mut self, probe: u64, fields: GeoFields) {
        self.table.insert(probe.to_string(), fields);
    }

    pub fn get(&self, probe: &str) -> Option<GeoRecord> {
        self.table
            .get(probe)
            .map(|f| GeoRecord::new(probe, f.clone(), GeoSource::StaticFile))
    }
}

impl RegionLookup for ProbeLocations {
    fn region_of(&self, endpoint: &EndpointKey) -> Option<String> {
        match endpoint.kind() {
            EndpointKind::Probe => self.table.get(endpoint.as_str()).and_then(|f| f.country.clone()),
            _ => None,
        }
    }
}

/// Region lookup that tries probes first, then addresses.
pub struct CombinedRegions<'a> {
    pub probes: Option<&'a ProbeLocations>,
    pub ips: Option<&'a GeoResolver>,
}

impl RegionLookup for CombinedRegions<'_> {
    fn region_of(&self, endpoint: &EndpointKey) -> Option<String> {
        self.probes
            .and_then(|p| p.region_of(endpoint))
            .or_else(|| self.ips.and_then(|g| g.region_of(endpoint)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocatedInsight {
    pub insight: DetourInsight,
    pub source_geo: GeoRecord,
    pub via_geo: GeoRecord,
    pub destination_geo: GeoRecord,
}

/// Locates one endpoint. Never fails: anything that cannot be resolved is
/// reported with unknown fields.
pub fn locate(key: &EndpointKey, resolver: &GeoResolver, probes: Option<&ProbeLocations>) -> GeoRecord {
    match key.kind() {
        EndpointKind::Ip => resolver
            .lookup(key.as_str())
            .unwrap_or_else(|_| GeoRecord::unknown(key.as_str(), GeoSource::Provider)),
        EndpointKind::Probe => probes
            .and_then(|p| p.get(key.as_str()))
            .unwrap_or_else(|| GeoRecord::unknown(key.as_str(), GeoSource::StaticFile)),
        EndpointKind::Label => GeoRecord::unknown(key.as_str(), GeoSource::StaticFile),
    }
}

/// Attaches locations to every insight, in parallel, preserving order.
pub fn annotate(insights: Vec<DetourInsight>, resolver: &GeoResolver, probes: Option<&ProbeLocations>) -> Vec<LocatedInsight> {
    insights
        .into_par_iter()
        .map(|insight| LocatedInsight {
            source_geo: locate(&insight.source, resolver, probes),
            via_geo: locate(&insight.via, resolver, probes),
            destination_geo: locate(&insight.destination, resolver, probes),
            insight,
        })
        .collect()
}
