//! Batch commands behind the command-line front end, plus shared output
//! formatting. Each command reads its inputs, writes result files into the
//! configured output directory and prints a short human summary.
//!
//! Exit codes: 0 success, 1 analysis error (bad data), 2 usage or I/O error.

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detour::{self, DetourCensus, DetourInsight, InsightKind};
use crate::endpoint::{EndpointKey, EndpointKind};
use crate::geo::{self, GeoCache, GeoProvider, GeoResolver, ProbeLocations};
use crate::graph::{BuildStats, GraphBuilder, LatencyGraph};
use crate::ingest::{self, DropCounts, FeedError, FilterSpec, Granularity, MeasurementMetadata, RecordFilter};
use crate::stats::{self, OverlayPath, RttHistogram, RttSummary};
use crate::traceroute::{self, CitySpec, TraceReportRow};

/// Fixed-point rendering with round-half-even on the exact binary value.
/// Negative zero prints without a sign.
pub fn fmt_fixed(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Like [`fmt_fixed`], with `None` rendered as an empty string.
pub fn fmt_opt(x: Option<f64>, decimals: usize) -> String {
    x.map(|v| fmt_fixed(v, decimals)).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    #[default]
    None,
    Static,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeoConfig {
    pub provider: ProviderKind,
    pub static_file: Option<PathBuf>,
    pub url_template: String,
    pub token: Option<String>,
    pub min_interval_ms: u64,
    pub cache_path: Option<PathBuf>,
    pub probe_locations: Option<PathBuf>,
}

impl Default for GeoConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::None,
            static_file: None,
            url_template: "https://ipinfo.io/{ip}/json".into(),
            token: None,
            min_interval_ms: geo::DEFAULT_MIN_INTERVAL.as_millis() as u64,
            cache_path: None,
            probe_locations: None,
        }
    }
}

/// Everything a run needs. Loadable from a TOML file with `[filter]`,
/// `[geo]` and `[city]` sections; command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub granularity: Granularity,
    pub filter: FilterSpec,
    pub threshold_pct: f64,
    pub bucket_width_pct: f64,
    pub cumulative_histogram: bool,
    pub top_n: usize,
    pub mode_bin_width_ms: f64,
    pub forwarding_delay_ms: f64,
    pub geo: GeoConfig,
    pub city: CitySpec,
    pub output_dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            metadata: None,
            granularity: Granularity::Ip,
            filter: FilterSpec::default(),
            threshold_pct: 1.0,
            bucket_width_pct: 1.0,
            cumulative_histogram: false,
            top_n: 20,
            mode_bin_width_ms: stats::DEFAULT_MODE_BIN_WIDTH_MS,
            forwarding_delay_ms: 0.0,
            geo: GeoConfig::default(),
            city: CitySpec::los_angeles(),
            output_dir: PathBuf::from("."),
            format: OutputFormat::Csv,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Analysis,
    Usage,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn analysis(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Analysis,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: ErrorKind::Usage,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::NotFound {
            Self::usage(format!("input not found: {}", path.display()))
        } else {
            Self::usage(format!("{}: {e}", path.display()))
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Analysis => 1,
            ErrorKind::Usage => 2,
        }
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let (path, mut w) = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn out_err(e: io::Error) -> CliError {
    CliError::usage(format!("write failed: {e}"))
}

fn load_probe_locations(config: &PipelineConfig) -> Result<Option<ProbeLocations>, CliError> {
    match &config.geo.probe_locations {
        Some(path) => ProbeLocations::from_csv(open(path)?)
            .map(Some)
            .map_err(|e| CliError::analysis(format!("{}: {e}", path.display()))),
        None => Ok(None),
    }
}

fn load_cache_resolver(config: &PipelineConfig) -> Result<Option<GeoResolver>, CliError> {
    match &config.geo.cache_path {
        Some(path) if path.exists() => GeoCache::load(path)
            .map(|c| Some(GeoResolver::cache_only(c)))
            .map_err(|e| CliError::analysis(format!("{}: {e}", path.display()))),
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestSummary {
    pub records_read: u64,
    pub parse_errors: u64,
    pub kept: u64,
    pub dropped: Vec<(String, u64)>,
    pub skipped_no_data: u64,
    pub skipped_self_pair: u64,
    pub nodes: usize,
    pub edges: usize,
    pub snapshot: PathBuf,
}

struct FileIngest {
    builder: GraphBuilder,
    drops: DropCounts,
    read: u64,
    parse_errors: u64,
}

/// Parses, filters and aggregates every input into `graph.csv`.
pub fn cmd_ingest(config: &PipelineConfig, out: &mut dyn Write, diag: &mut dyn Write) -> Result<IngestSummary, CliError> {
    if config.inputs.is_empty() {
        return Err(CliError::usage("no input files given"));
    }
    let files: Vec<(PathBuf, File)> = config
        .inputs
        .iter()
        .map(|p| open(p).map(|f| (p.clone(), f)))
        .collect::<Result<_, _>>()?;

    let metadata = match &config.metadata {
        Some(path) => Some(
            MeasurementMetadata::from_csv(open(path)?)
                .map_err(|e| CliError::analysis(format!("{}: {e}", path.display())))?,
        ),
        None => None,
    };
    let probes = load_probe_locations(config)?;
    let ips = load_cache_resolver(config)?;
    let regions = geo::CombinedRegions {
        probes: probes.as_ref(),
        ips: ips.as_ref(),
    };

    let results: Vec<(PathBuf, Result<FileIngest, CliError>, Vec<String>)> = files
        .into_par_iter()
        .map(|(path, file)| {
            let mut warnings = Vec::new();
            let mut filter = RecordFilter::new(&config.filter).with_regions(&regions);
            let mut state = FileIngest {
                builder: GraphBuilder::new(),
                drops: DropCounts::default(),
                read: 0,
                parse_errors: 0,
            };
            for item in ingest::read_feed(BufReader::new(file), config.granularity) {
                match item {
                    Ok(mut record) => {
                        state.read += 1;
                        if let Some(meta) = &metadata {
                            meta.apply(&mut record);
                        }
                        if filter.admit(&record) {
                            state.builder.add(record);
                        }
                    }
                    Err(FeedError::Parse { line, source }) => {
                        state.parse_errors += 1;
                        if warnings.len() < 20 {
                            warnings.push(format!("{}:{line}: {source}", path.display()));
                        }
                    }
                    Err(FeedError::Io { source, .. }) => {
                        let e = CliError::io(&path, source);
                        return (path, Err(e), warnings);
                    }
                }
            }
            state.drops = filter.into_counts();
            (path, Ok(state), warnings)
        })
        .collect();

    let mut builder = GraphBuilder::new();
    let mut drops = DropCounts::default();
    let (mut read, mut parse_errors) = (0, 0);
    for (_, result, warnings) in results {
        for w in warnings {
            writeln!(diag, "warning: {w}").map_err(out_err)?;
        }
        let state = result?;
        builder.merge(state.builder);
        drops.merge(&state.drops);
        read += state.read;
        parse_errors += state.parse_errors;
    }
    let BuildStats {
        skipped_no_data,
        skipped_self_pair,
        ..
    } = builder.stats();
    let graph = builder.build();

    let (snapshot, mut w) = create(&config.output_dir, "graph.csv")?;
    graph.write_snapshot(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&snapshot, e))?;

    if read == 0 {
        writeln!(diag, "warning: no records in input").map_err(out_err)?;
    }
    let summary = IngestSummary {
        records_read: read,
        parse_errors,
        kept: read - drops.total(),
        dropped: drops.iter().map(|(r, c)| (r.to_string(), c)).collect(),
        skipped_no_data,
        skipped_self_pair,
        nodes: graph.node_count(),
        edges: graph.edge_count(),
        snapshot,
    };
    match config.format {
        OutputFormat::Json => {
            writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("serializable")).map_err(out_err)?
        }
        OutputFormat::Csv => {
            let dropped: Vec<String> = summary.dropped.iter().map(|(r, c)| format!("{r}={c}")).collect();
            writeln!(
                out,
                "records read: {}\nparse errors: {}\nkept: {}\ndropped: {} ({})\nskipped without runs: {}\nskipped self pairs: {}\ngraph: {} nodes, {} edges\nsnapshot: {}",
                summary.records_read,
                summary.parse_errors,
                summary.kept,
                drops.total(),
                dropped.join(", "),
                summary.skipped_no_data,
                summary.skipped_self_pair,
                summary.nodes,
                summary.edges,
                summary.snapshot.display()
            )
            .map_err(out_err)?
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetourReport {
    pub census: DetourCensus,
    pub insights: Vec<DetourInsight>,
    pub histogram: Vec<(f64, u64)>,
    pub files: Vec<PathBuf>,
}

/// Detour search over a snapshot: insight list, improvement histogram and
/// a top-N summary.
pub fn cmd_detours(
    config: &PipelineConfig,
    snapshot: &Path,
    out: &mut dyn Write,
    _diag: &mut dyn Write,
) -> Result<DetourReport, CliError> {
    if config.threshold_pct.is_nan() || config.threshold_pct < 0.0 {
        return Err(CliError::usage("threshold must be non-negative"));
    }
    if config.bucket_width_pct.is_nan() || config.bucket_width_pct <= 0.0 {
        return Err(CliError::usage("bucket width must be positive"));
    }
    let graph = LatencyGraph::read_snapshot(BufReader::new(open(snapshot)?))
        .map_err(|e| CliError::analysis(format!("{}: {e}", snapshot.display())))?;

    let mut insights = detour::enumerate_detours(&graph, config.threshold_pct);
    detour::sort_for_report(&mut insights);
    let histogram = detour::improvement_histogram(&insights, config.bucket_width_pct);
    let (census, _) = detour::census(&graph, config.threshold_pct, config.bucket_width_pct);
    let rows: Vec<(f64, u64)> = if config.cumulative_histogram {
        histogram.cumulative()
    } else {
        histogram.buckets().collect()
    };

    let dir = &config.output_dir;
    let files = match config.format {
        OutputFormat::Csv => {
            let (ip, mut w) = create(dir, "insights.csv")?;
            detour::write_insights_csv(&mut w, &insights)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(&ip, e))?;
            let (hp, mut w) = create(dir, "histogram.csv")?;
            histogram
                .write_csv(&mut w, config.cumulative_histogram)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(&hp, e))?;
            vec![ip, hp]
        }
        OutputFormat::Json => vec![
            write_json(dir, "insights.json", &insights)?,
            write_json(dir, "histogram.json", &rows)?,
        ],
    };

    let probes = load_probe_locations(config)?;
    let resolver = load_cache_resolver(config)?;
    writeln!(
        out,
        "pairs with direct edge: {}\nimprovable pairs (>= {}%): {}\nbridge pairs: {}\nimprovement insights: {}\nbridge insights: {}",
        census.direct_pairs,
        fmt_fixed(config.threshold_pct, 2),
        census.improvable_pairs,
        census.bridge_pairs,
        census.improvement_insights,
        census.bridge_insights
    )
    .map_err(out_err)?;
    let top: Vec<&DetourInsight> = insights.iter().take(config.top_n).collect();
    if !top.is_empty() {
        writeln!(out, "top {}:", top.len()).map_err(out_err)?;
    }
    for i in top {
        let place = |k: &EndpointKey| describe(k, resolver.as_ref(), probes.as_ref());
        let line = match i.kind {
            InsightKind::Improvement => format!(
                "  {} -> {} via {}: {} ms direct, {} ms overlay, {} ms ({}%) faster",
                place(&i.source),
                place(&i.destination),
                place(&i.via),
                fmt_opt(i.direct_rtt_ms, 2),
                fmt_fixed(i.overlay_rtt_ms, 2),
                fmt_opt(i.improvement_ms, 2),
                fmt_opt(i.improvement_pct, 2)
            ),
            InsightKind::Bridge => format!(
                "  {} -> {} via {}: no direct connectivity, {} ms overlay",
                place(&i.source),
                place(&i.destination),
                place(&i.via),
                fmt_fixed(i.overlay_rtt_ms, 2)
            ),
        };
        writeln!(out, "{line}").map_err(out_err)?;
    }
    Ok(DetourReport {
        census,
        insights,
        histogram: rows,
        files,
    })
}

fn describe(key: &EndpointKey, resolver: Option<&GeoResolver>, probes: Option<&ProbeLocations>) -> String {
    let record = match key.kind() {
        EndpointKind::Ip => resolver.and_then(|r| r.lookup_cached(key.as_str())),
        EndpointKind::Probe => probes.and_then(|p| p.get(key.as_str())),
        EndpointKind::Label => None,
    };
    match record.filter(|r| !r.is_unknown()) {
        Some(r) => format!("{key} ({})", r.place()),
        None => key.to_string(),
    }
}

/// Table-2-shaped report for every trace file in `dir`. Files that fail to
/// parse are reported on `diag` and skipped.
pub fn cmd_traceroutes(
    config: &PipelineConfig,
    dir: &Path,
    out: &mut dyn Write,
    diag: &mut dyn Write,
) -> Result<Vec<TraceReportRow>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    let resolver = load_cache_resolver(config)?;

    let mut rows = Vec::new();
    for path in files {
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                writeln!(diag, "error: {}: {e}", path.display()).map_err(out_err)?;
                continue;
            }
        };
        let mut trace = match traceroute::parse_traceroute(&text) {
            Ok(t) => t,
            Err(e) => {
                writeln!(diag, "error: {}: {e}", path.display()).map_err(out_err)?;
                continue;
            }
        };
        if let Some(r) = &resolver {
            traceroute::geolocate_hops(&mut trace, r);
        }
        let detection = traceroute::detect_city(&trace, &config.city);
        let label = if trace.source_label.is_empty() {
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        } else {
            trace.source_label.clone()
        };
        rows.push(TraceReportRow {
            source_label: label,
            destination: trace.destination.clone(),
            hop_count: traceroute::hop_count(&trace),
            city_verdict: detection.verdict,
        });
    }

    match config.format {
        OutputFormat::Csv => {
            let (p, mut w) = create(&config.output_dir, "traceroutes.csv")?;
            traceroute::write_report_csv(&mut w, &rows)
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(&p, e))?;
        }
        OutputFormat::Json => {
            write_json(&config.output_dir, "traceroutes.json", &rows)?;
        }
    }
    traceroute::write_report_csv(&mut *out, &rows).map_err(out_err)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlayReport {
    pub rows: Vec<(String, RttSummary)>,
    pub verdict: Option<stats::ComparisonVerdict>,
    pub files: Vec<PathBuf>,
}

/// Overlay prediction from per-leg sample files, optionally compared with
/// a direct-route sample file.
pub fn cmd_overlay(
    config: &PipelineConfig,
    legs: &[PathBuf],
    labels: &[String],
    direct: Option<&Path>,
    out: &mut dyn Write,
    _diag: &mut dyn Write,
) -> Result<OverlayReport, CliError> {
    if legs.is_empty() && direct.is_none() {
        return Err(CliError::usage("give at least one --leg or a --direct sample file"));
    }
    let load = |path: &Path| -> Result<(Vec<f64>, RttSummary), CliError> {
        let samples = stats::read_samples(BufReader::new(open(path)?))
            .map_err(|e| CliError::analysis(format!("{}: {e}", path.display())))?;
        let summary = stats::summarize(&samples, config.mode_bin_width_ms)
            .map_err(|e| CliError::analysis(format!("{}: {e}", path.display())))?;
        Ok((samples, summary))
    };
    let stem = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();

    let mut rows: Vec<(String, RttSummary)> = Vec::new();
    let mut distributions: Vec<(String, Vec<f64>)> = Vec::new();
    let mut leg_summaries = Vec::new();
    for (i, path) in legs.iter().enumerate() {
        let (samples, summary) = load(path)?;
        let label = labels.get(i).cloned().unwrap_or_else(|| stem(path));
        rows.push((label.clone(), summary.clone()));
        distributions.push((label, samples));
        leg_summaries.push(summary);
    }
    let composed = if leg_summaries.is_empty() {
        None
    } else {
        let leg_labels = rows.iter().map(|(l, _)| l.clone()).collect();
        let path = OverlayPath::new(leg_summaries)
            .with_labels(leg_labels)
            .with_forwarding_delay(config.forwarding_delay_ms);
        let c = stats::compose(&path).map_err(|e| CliError::analysis(e.to_string()))?;
        rows.push(("overlay".to_string(), c.clone()));
        Some(c)
    };
    let direct_summary = match direct {
        Some(path) => {
            let (samples, summary) = load(path)?;
            rows.push(("direct".to_string(), summary.clone()));
            distributions.push(("direct".to_string(), samples));
            Some(summary)
        }
        None => None,
    };
    let verdict = match (&direct_summary, &composed) {
        (Some(d), Some(o)) => Some(stats::compare(d, o)),
        _ => None,
    };

    let dir = &config.output_dir;
    let mut files = Vec::new();
    match config.format {
        OutputFormat::Csv => {
            let (p, mut w) = create(dir, "overlay_summary.csv")?;
            stats::write_summary_csv(&mut w, rows.iter().map(|(l, s)| (l.as_str(), s)))
                .and_then(|_| w.flush())
                .map_err(|e| CliError::io(&p, e))?;
            files.push(p);
        }
        OutputFormat::Json => files.push(write_json(dir, "overlay_summary.json", &(&rows, &verdict))?),
    }
    for (label, samples) in &distributions {
        let histogram = RttHistogram::new(samples, config.mode_bin_width_ms).map_err(|e| CliError::usage(e.to_string()))?;
        let name = format!("distribution_{}.csv", sanitize(label));
        let (p, mut w) = create(dir, &name)?;
        histogram.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&p, e))?;
        files.push(p);
    }

    stats::write_summary_csv(&mut *out, rows.iter().map(|(l, s)| (l.as_str(), s))).map_err(out_err)?;
    if composed.is_some() {
        writeln!(out, "note: overlay median and mode are sums of per-leg values, not statistics of summed samples")
            .map_err(out_err)?;
    }
    if let Some(v) = &verdict {
        writeln!(
            out,
            "median delta: {} ms, mode delta: {} ms, mean delta: {} ms\n{}",
            fmt_fixed(v.median_delta_ms, 2),
            fmt_fixed(v.mode_delta_ms, 2),
            fmt_fixed(v.mean_delta_ms, 2),
            v.text
        )
        .map_err(out_err)?;
    }
    Ok(OverlayReport { rows, verdict, files })
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WarmSummary {
    pub addresses: usize,
    pub provider_calls: u64,
    pub unknown: usize,
    pub invalid: usize,
}

/// Resolves every address listed in `source` (one per line, or a graph
/// snapshot) through the configured provider, filling the cache file.
pub fn cmd_geo_warm(config: &PipelineConfig, source: &Path, out: &mut dyn Write, diag: &mut dyn Write) -> Result<WarmSummary, CliError> {
    let cache_path = config
        .geo
        .cache_path
        .clone()
        .ok_or_else(|| CliError::usage("geo-warm needs a cache path"))?;
    let text = fs::read_to_string(source).map_err(|e| CliError::io(source, e))?;
    let addresses: Vec<String> = if text.starts_with("source,destination,") {
        let graph = LatencyGraph::read_snapshot(text.as_bytes())
            .map_err(|e| CliError::analysis(format!("{}: {e}", source.display())))?;
        graph
            .nodes()
            .iter()
            .filter(|k| k.kind() == EndpointKind::Ip)
            .map(|k| k.to_string())
            .collect()
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect()
    };

    let provider: Box<dyn GeoProvider> = match config.geo.provider {
        ProviderKind::None => Box::new(geo::UnknownProvider),
        ProviderKind::Static => {
            let path = config
                .geo
                .static_file
                .as_ref()
                .ok_or_else(|| CliError::usage("static provider needs a static_file"))?;
            Box::new(geo::StaticFileProvider::open(path).map_err(|e| CliError::analysis(format!("{}: {e}", path.display())))?)
        }
        ProviderKind::Http => {
            let mut p = geo::HttpProvider::new(config.geo.url_template.clone())
                .with_min_interval(Duration::from_millis(config.geo.min_interval_ms));
            if let Some(t) = &config.geo.token {
                p = p.with_token(t.clone());
            }
            Box::new(p)
        }
    };
    if let Some(parent) = cache_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let resolver =
        GeoResolver::with_cache_file(&cache_path, provider).map_err(|e| CliError::analysis(format!("{}: {e}", cache_path.display())))?;

    let mut summary = WarmSummary {
        addresses: addresses.len(),
        ..WarmSummary::default()
    };
    for ip in &addresses {
        match resolver.lookup(ip) {
            Ok(r) if r.is_unknown() => summary.unknown += 1,
            Ok(_) => {}
            Err(e) => {
                summary.invalid += 1;
                writeln!(diag, "warning: {e}").map_err(out_err)?;
            }
        }
    }
    summary.provider_calls = resolver.provider_calls();
    writeln!(
        out,
        "addresses: {}\nprovider calls: {}\nunknown: {}\ninvalid: {}\ncache: {}",
        summary.addresses,
        summary.provider_calls,
        summary.unknown,
        summary.invalid,
        cache_path.display()
    )
    .map_err(out_err)?;
    Ok(summary)
}
