use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use overlay_latency::report::{self, CliError, OutputFormat, PipelineConfig};

#[derive(Parser)]
#[command(name = "overlay-latency", version, about = "Overlay latency analysis for ping measurement feeds")]
struct Cli {
    /// TOML configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Build a latency graph snapshot from result feeds
    Ingest {
        inputs: Vec<PathBuf>,
        /// Measurement metadata CSV (measurement_id,status,start_time)
        #[arg(long)]
        metadata: Option<PathBuf>,
        /// Key nodes by probe id instead of address
        #[arg(long)]
        by_probe: bool,
    },
    /// Search a graph snapshot for one-relay detours
    Detours {
        snapshot: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        bucket_width: Option<f64>,
        #[arg(long)]
        cumulative: bool,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Hop counts and city verdicts for a directory of traceroute captures
    Traceroutes { dir: PathBuf },
    /// Compose per-leg RTT samples and compare with a direct route
    Overlay {
        #[arg(long = "leg", required = true)]
        legs: Vec<PathBuf>,
        #[arg(long = "label")]
        labels: Vec<String>,
        #[arg(long)]
        direct: Option<PathBuf>,
        #[arg(long)]
        bin_width: Option<f64>,
        #[arg(long)]
        forwarding_delay: Option<f64>,
    },
    /// Pre-resolve addresses into the geolocation cache
    GeoWarm {
        /// Address list or graph snapshot
        source: PathBuf,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(dir) = cli.output_dir {
        config.output_dir = dir;
    }
    if let Some(f) = cli.format {
        config.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        };
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut diag = io::stderr();
    match cli.command {
        Command::Ingest { inputs, metadata, by_probe } => {
            if !inputs.is_empty() {
                config.inputs = inputs;
            }
            if metadata.is_some() {
                config.metadata = metadata;
            }
            if by_probe {
                config.granularity = overlay_latency::ingest::Granularity::Probe;
            }
            report::cmd_ingest(&config, &mut out, &mut diag).map(drop)
        }
        Command::Detours {
            snapshot,
            threshold,
            bucket_width,
            cumulative,
            top,
        } => {
            config.threshold_pct = threshold.unwrap_or(config.threshold_pct);
            config.bucket_width_pct = bucket_width.unwrap_or(config.bucket_width_pct);
            config.cumulative_histogram |= cumulative;
            config.top_n = top.unwrap_or(config.top_n);
            report::cmd_detours(&config, &snapshot, &mut out, &mut diag).map(drop)
        }
        Command::Traceroutes { dir } => report::cmd_traceroutes(&config, &dir, &mut out, &mut diag).map(drop),
        Command::Overlay {
            legs,
            labels,
            direct,
            bin_width,
            forwarding_delay,
        } => {
            config.mode_bin_width_ms = bin_width.unwrap_or(config.mode_bin_width_ms);
            config.forwarding_delay_ms = forwarding_delay.unwrap_or(config.forwarding_delay_ms);
            report::cmd_overlay(&config, &legs, &labels, direct.as_deref(), &mut out, &mut diag).map(drop)
        }
        Command::GeoWarm { source, cache } => {
            if cache.is_some() {
                config.geo.cache_path = cache;
            }
            report::cmd_geo_warm(&config, &source, &mut out, &mut diag).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
