//! RTT distribution summaries and overlay path composition.
//!
//! Composition follows the additive rule: mean, median and mode of a
//! multi-leg path are the sums of the per-leg values and the variance is
//! the sum of per-leg variances. Sums of medians and modes are not the
//! median or mode of the summed distribution; [`monte_carlo_sums`] gives
//! the empirical alternative.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::fmt_fixed;

pub const DEFAULT_MODE_BIN_WIDTH_MS: f64 = 0.5;

/// Bins below this fraction of the tallest bin are never counted as peaks.
pub const PEAK_MIN_FRACTION: f64 = 0.10;

pub const SUMMARY_HEADER: [&str; 8] = [
    "label",
    "mean_ms",
    "median_ms",
    "variance_ms2",
    "mode_ms",
    "std_dev_ms",
    "sample_count",
    "modality",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Degenerate,
    Unimodal,
    Bimodal,
    Multimodal,
}

impl Modality {
    fn from_peaks(peaks: usize) -> Self {
        match peaks {
            0 => Self::Degenerate,
            1 => Self::Unimodal,
            2 => Self::Bimodal,
            _ => Self::Multimodal,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Degenerate => "degenerate",
            Self::Unimodal => "unimodal",
            Self::Bimodal => "bimodal",
            Self::Multimodal => "multimodal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttSummary {
    pub mean_ms: f64,
    pub median_ms: f64,
    /// Population variance.
    pub variance_ms2: f64,
    pub mode_ms: f64,
    pub std_dev_ms: f64,
    pub sample_count: u64,
    pub mode_bin_width_ms: f64,
    pub modality: Modality,
}

impl RttSummary {
    /// Summary from reported figures, for composing legs whose raw samples
    /// are not available. `std_dev_ms` is derived from the variance.
    pub fn from_moments(
        mean_ms: f64,
        median_ms: f64,
        variance_ms2: f64,
        mode_ms: f64,
        sample_count: u64,
        modality: Modality,
    ) -> Self {
        Self {
            mean_ms,
            median_ms,
            variance_ms2,
            mode_ms,
            std_dev_ms: variance_ms2.sqrt(),
            sample_count,
            mode_bin_width_ms: DEFAULT_MODE_BIN_WIDTH_MS,
            modality,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.modality == Modality::Degenerate
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no samples")]
    EmptyInput,
    #[error("sample {index} is not a positive finite RTT: {value}")]
    InvalidSample { index: usize, value: f64 },
    #[error("bin width must be positive and finite, got {0}")]
    InvalidBinWidth(f64),
    #[error("overlay path has no legs")]
    EmptyPath,
    #[error("leg {0} has a degenerate summary")]
    DegenerateLeg(usize),
}

/// Fixed-width histogram. Bin `i` covers `[(i - 0.5) w, (i + 0.5) w)` and
/// is centered on `i * w`.
#[derive(Debug, Clone, PartialEq)]
pub struct RttHistogram {
    pub bin_width_ms: f64,
    bins: BTreeMap<i64, u64>,
}

impl RttHistogram {
    pub fn new(samples: &[f64], bin_width_ms: f64) -> Result<Self, StatsError> {
        if !(bin_width_ms.is_finite() && bin_width_ms > 0.0) {
            return Err(StatsError::InvalidBinWidth(bin_width_ms));
        }
        let mut bins = BTreeMap::new();
        for &x in samples {
            *bins.entry(bin_index(x, bin_width_ms)).or_default() += 1;
        }
        Ok(Self { bin_width_ms, bins })
    }

    pub fn center(&self, index: i64) -> f64 {
        index as f64 * self.bin_width_ms
    }

    /// `(bin center, count)` for every non-empty bin, ascending.
    pub fn bins(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.bins.iter().map(|(i, c)| (self.center(*i), *c))
    }

    /// Index of the most populated bin; ties go to the lower bin.
    pub fn mode_index(&self) -> Option<i64> {
        let mut best: Option<(i64, u64)> = None;
        for (&i, &c) in &self.bins {
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Local maxima over the dense bin range (empty bins count as zero).
    /// A run of equal-count bins is one candidate; it is a peak when it is
    /// strictly above the bins on both sides and holds at least
    /// [`PEAK_MIN_FRACTION`] of the tallest bin.
    pub fn peaks(&self) -> Vec<i64> {
        let (Some((&lo, _)), Some((&hi, _))) = (self.bins.first_key_value(), self.bins.last_key_value()) else {
            return Vec::new();
        };
        let max = self.bins.values().copied().max().unwrap_or(0);
        let floor = PEAK_MIN_FRACTION * max as f64;
        let count = |i: i64| self.bins.get(&i).copied().unwrap_or(0);

        let mut peaks = Vec::new();
        let mut i = lo;
        while i <= hi {
            let c = count(i);
            let mut j = i;
            while j < hi && count(j + 1) == c {
                j += 1;
            }
            if c > 0 && count(i - 1) < c && count(j + 1) < c && c as f64 >= floor {
                peaks.push(i);
            }
            i = j + 1;
        }
        peaks
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["bin_center", "count"])?;
        for (center, count) in self.bins() {
            csv.write_record([fmt_fixed(center, 3), count.to_string()])?;
        }
        csv.flush()
    }
}

fn bin_index(x: f64, width: f64) -> i64 {
    (x / width + 0.5).floor() as i64
}

/// Summary statistics of one RTT sample.
pub fn summarize(samples: &[f64], mode_bin_width_ms: f64) -> Result<RttSummary, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    if let Some((index, &value)) = samples.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x > 0.0)) {
        return Err(StatsError::InvalidSample { index, value });
    }
    let histogram = RttHistogram::new(samples, mode_bin_width_ms)?;

    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let variance = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };

    let mode_index = histogram.mode_index().expect("non-empty histogram");
    Ok(RttSummary {
        mean_ms: mean,
        median_ms: median,
        variance_ms2: variance,
        mode_ms: histogram.center(mode_index),
        std_dev_ms: variance.sqrt(),
        sample_count: n as u64,
        mode_bin_width_ms,
        modality: Modality::from_peaks(histogram.peaks().len()),
    })
}

/// Legs of a relayed path, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayPath {
    pub legs: Vec<RttSummary>,
    pub labels: Vec<String>,
    /// Constant delay added at each relay (legs - 1 relays).
    pub forwarding_delay_ms: f64,
}

impl OverlayPath {
    pub fn new(legs: Vec<RttSummary>) -> Self {
        let labels = (1..=legs.len()).map(|i| format!("leg{i}")).collect();
        Self {
            legs,
            labels,
            forwarding_delay_ms: 0.0,
        }
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        self.labels = labels;
        self
    }

    pub fn with_forwarding_delay(mut self, delay_ms: f64) -> Self {
        self.forwarding_delay_ms = delay_ms;
        self
    }
}

/// End-to-end prediction for a relayed path: location statistics add,
/// variances add and the standard deviation is the root of the total.
/// The result carries the most complex modality among the legs.
pub fn compose(path: &OverlayPath) -> Result<RttSummary, StatsError> {
    let first = path.legs.first().ok_or(StatsError::EmptyPath)?;
    if let Some(i) = path.legs.iter().position(RttSummary::is_degenerate) {
        return Err(StatsError::DegenerateLeg(i));
    }
    if path.legs.len() == 1 && path.forwarding_delay_ms == 0.0 {
        return Ok(first.clone());
    }
    let relay_delay = path.forwarding_delay_ms * (path.legs.len() - 1) as f64;
    let variance: f64 = path.legs.iter().map(|l| l.variance_ms2).sum();
    Ok(RttSummary {
        mean_ms: path.legs.iter().map(|l| l.mean_ms).sum::<f64>() + relay_delay,
        median_ms: path.legs.iter().map(|l| l.median_ms).sum::<f64>() + relay_delay,
        variance_ms2: variance,
        mode_ms: path.legs.iter().map(|l| l.mode_ms).sum::<f64>() + relay_delay,
        std_dev_ms: variance.sqrt(),
        sample_count: path.legs.iter().map(|l| l.sample_count).min().unwrap_or(0),
        mode_bin_width_ms: first.mode_bin_width_ms,
        modality: path.legs.iter().map(|l| l.modality).max().unwrap_or(Modality::Unimodal),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Overlay,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonVerdict {
    /// Positive deltas mean the overlay is slower.
    pub mean_delta_ms: f64,
    pub median_delta_ms: f64,
    pub mode_delta_ms: f64,
    pub preferred_metric: Metric,
    pub faster: Route,
    pub text: String,
}

/// Compares a direct route with an overlay prediction. The mean is used
/// only when both distributions are unimodal; otherwise the median decides.
pub fn compare(direct: &RttSummary, overlay: &RttSummary) -> ComparisonVerdict {
    let mean_delta_ms = overlay.mean_ms - direct.mean_ms;
    let median_delta_ms = overlay.median_ms - direct.median_ms;
    let mode_delta_ms = overlay.mode_ms - direct.mode_ms;
    let preferred_metric = if direct.modality == Modality::Unimodal && overlay.modality == Modality::Unimodal {
        Metric::Mean
    } else {
        Metric::Median
    };
    let delta = match preferred_metric {
        Metric::Mean => mean_delta_ms,
        Metric::Median => median_delta_ms,
    };
    let faster = if delta > 0.0 {
        Route::Direct
    } else if delta < 0.0 {
        Route::Overlay
    } else {
        Route::Tie
    };
    let metric = match preferred_metric {
        Metric::Mean => "mean",
        Metric::Median => "median",
    };
    let text = match faster {
        Route::Direct => format!("direct route is {} ms faster by {metric}", fmt_fixed(delta, 2)),
        Route::Overlay => format!("overlay route is {} ms faster by {metric}", fmt_fixed(-delta, 2)),
        Route::Tie => format!("routes are equal by {metric}"),
    };
    ComparisonVerdict {
        mean_delta_ms,
        median_delta_ms,
        mode_delta_ms,
        preferred_metric,
        faster,
        text,
    }
}

/// Empirical end-to-end samples: each draw sums one sample picked
/// uniformly and independently from every leg.
pub fn monte_carlo_sums<R: Rng + ?Sized>(legs: &[&[f64]], draws: usize, rng: &mut R) -> Result<Vec<f64>, StatsError> {
    if legs.is_empty() {
        return Err(StatsError::EmptyPath);
    }
    if legs.iter().any(|l| l.is_empty()) {
        return Err(StatsError::EmptyInput);
    }
    Ok((0..draws)
        .map(|_| legs.iter().map(|l| l[rng.random_range(0..l.len())]).sum())
        .collect())
}

#[derive(Debug, Error)]
pub enum SampleFileError {
    #[error("line {line}: invalid RTT {text:?}")]
    Invalid { line: usize, text: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads one RTT per line; blank lines and `#` comments are skipped.
pub fn read_samples<R: BufRead>(reader: R) -> Result<Vec<f64>, SampleFileError> {
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => samples.push(v),
            _ => {
                return Err(SampleFileError::Invalid {
                    line: i + 1,
                    text: text.to_string(),
                })
            }
        }
    }
    Ok(samples)
}

/// Writes summary rows with 2-decimal rendering.
pub fn write_summary_csv<'a, W, I>(writer: W, rows: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a RttSummary)>,
{
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(SUMMARY_HEADER)?;
    for (label, s) in rows {
        csv.write_record([
            label.to_string(),
            fmt_fixed(s.mean_ms, 2),
            fmt_fixed(s.median_ms, 2),
            fmt_fixed(s.variance_ms2, 2),
            fmt_fixed(s.mode_ms, 2),
            fmt_fixed(s.std_dev_ms, 2),
            s.sample_count.to_string(),
            s.modality.to_string(),
        ])?;
    }
    csv.flush()
}
