//! Observables computed from a finished run: load and its power spectrum,
//! transmission-interval and delivery-time distributions, learning and jam
//! detection.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Counters, DeliveryRecord, SimConfig, SimState};
use crate::topology::NetworkTopology;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("series of length {len} is too short for segment length {segment}")]
    SeriesTooShort { len: usize, segment: usize },
    #[error("segment length {0} must be a power of two and at least 8")]
    BadSegmentLength(usize),
    #[error("need at least {needed} points in fit range, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("nonpositive value at x={x}, y={y} inside fit range")]
    NonPositive { x: f64, y: f64 },
    #[error("empty sample")]
    EmptySample,
    #[error("invalid binning: {0}")]
    BadBinning(String),
}

pub const MIN_FIT_POINTS: usize = 5;
pub const DEFAULT_SEGMENT_LENGTH: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDeliverySample {
    pub step: u64,
    /// Mean over every delivery up to `step`.
    pub cumulative: f64,
    /// Mean over deliveries in the trailing window; `NaN` if there were none.
    pub window: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JamVerdict {
    pub jammed: bool,
    /// First step (1-based clock value after the step) at which the verdict
    /// was triggered.
    pub first_jam_step: Option<u64>,
    /// Load level that counts as jammed.
    pub threshold: f64,
    pub threshold_crossed: bool,
    pub growth: GrowthDiagnostic,
}

/// Load-growth measures over the end of the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthDiagnostic {
    /// Least-squares slope of the load over the final 20% of steps,
    /// packets per step.
    pub slope: f64,
    /// Mean load over that window.
    pub mean: f64,
    pub window: u64,
    /// `slope · window > 0.1 · mean` with a positive slope.
    pub sustained: bool,
    /// Load trend over the final half of the run divided by the mean
    /// creation rate there: the fraction of new packets that pile up.
    pub accumulation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: SimConfig,
    pub node_count: usize,
    pub directed_edges: usize,
    pub load_series: Vec<u64>,
    pub delivery_times: Vec<u64>,
    pub mean_delivery_series: Vec<MeanDeliverySample>,
    /// `dt_counts[d]`: transmissions that came `d` steps after the previous
    /// one on the same directed edge.
    pub dt_counts: Vec<u64>,
    pub learning_series: Vec<(u64, f64)>,
    pub jam: JamVerdict,
    pub counters: Counters,
    pub final_in_flight: u64,
}

impl RunReport {
    pub fn load_as_f64(&self) -> Vec<f64> {
        self.load_series.iter().map(|&l| l as f64).collect()
    }

    /// Mean load over the final `fraction` of the run.
    pub fn tail_mean_load(&self, fraction: f64) -> f64 {
        let start = ((1.0 - fraction) * self.load_series.len() as f64) as usize;
        mean(self.load_series[start..].iter().map(|&l| l as f64))
    }

    pub fn mean_load(&self) -> f64 {
        mean(self.load_series.iter().map(|&l| l as f64))
    }

    pub fn mean_delivery_time(&self) -> f64 {
        mean(self.delivery_times.iter().map(|&t| t as f64))
    }

    /// Learning fraction at the first sample with clock ≥ `step`.
    pub fn learning_at(&self, step: u64) -> Option<f64> {
        self.learning_series
            .iter()
            .find(|(t, _)| *t >= step)
            .map(|&(_, f)| f)
    }

    /// Transmission intervals as `(interval, count)` pairs with nonzero count.
    pub fn dt_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.dt_counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(d, &c)| (d as f64, c as f64))
    }
}

pub fn build_report(
    config: &SimConfig,
    topology: &NetworkTopology,
    state: &SimState,
    load_series: Vec<u64>,
    created_series: Vec<u64>,
    learning_series: Vec<(u64, f64)>,
) -> RunReport {
    let n = topology.node_count();
    let jam = detect_jam(
        &load_series,
        &created_series,
        n,
        config.queue_cap,
        config.jam_threshold_fraction,
    );
    let log = state.delivered_log();
    RunReport {
        config: config.clone(),
        node_count: n,
        directed_edges: topology.directed_edge_count(),
        delivery_times: log.iter().map(DeliveryRecord::delivery_time).collect(),
        mean_delivery_series: mean_delivery_series(log, state.clock(), config.mean_delivery_window),
        dt_counts: state.dt_counts().to_vec(),
        learning_series,
        jam,
        counters: state.counters(),
        final_in_flight: state.in_flight() as u64,
        load_series,
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

/// Ordinary least-squares slope and intercept of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    (slope, my - slope * mx)
}

/// Least-squares slope of a series against its index.
pub fn linear_trend(series: &[f64]) -> f64 {
    let xs: Vec<f64> = (0..series.len()).map(|i| i as f64).collect();
    linear_fit(&xs, series).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// Fits `log10 y = slope · log10 x + intercept` over points with
/// `lo <= x <= hi`.
pub fn fit_loglog_slope(
    x: &[f64],
    y: &[f64],
    range: (f64, f64),
) -> Result<LogLogFit, MetricsError> {
    let (lo, hi) = range;
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&xv, &yv) in x.iter().zip(y) {
        if xv < lo || xv > hi {
            continue;
        }
        if xv <= 0.0 || yv <= 0.0 {
            return Err(MetricsError::NonPositive { x: xv, y: yv });
        }
        lx.push(xv.log10());
        ly.push(yv.log10());
    }
    if lx.len() < MIN_FIT_POINTS {
        return Err(MetricsError::TooFewPoints {
            needed: MIN_FIT_POINTS,
            found: lx.len(),
        });
    }
    let (slope, intercept) = linear_fit(&lx, &ly);
    Ok(LogLogFit {
        slope,
        intercept,
        lo,
        hi,
        points: lx.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Cycles per step, `k / segment_length` for `k = 1..=segment_length/2`.
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    pub segments: usize,
}

impl Spectrum {
    /// Frequency range spanning `decades` decades centred (in log space) on
    /// the reported band.
    pub fn middle_range(&self, decades: f64) -> (f64, f64) {
        let lo = self.frequencies[0].log10();
        let hi = self.frequencies[self.frequencies.len() - 1].log10();
        let centre = 0.5 * (lo + hi);
        (
            10f64.powf(centre - decades / 2.0),
            10f64.powf(centre + decades / 2.0),
        )
    }

    pub fn fit(&self, range: (f64, f64)) -> Result<LogLogFit, MetricsError> {
        fit_loglog_slope(&self.frequencies, &self.power, range)
    }

    /// Slope over the middle two decades.
    pub fn fit_middle(&self) -> Result<LogLogFit, MetricsError> {
        self.fit(self.middle_range(2.0))
    }
}

/// Segment-averaged periodogram with the mean removed per segment.
///
/// The series is cut into non-overlapping segments of `segment_length`
/// (a trailing remainder is dropped). For each segment the power at bin `k`
/// is `|X_k|² / segment_length`; bins `1..=segment_length/2` are averaged
/// across segments. The DC bin is not reported.
pub fn power_spectrum(series: &[f64], segment_length: usize) -> Result<Spectrum, MetricsError> {
    if segment_length < 8 || !segment_length.is_power_of_two() {
        return Err(MetricsError::BadSegmentLength(segment_length));
    }
    if series.len() < segment_length {
        return Err(MetricsError::SeriesTooShort {
            len: series.len(),
            segment: segment_length,
        });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_length);
    let bins = segment_length / 2;
    let mut power = vec![0.0; bins];
    let mut buffer = vec![Complex::new(0.0, 0.0); segment_length];
    let segments = series.len() / segment_length;
    for chunk in series.chunks_exact(segment_length) {
        let m = chunk.iter().sum::<f64>() / segment_length as f64;
        for (slot, &v) in buffer.iter_mut().zip(chunk) {
            *slot = Complex::new(v - m, 0.0);
        }
        fft.process(&mut buffer);
        for (k, p) in power.iter_mut().enumerate() {
            *p += buffer[k + 1].norm_sqr() / segment_length as f64;
        }
    }
    for p in &mut power {
        *p /= segments as f64;
    }
    let frequencies = (1..=bins)
        .map(|k| k as f64 / segment_length as f64)
        .collect();
    Ok(Spectrum {
        frequencies,
        power,
        segments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Binning {
    /// Bins of fixed width starting at the smallest sample.
    Linear { width: f64 },
    /// Bin edges `x0·r^i` starting at the smallest (positive) sample.
    Logarithmic { ratio: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `edges[i]..edges[i+1]` is bin `i`.
    pub edges: Vec<f64>,
    /// Arithmetic midpoint for linear bins, geometric midpoint for log bins.
    pub centers: Vec<f64>,
    /// Count per bin divided by total count and bin width.
    pub density: Vec<f64>,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.edges.windows(2).map(|w| w[1] - w[0])
    }

    /// Σ density · width; 1 up to rounding.
    pub fn integral(&self) -> f64 {
        self.density
            .iter()
            .zip(self.widths())
            .map(|(d, w)| d * w)
            .sum()
    }

    /// Bins with positive density as `(centers, density)`, ready for a
    /// log-log fit.
    pub fn positive(&self) -> (Vec<f64>, Vec<f64>) {
        self.centers
            .iter()
            .zip(&self.density)
            .filter(|(_, &d)| d > 0.0)
            .map(|(&c, &d)| (c, d))
            .unzip()
    }
}

pub fn histogram(samples: &[f64], binning: Binning) -> Result<Histogram, MetricsError> {
    weighted_histogram(samples.iter().map(|&s| (s, 1.0)), binning)
}

/// Histogram of `(value, weight)` pairs, e.g. a dense count table.
pub fn weighted_histogram(
    samples: impl IntoIterator<Item = (f64, f64)>,
    binning: Binning,
) -> Result<Histogram, MetricsError> {
    let samples: Vec<(f64, f64)> = samples.into_iter().filter(|&(_, w)| w > 0.0).collect();
    if samples.is_empty() {
        return Err(MetricsError::EmptySample);
    }
    let min = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let max = samples
        .iter()
        .map(|s| s.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = samples.iter().map(|s| s.1).sum();

    let mut edges = vec![min];
    match binning {
        Binning::Linear { width } => {
            if width.is_nan() || width <= 0.0 {
                return Err(MetricsError::BadBinning(format!("width {width}")));
            }
            while *edges.last().unwrap() <= max {
                edges.push(min + width * edges.len() as f64);
            }
        }
        Binning::Logarithmic { ratio } => {
            if ratio.is_nan() || ratio <= 1.0 {
                return Err(MetricsError::BadBinning(format!("ratio {ratio}")));
            }
            if min <= 0.0 {
                return Err(MetricsError::BadBinning(
                    "log bins need positive samples".into(),
                ));
            }
            while *edges.last().unwrap() <= max {
                edges.push(min * ratio.powi(edges.len() as i32));
            }
        }
    }

    let bins = edges.len() - 1;
    let mut counts = vec![0.0; bins];
    for (value, weight) in samples {
        // partition_point gives the first edge > value; the bin is one below.
        let idx = edges.partition_point(|&e| e <= value) - 1;
        counts[idx.min(bins - 1)] += weight;
    }
    let centers = edges
        .windows(2)
        .map(|w| match binning {
            Binning::Linear { .. } => 0.5 * (w[0] + w[1]),
            Binning::Logarithmic { .. } => (w[0] * w[1]).sqrt(),
        })
        .collect();
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(&c, w)| c / (total * (w[1] - w[0])))
        .collect();
    Ok(Histogram {
        edges,
        centers,
        density,
        counts,
    })
}

pub fn learning_fraction(state: &SimState) -> f64 {
    state.learning_fraction()
}

/// Fraction of the run, at its end, over which the growth trend is fitted.
pub const GROWTH_WINDOW_FRACTION: f64 = 0.2;
/// Fraction of the run, at its end, over which the accumulation ratio is
/// measured.
pub const ACCUMULATION_WINDOW_FRACTION: f64 = 0.5;
/// Accumulation ratio above which a run counts as jammed.
pub const ACCUMULATION_JAM_LEVEL: f64 = 0.05;

/// Jam verdict for a load series.
///
/// A run is jammed if the load ever exceeds `threshold_fraction · n ·
/// queue_cap`, or if more than [`ACCUMULATION_JAM_LEVEL`] of the packets
/// created over the final half of the run pile up instead of being
/// delivered. `created` is the cumulative creation count after each step.
pub fn detect_jam(
    load: &[u64],
    created: &[u64],
    n: usize,
    queue_cap: usize,
    threshold_fraction: f64,
) -> JamVerdict {
    let threshold = threshold_fraction * n as f64 * queue_cap as f64;
    let first_crossing = load
        .iter()
        .position(|&l| l as f64 > threshold)
        .map(|i| i as u64 + 1);
    let growth = growth_diagnostic(load, created);
    let accumulating = growth.accumulation > ACCUMULATION_JAM_LEVEL;
    let first_jam_step = first_crossing.or_else(|| {
        accumulating.then(|| {
            let half = 0.5 * growth.mean;
            load.iter()
                .position(|&l| l as f64 > half)
                .map_or(load.len() as u64, |i| i as u64 + 1)
        })
    });
    JamVerdict {
        jammed: first_crossing.is_some() || accumulating,
        first_jam_step,
        threshold,
        threshold_crossed: first_crossing.is_some(),
        growth,
    }
}

pub fn growth_diagnostic(load: &[u64], created: &[u64]) -> GrowthDiagnostic {
    assert_eq!(
        load.len(),
        created.len(),
        "load and creation series must align"
    );
    let len = load.len();
    let window = ((len as f64 * GROWTH_WINDOW_FRACTION).ceil() as usize).min(len);
    let tail: Vec<f64> = load[len - window..].iter().map(|&l| l as f64).collect();
    let m = mean(tail.iter().copied());
    let slope = if tail.len() < 2 {
        0.0
    } else {
        linear_trend(&tail)
    };

    let half = ((len as f64 * ACCUMULATION_WINDOW_FRACTION).ceil() as usize).min(len);
    let accumulation = if half < 2 {
        0.0
    } else {
        let start = len - half;
        let tail: Vec<f64> = load[start..].iter().map(|&l| l as f64).collect();
        let before = if start == 0 { 0 } else { created[start - 1] };
        let rate = (created[len - 1] - before) as f64 / half as f64;
        if rate > 0.0 {
            linear_trend(&tail) / rate
        } else {
            0.0
        }
    };
    GrowthDiagnostic {
        slope,
        mean: m,
        window: window as u64,
        sustained: slope > 0.0 && slope * window as f64 > 0.1 * m,
        accumulation,
    }
}

/// Cumulative and trailing-window mean delivery time sampled every
/// `window` steps.
pub fn mean_delivery_series(
    log: &[DeliveryRecord],
    steps: u64,
    window: u64,
) -> Vec<MeanDeliverySample> {
    let mut out = Vec::new();
    let mut idx = 0;
    let mut cum_sum = 0.0;
    let mut cum_count = 0usize;
    let mut step = window;
    // The log is ordered by delivery time.
    while step <= steps {
        let mut win_sum = 0.0;
        let mut win_count = 0usize;
        while idx < log.len() && log[idx].delivered_at < step {
            let d = log[idx].delivery_time() as f64;
            cum_sum += d;
            cum_count += 1;
            win_sum += d;
            win_count += 1;
            idx += 1;
        }
        out.push(MeanDeliverySample {
            step,
            cumulative: if cum_count > 0 {
                cum_sum / cum_count as f64
            } else {
                f64::NAN
            },
            window: if win_count > 0 {
                win_sum / win_count as f64
            } else {
                f64::NAN
            },
        });
        step += window;
    }
    out
}

/// Fraction of `times` that are `<= cutoff`.
pub fn fraction_at_most(times: &[u64], cutoff: u64) -> f64 {
    if times.is_empty() {
        return f64::NAN;
    }
    times.iter().filter(|&&t| t <= cutoff).count() as f64 / times.len() as f64
}

/// Nearest-rank percentile (`q` in `[0, 1]`).
pub fn percentile(values: &[u64], q: f64) -> Option<u64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}
