//! Experiment configuration, batch runs and file output.
//!
//! Configuration files are flat `key=value` lines; `#` starts a comment.
//! Command-line flags map onto the same keys, so a flag simply overrides the
//! file value.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{self, DeliveryTimeMode, SimConfig, SimError, TopologySource};
use crate::metrics::{self, Binning, JamVerdict, LogLogFit, RunReport};
use crate::routing::Algorithm;
use crate::topology::NetworkTopology;

pub const SUMMARY_FILE: &str = "summary";
/// Learning fraction reported in summaries is taken at this step.
pub const LEARNING_PROBE_STEP: u64 = 5000;
/// Ratio between consecutive edges of the transmission-interval histogram.
pub const DT_BIN_RATIO: f64 = 1.5;
/// Lower end of the transmission-interval tail fit.
pub const DT_TAIL_START: f64 = 10.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("cannot parse {value:?} for key {key:?}")]
    BadValue { key: String, value: String },
    #[error("constraint violated: {0}")]
    Constraint(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("bad summary {path}: {reason}")]
    BadSummary { path: PathBuf, reason: String },
    #[error("need at least two summaries to compare, got {0}")]
    TooFewSummaries(usize),
    #[error("summaries are not comparable: {0}")]
    Incompatible(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Base configuration; `algorithm` and `seed` are replaced per run.
    pub sim: SimConfig,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Every `load_interval`-th step is written to `load.csv`.
    pub load_interval: u64,
    pub segment_length: usize,
    pub fail_on_jam: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let sim = SimConfig::default();
        ExperimentSpec {
            algorithms: vec![sim.algorithm],
            seeds: vec![sim.seed],
            sim,
            out_dir: PathBuf::from("out"),
            load_interval: 1,
            segment_length: metrics::DEFAULT_SEGMENT_LENGTH,
            fail_on_jam: false,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|item| parse_value(key, item))
        .collect()
}

impl ExperimentSpec {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim();
        let value = value.trim();
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        match key {
            "nodes" | "m" => {
                let v: usize = parse_value(key, value)?;
                let (mut nodes, mut m) = match self.sim.topology {
                    TopologySource::Generated { nodes, m } => (nodes, m),
                    TopologySource::File(_) => (1000, 2),
                };
                if key == "nodes" {
                    nodes = v;
                } else {
                    m = v;
                }
                self.sim.topology = TopologySource::Generated { nodes, m };
            }
            "topology_file" => self.sim.topology = TopologySource::File(PathBuf::from(value)),
            "rate" => self.sim.rate = parse_value(key, value)?,
            "steps" => self.sim.steps = parse_value(key, value)?,
            "queue_cap" => self.sim.queue_cap = parse_value(key, value)?,
            "algorithm" | "algorithms" => {
                self.algorithms = value
                    .split(',')
                    .map(|a| a.parse::<Algorithm>().map_err(|_| bad()))
                    .collect::<Result<_, _>>()?;
            }
            "seed" | "seeds" => self.seeds = parse_list(key, value)?,
            "bootstrap" => self.sim.bootstrap = parse_value(key, value)?,
            "delivery_mode" => {
                self.sim.delivery_time_mode = match value.to_ascii_lowercase().as_str() {
                    "total" => DeliveryTimeMode::Total,
                    "remaining" => DeliveryTimeMode::Remaining,
                    _ => return Err(bad()),
                }
            }
            "jam_threshold" => self.sim.jam_threshold_fraction = parse_value(key, value)?,
            "learning_interval" => self.sim.learning_interval = parse_value(key, value)?,
            "mean_delivery_window" => self.sim.mean_delivery_window = parse_value(key, value)?,
            "load_interval" => self.load_interval = parse_value(key, value)?,
            "segment_length" => self.segment_length = parse_value(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "fail_on_jam" => self.fail_on_jam = parse_value(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.algorithms.is_empty() {
            return Err(ConfigError::Constraint("algorithm list is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Constraint("seed list is empty".into()));
        }
        if self.load_interval == 0 {
            return Err(ConfigError::Constraint("load_interval must be >= 1".into()));
        }
        if self.segment_length < 8 || !self.segment_length.is_power_of_two() {
            return Err(ConfigError::Constraint(
                "segment_length must be a power of two >= 8".into(),
            ));
        }
        self.sim
            .validate()
            .map_err(|e| ConfigError::Constraint(e.to_string()))
    }

    /// Writes the spec back in the format read by [`parse_config`].
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let sim = &self.sim;
        match &sim.topology {
            TopologySource::Generated { nodes, m } => {
                let _ = writeln!(out, "nodes={nodes}\nm={m}");
            }
            TopologySource::File(path) => {
                let _ = writeln!(out, "topology_file={}", path.display());
            }
        }
        let join = |items: Vec<String>| items.join(",");
        let _ = writeln!(out, "rate={}", sim.rate);
        let _ = writeln!(out, "steps={}", sim.steps);
        let _ = writeln!(out, "queue_cap={}", sim.queue_cap);
        let _ = writeln!(
            out,
            "algorithms={}",
            join(self.algorithms.iter().map(|a| a.to_string()).collect())
        );
        let _ = writeln!(
            out,
            "seeds={}",
            join(self.seeds.iter().map(|s| s.to_string()).collect())
        );
        let _ = writeln!(out, "bootstrap={}", sim.bootstrap);
        let _ = writeln!(out, "delivery_mode={}", sim.delivery_time_mode.name());
        let _ = writeln!(out, "jam_threshold={}", sim.jam_threshold_fraction);
        let _ = writeln!(out, "learning_interval={}", sim.learning_interval);
        let _ = writeln!(out, "mean_delivery_window={}", sim.mean_delivery_window);
        let _ = writeln!(out, "load_interval={}", self.load_interval);
        let _ = writeln!(out, "segment_length={}", self.segment_length);
        let _ = writeln!(out, "out={}", self.out_dir.display());
        let _ = writeln!(out, "fail_on_jam={}", self.fail_on_jam);
        out
    }

    /// Configuration of a single `(algorithm, seed)` run.
    pub fn run_config(&self, algorithm: Algorithm, seed: u64) -> SimConfig {
        SimConfig {
            algorithm,
            seed,
            ..self.sim.clone()
        }
    }

    pub fn run_dir(&self, algorithm: Algorithm, seed: u64) -> PathBuf {
        self.out_dir
            .join(algorithm.name())
            .join(format!("seed-{seed}"))
    }
}

/// Reads `key=value` lines on top of the defaults, then applies `overrides`
/// in order and validates.
pub fn parse_config_with(
    text: &str,
    overrides: &[(String, String)],
) -> Result<ExperimentSpec, ConfigError> {
    let mut spec = ExperimentSpec::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: idx + 1,
            text: raw.to_string(),
        })?;
        spec.set(key, value)?;
    }
    for (key, value) in overrides {
        spec.set(key, value)?;
    }
    spec.validate()?;
    Ok(spec)
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    parse_config_with(text, &[])
}

/// Per-run digest written to the `summary` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub node_count: usize,
    pub directed_edges: usize,
    pub steps: u64,
    pub mean_load: f64,
    /// Mean load over the final half of the run.
    pub steady_mean_load: f64,
    pub jam: JamVerdict,
    pub created: u64,
    pub delivered: u64,
    pub blocked: u64,
    pub suppressed: u64,
    pub in_flight: u64,
    pub mean_delivery_time: Option<f64>,
    pub spectrum_fit: Option<LogLogFit>,
    pub dt_tail_fit: Option<LogLogFit>,
    pub learning_at_5000: Option<f64>,
    pub config: SimConfig,
}

impl RunSummary {
    pub fn from_report(report: &RunReport, segment_length: usize) -> Self {
        let mean_delivery = report.mean_delivery_time();
        RunSummary {
            algorithm: report.config.algorithm,
            seed: report.config.seed,
            node_count: report.node_count,
            directed_edges: report.directed_edges,
            steps: report.config.steps,
            mean_load: report.mean_load(),
            steady_mean_load: report.tail_mean_load(0.5),
            jam: report.jam,
            created: report.counters.created,
            delivered: report.counters.delivered,
            blocked: report.counters.blocked,
            suppressed: report.counters.suppressed,
            in_flight: report.final_in_flight,
            mean_delivery_time: mean_delivery.is_finite().then_some(mean_delivery),
            spectrum_fit: metrics::power_spectrum(&report.load_as_f64(), segment_length)
                .and_then(|s| s.fit_middle())
                .ok(),
            dt_tail_fit: dt_tail_fit(report).ok(),
            learning_at_5000: report.learning_at(LEARNING_PROBE_STEP),
            config: report.config.clone(),
        }
    }
}

/// Log-binned density of transmission intervals.
pub fn dt_histogram(report: &RunReport) -> Result<metrics::Histogram, metrics::MetricsError> {
    metrics::weighted_histogram(
        report.dt_pairs(),
        Binning::Logarithmic {
            ratio: DT_BIN_RATIO,
        },
    )
}

/// Upper end of the interval tail fit: bins beyond the point where the
/// finite run length cuts the distribution off are excluded. The cut-off is
/// placed at one hundredth of the run length.
pub fn dt_tail_range(steps: u64) -> (f64, f64) {
    (
        DT_TAIL_START,
        (steps as f64 / 100.0).max(DT_TAIL_START * 10.0),
    )
}

pub fn dt_tail_fit(report: &RunReport) -> Result<LogLogFit, metrics::MetricsError> {
    let (x, y) = dt_histogram(report)?.positive();
    metrics::fit_loglog_slope(&x, &y, dt_tail_range(report.config.steps))
}

/// Writes `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), ExperimentError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn csv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

fn opt_f64(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

/// Writes every output file of one run into `dir`.
pub fn write_run_files(
    dir: &Path,
    report: &RunReport,
    spec: &ExperimentSpec,
) -> Result<RunSummary, ExperimentError> {
    let interval = spec.load_interval as usize;
    let load = csv(
        "step,load",
        report
            .load_series
            .iter()
            .enumerate()
            .skip(interval - 1)
            .step_by(interval)
            .map(|(i, l)| format!("{},{l}", i + 1)),
    );
    write_atomic(&dir.join("load.csv"), load.as_bytes())?;

    let times = csv(
        "delivery_time",
        report.delivery_times.iter().map(|t| t.to_string()),
    );
    write_atomic(&dir.join("delivery_times.csv"), times.as_bytes())?;

    let spectrum = metrics::power_spectrum(&report.load_as_f64(), spec.segment_length)
        .map(|s| {
            s.frequencies
                .iter()
                .zip(&s.power)
                .map(|(f, p)| format!("{f},{p}"))
                .collect::<Vec<_>>()
        })
        .unwrap_or_default();
    write_atomic(
        &dir.join("spectrum.csv"),
        csv("freq,power", spectrum.into_iter()).as_bytes(),
    )?;

    let dt_rows = dt_histogram(report)
        .map(|h| {
            h.centers
                .iter()
                .zip(&h.density)
                .map(|(c, d)| format!("{c},{d}"))
                .collect()
        })
        .unwrap_or_else(|_| Vec::new());
    write_atomic(
        &dir.join("dt_hist.csv"),
        csv("bin,density", dt_rows.into_iter()).as_bytes(),
    )?;

    let learning = csv(
        "step,fraction",
        report
            .learning_series
            .iter()
            .map(|(t, f)| format!("{t},{f}")),
    );
    write_atomic(&dir.join("learning.csv"), learning.as_bytes())?;

    let mean_delivery = csv(
        "step,cumulative_mean,window_mean",
        report
            .mean_delivery_series
            .iter()
            .map(|s| format!("{},{},{}", s.step, opt_f64(s.cumulative), opt_f64(s.window))),
    );
    write_atomic(&dir.join("mean_delivery.csv"), mean_delivery.as_bytes())?;

    let summary = RunSummary::from_report(report, spec.segment_length);
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_atomic(&dir.join(SUMMARY_FILE), json.as_bytes())?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<(PathBuf, RunSummary)>,
}

impl ExperimentOutcome {
    pub fn any_jam(&self) -> bool {
        self.runs.iter().any(|(_, s)| s.jam.jammed)
    }
}

/// Runs every `(algorithm, seed)` pair and writes its files under
/// `out/<algorithm>/seed-<seed>/`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, ExperimentError> {
    let mut runs = Vec::new();
    for &seed in &spec.seeds {
        // The topology depends on the seed only, so every algorithm sees the
        // same network for a given seed.
        let topology = spec.run_config(spec.algorithms[0], seed).build_topology()?;
        for &algorithm in &spec.algorithms {
            let config = spec.run_config(algorithm, seed);
            let report = engine::run_on(&config, &topology)?;
            let dir = spec.run_dir(algorithm, seed);
            let summary = write_run_files(&dir, &report, spec)?;
            runs.push((dir, summary));
        }
    }
    write_atomic(
        &spec.out_dir.join("experiment.conf"),
        spec.serialize().as_bytes(),
    )?;
    Ok(ExperimentOutcome { runs })
}

pub fn read_summary(dir: &Path) -> Result<RunSummary, ExperimentError> {
    let path = if dir.is_dir() {
        dir.join(SUMMARY_FILE)
    } else {
        dir.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::BadSummary {
        path: path.clone(),
        reason: e.to_string(),
    })
}

/// Side-by-side table of run summaries; the run with the lowest steady-state
/// mean load is marked with `*`.
pub fn compare(dirs: &[PathBuf]) -> Result<String, ExperimentError> {
    if dirs.len() < 2 {
        return Err(ExperimentError::TooFewSummaries(dirs.len()));
    }
    let summaries = dirs
        .iter()
        .map(|d| read_summary(d))
        .collect::<Result<Vec<_>, _>>()?;
    let first = &summaries[0];
    for s in &summaries[1..] {
        if s.node_count != first.node_count
            || s.steps != first.steps
            || s.config.rate != first.config.rate
            || s.config.queue_cap != first.config.queue_cap
        {
            return Err(ExperimentError::Incompatible(format!(
                "{}/seed-{} differs from {}/seed-{} in nodes, steps, rate or queue capacity",
                s.algorithm, s.seed, first.algorithm, first.seed
            )));
        }
    }
    let best = summaries
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.steady_mean_load.total_cmp(&b.1.steady_mean_load))
        .map(|(i, _)| i)
        .expect("at least two summaries");

    let fmt_opt =
        |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>12} {:>10} {:>12} {:>10} {:>7} {:>10}",
        "run", "steady_load", "d_load", "mean_deliv", "learn@5k", "jam", "jam_step"
    );
    for (i, s) in summaries.iter().enumerate() {
        let label = format!(
            "{}{}/seed-{}",
            if i == best { "*" } else { "" },
            s.algorithm,
            s.seed
        );
        let _ = writeln!(
            out,
            "{:<14} {:>12.2} {:>+10.2} {:>12} {:>10} {:>7} {:>10}",
            label,
            s.steady_mean_load,
            s.steady_mean_load - first.steady_mean_load,
            fmt_opt(s.mean_delivery_time, 1),
            fmt_opt(s.learning_at_5000, 3),
            s.jam.jammed,
            s.jam
                .first_jam_step
                .map_or("-".to_string(), |t| t.to_string()),
        );
    }
    let _ = writeln!(out, "* lowest steady-state mean load");
    Ok(out)
}

/// Exports a topology in the requested text format.
pub fn export_topology(topology: &NetworkTopology, edge_list: bool) -> String {
    if edge_list {
        topology.to_edge_list()
    } else {
        topology.to_adjacency_matrix()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_config() {
        let spec =
            parse_config("nodes=1000\nm=2\nrate=0.1\nalgorithm=CD\nsteps=5000\nseed=1").unwrap();
        assert_eq!(
            spec.sim.topology,
            TopologySource::Generated { nodes: 1000, m: 2 }
        );
        assert_eq!(spec.sim.rate, 0.1);
        assert_eq!(spec.algorithms, vec![Algorithm::Cd]);
        assert_eq!(spec.sim.steps, 5000);
        assert_eq!(spec.seeds, vec![1]);
        assert_eq!(spec.sim.queue_cap, 1000);
        assert_eq!(spec.sim.jam_threshold_fraction, 0.25);
        assert_eq!(spec.sim.delivery_time_mode, DeliveryTimeMode::Total);
    }

    #[test]
    fn comments_and_blank_lines() {
        let spec = parse_config("# paper setup\n\nrate = 0.2  # per step\nalgorithms=std,cd,cdt\n")
            .unwrap();
        assert_eq!(spec.sim.rate, 0.2);
        assert_eq!(
            spec.algorithms,
            vec![Algorithm::Std, Algorithm::Cd, Algorithm::Cdt]
        );
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(
            parse_config("rate=-1"),
            Err(ConfigError::Constraint(_))
        ));
        assert!(matches!(
            parse_config("rate=fast"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            parse_config("colour=blue"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            parse_config("just words"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("algorithm=xyz"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            parse_config("segment_length=100"),
            Err(ConfigError::Constraint(_))
        ));
        assert!(matches!(
            parse_config("nodes=2\nm=2"),
            Err(ConfigError::Constraint(_))
        ));
    }

    #[test]
    fn flags_alone_and_overrides() {
        let flags: Vec<(String, String)> = [
            ("nodes", "50"),
            ("m", "3"),
            ("rate", "0.5"),
            ("steps", "200"),
            ("algorithm", "cdt"),
            ("seeds", "4,5"),
            ("queue_cap", "20"),
            ("delivery_mode", "remaining"),
            ("out", "/tmp/x"),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let spec = parse_config_with("", &flags).unwrap();
        assert_eq!(
            spec.sim.topology,
            TopologySource::Generated { nodes: 50, m: 3 }
        );
        assert_eq!(spec.seeds, vec![4, 5]);
        assert_eq!(spec.sim.delivery_time_mode, DeliveryTimeMode::Remaining);

        let spec = parse_config_with("rate=0.1\nsteps=10", &flags[2..3]).unwrap();
        assert_eq!((spec.sim.rate, spec.sim.steps), (0.5, 10));
    }

    #[test]
    fn serialize_round_trips() {
        let spec =
            parse_config("topology_file=/data/net.txt\nseeds=1,2,3\nbootstrap=false").unwrap();
        assert_eq!(parse_config(&spec.serialize()).unwrap(), spec);
    }
}
