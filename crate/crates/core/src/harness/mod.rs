//! Experiment sweeps: one trace per (axis value, seed) cell, every selected
//! algorithm on that identical trace, aggregated into mean and standard
//! error per axis value.

mod output;
pub mod verify;

pub use output::{
    emit_csv, emit_plot, emit_runs, emit_summary, read_csv, render_svg, CsvRow, CSV_HEADER,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{heuristic_run, offline_solve, OfflineMode, OFFLINE_MAX_SLOTS};
use crate::metrics::{RunMetrics, Violations};
use crate::model::NetworkConfig;
use crate::mtep::{self, PlannerParams};
use crate::par::par_map;
use crate::scenario::{generate_trace, ScenarioError, ScenarioParams, Trace};
use crate::twet::{self, ControlError, TwetParams};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("result table is empty")]
    EmptyTable,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Control(#[from] ControlError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Twet,
    Mtep,
    Heu,
    Offline,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Twet,
        Algorithm::Mtep,
        Algorithm::Heu,
        Algorithm::Offline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Twet => "twet",
            Algorithm::Mtep => "mtep",
            Algorithm::Heu => "heu",
            Algorithm::Offline => "offline",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected twet, mtep, heu or offline)"))
    }
}

/// Parses a comma-separated algorithm list such as `twet,heu`.
pub fn parse_algorithms(list: &str) -> std::result::Result<Vec<Algorithm>, String> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// `battery_max` in kWh.
    BatteryCapacity,
    /// Common SINR target of all users, in dB.
    SinrTarget,
    /// Mean harvest in kWh per slot.
    HarvestRate,
    /// Penalty weight V of both online controllers.
    #[serde(rename = "V")]
    Weight,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BatteryCapacity => "battery_capacity",
            SweepAxis::SinrTarget => "sinr_target",
            SweepAxis::HarvestRate => "harvest_rate",
            SweepAxis::Weight => "V",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::BatteryCapacity => "Battery capacity (kWh)",
            SweepAxis::SinrTarget => "SINR target (dB)",
            SweepAxis::HarvestRate => "Harvest rate (kWh/slot)",
            SweepAxis::Weight => "Penalty weight V",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [
            SweepAxis::BatteryCapacity,
            SweepAxis::SinrTarget,
            SweepAxis::HarvestRate,
            SweepAxis::Weight,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| format!("unknown sweep axis `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of the emitted files (`<name>.csv`, `<name>.svg`, ...).
    pub name: String,
    pub network: NetworkConfig,
    /// `scenario.seed` is the master seed of the sweep.
    pub scenario: ScenarioParams,
    pub algorithms: Vec<Algorithm>,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    pub num_seeds: usize,
    /// Coarse intervals per trace.
    pub num_intervals: usize,
    /// Leading intervals left out of each reported average, so that the
    /// initial battery fill does not bias the long-run estimate.
    pub warmup_intervals: usize,
    #[serde(default)]
    pub twet: TwetParams,
    #[serde(default)]
    pub planner: PlannerParams,
    /// Default output directory of the CLI.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    fn base(name: &str, axis: SweepAxis, grid: Vec<f64>) -> Self {
        Self {
            name: name.to_string(),
            network: NetworkConfig::default(),
            scenario: ScenarioParams::default(),
            algorithms: Algorithm::ALL.to_vec(),
            axis,
            grid,
            num_seeds: 10,
            num_intervals: 100,
            warmup_intervals: 20,
            twet: TwetParams::default(),
            planner: PlannerParams::default(),
            output_dir: None,
        }
    }

    /// Cost versus battery capacity, 40 to 120 kWh.
    pub fn battery_sweep() -> Self {
        Self::base(
            "battery",
            SweepAxis::BatteryCapacity,
            vec![40.0, 60.0, 80.0, 100.0, 120.0],
        )
    }

    /// Cost versus SINR target, 1 to 9 dB.
    pub fn sinr_sweep() -> Self {
        Self::base("sinr", SweepAxis::SinrTarget, vec![1.0, 3.0, 5.0, 7.0, 9.0])
    }

    /// Cost versus mean harvest rate.
    pub fn harvest_sweep() -> Self {
        Self::base(
            "harvest",
            SweepAxis::HarvestRate,
            vec![0.8, 1.2, 1.6, 2.0, 2.4],
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "battery" => Some(Self::battery_sweep()),
            "sinr" => Some(Self::sinr_sweep()),
            "harvest" => Some(Self::harvest_sweep()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.grid.is_empty() {
            return bad("axis grid is empty".into());
        }
        if let Some(v) = self.grid.iter().find(|v| !v.is_finite()) {
            return bad(format!("non-finite grid value {v}"));
        }
        if self.num_seeds == 0 {
            return bad("need at least one seed".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return bad("algorithm listed twice".into());
        }
        if self.num_intervals == 0 || self.warmup_intervals >= self.num_intervals {
            return bad(format!(
                "need warmup_intervals ({}) < num_intervals ({})",
                self.warmup_intervals, self.num_intervals
            ));
        }
        let slots = self.num_intervals * self.network.interval_len;
        if self.algorithms.contains(&Algorithm::Offline) && slots > OFFLINE_MAX_SLOTS {
            return bad(format!(
                "offline needs a horizon of at most {OFFLINE_MAX_SLOTS} slots, got {slots}"
            ));
        }
        for &v in &self.grid {
            let (cfg, params, _) = self.cell_setup(v);
            cfg.validate()
                .map_err(|e| HarnessError::Config(format!("axis value {v}: {e}")))?;
            params
                .validate()
                .map_err(|e| HarnessError::Config(format!("axis value {v}: {e}")))?;
        }
        Ok(())
    }

    /// Network, scenario and controller parameters at one axis value.
    pub fn cell_setup(&self, value: f64) -> (NetworkConfig, ScenarioParams, TwetParams) {
        let mut cfg = self.network.clone();
        let mut params = self.scenario.clone();
        let mut twet = self.twet.clone();
        match self.axis {
            SweepAxis::BatteryCapacity => cfg.battery_max = value,
            SweepAxis::SinrTarget => cfg = cfg.with_sinr_db(value),
            SweepAxis::HarvestRate => params.res_rate = value,
            SweepAxis::Weight => twet.penalty_weight = Some(value),
        }
        (cfg, params, twet)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| HarnessError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Seed of the trace for seed index `index`: a pure function of the master
/// seed, shared by every axis value (common random numbers).
pub fn derive_seed(master: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index as u64 + 1);
    rng.next_u64()
}

/// One (axis value, seed, algorithm) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub seed: usize,
    pub algorithm: Algorithm,
    /// Average cost after the warm-up; `None` when the run failed.
    pub avg_cost: Option<f64>,
    /// Wall time of the run in seconds.
    pub wall_time_s: f64,
    pub trace_checksum: String,
    pub violations: Violations,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub name: String,
    pub axis: SweepAxis,
    pub rows: Vec<RunRow>,
}

impl ResultTable {
    pub fn failures(&self) -> impl Iterator<Item = &RunRow> {
        self.rows.iter().filter(|r| r.error.is_some())
    }

    pub fn cost(&self, value: f64, seed: usize, algorithm: Algorithm) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.axis_value == value && r.seed == seed && r.algorithm == algorithm)
            .and_then(|r| r.avg_cost)
    }
}

/// Mean of `series` after skipping `skip` leading entries.
pub fn window_average(series: &[f64], skip: usize) -> Option<f64> {
    let tail = series.get(skip..)?;
    (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64)
}

/// Runs one algorithm on a trace and returns its full metrics.
pub fn run_algorithm(
    algorithm: Algorithm,
    trace: &Trace,
    twet: &TwetParams,
    planner: &PlannerParams,
) -> std::result::Result<RunMetrics, ControlError> {
    match algorithm {
        Algorithm::Twet => twet::run(trace, twet),
        Algorithm::Mtep => mtep::run(trace, twet, planner),
        Algorithm::Heu => heuristic_run(trace),
        Algorithm::Offline => offline_solve(trace, OfflineMode::TwoTimescale).map(|r| r.metrics),
    }
}

fn run_cell(config: &ExperimentConfig, value: f64, seed: usize) -> Vec<RunRow> {
    let (cfg, mut params, twet) = config.cell_setup(value);
    params.seed = derive_seed(config.scenario.seed, seed);
    let planner = PlannerParams {
        seed: params.seed,
        ..config.planner.clone()
    };
    let row = |algorithm, avg_cost, wall_time_s, trace_checksum: &str, violations, error| RunRow {
        axis: config.axis,
        axis_value: value,
        seed,
        algorithm,
        avg_cost,
        wall_time_s,
        trace_checksum: trace_checksum.to_string(),
        violations,
        error,
    };
    let trace = generate_trace(&cfg, &params, config.num_intervals).and_then(|t| {
        let sum = t.checksum()?;
        Ok((t, sum))
    });
    let (trace, checksum) = match trace {
        Ok(t) => t,
        Err(e) => {
            return config
                .algorithms
                .iter()
                .map(|&a| {
                    row(
                        a,
                        None,
                        0.0,
                        "",
                        Violations::default(),
                        Some(format!("trace: {e}")),
                    )
                })
                .collect()
        }
    };
    let skip = config.warmup_intervals * cfg.interval_len;
    config
        .algorithms
        .iter()
        .map(|&a| {
            let start = Instant::now();
            let result = run_algorithm(a, &trace, &twet, &planner);
            let wall = start.elapsed().as_secs_f64();
            match result {
                Ok(m) => row(
                    a,
                    window_average(&m.cost_series, skip),
                    wall,
                    &checksum,
                    m.violations,
                    None,
                ),
                Err(e) => row(
                    a,
                    None,
                    wall,
                    &checksum,
                    Violations::default(),
                    Some(e.to_string()),
                ),
            }
        })
        .collect()
}

/// Runs every cell of the sweep on `jobs` workers. Rows come back sorted by
/// axis value, seed and algorithm, independent of the schedule.
pub fn run_experiment(config: &ExperimentConfig, jobs: usize) -> Result<ResultTable> {
    config.validate()?;
    let cells: Vec<(usize, f64, usize)> = config
        .grid
        .iter()
        .enumerate()
        .flat_map(|(j, &v)| (0..config.num_seeds).map(move |s| (j, v, s)))
        .collect();
    let mut rows: Vec<(usize, RunRow)> = par_map(&cells, jobs, |&(j, v, s)| {
        run_cell(config, v, s)
            .into_iter()
            .map(|r| (j, r))
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let order = |a: Algorithm| {
        config
            .algorithms
            .iter()
            .position(|&x| x == a)
            .unwrap_or(usize::MAX)
    };
    rows.sort_by_key(|(j, r)| (*j, r.seed, order(r.algorithm)));
    Ok(ResultTable {
        name: config.name.clone(),
        axis: config.axis,
        rows: rows.into_iter().map(|(_, r)| r).collect(),
    })
}

/// Mean and standard error of one algorithm at one axis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub axis_value: f64,
    pub algorithm: Algorithm,
    /// Successful runs contributing.
    pub count: usize,
    pub mean: f64,
    /// Standard error of the mean over seeds (0 for a single run).
    pub stderr: f64,
}

/// Aggregates successful rows per (axis value, algorithm), in first-seen order.
pub fn aggregate(rows: &[RunRow]) -> Vec<AggregateRow> {
    aggregate_points(rows.iter().map(|r| (r.axis_value, r.algorithm, r.avg_cost)))
}

/// Same aggregation recomputed from a parsed CSV.
pub fn aggregate_csv(rows: &[CsvRow]) -> Vec<AggregateRow> {
    aggregate_points(rows.iter().map(|r| (r.axis_value, r.algorithm, r.avg_cost)))
}

fn aggregate_points(
    points: impl Iterator<Item = (f64, Algorithm, Option<f64>)>,
) -> Vec<AggregateRow> {
    let mut groups: Vec<(f64, Algorithm, Vec<f64>)> = Vec::new();
    for (v, a, cost) in points {
        let idx = match groups.iter().position(|g| g.0 == v && g.1 == a) {
            Some(idx) => idx,
            None => {
                groups.push((v, a, Vec::new()));
                groups.len() - 1
            }
        };
        groups[idx].2.extend(cost);
    }
    groups
        .into_iter()
        .filter_map(|(v, a, xs)| {
            let (mean, stderr) = mean_stderr(&xs)?;
            Some(AggregateRow {
                axis_value: v,
                algorithm: a,
                count: xs.len(),
                mean,
                stderr,
            })
        })
        .collect()
}

/// Sample mean and standard error; `None` for an empty sample.
pub fn mean_stderr(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

/// Files written by [`emit_all`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
    pub runs: PathBuf,
}

/// Writes `<name>.csv`, `<name>_summary.csv`, `<name>.svg` and
/// `<name>.runs.json` into `dir`. Wall times only reach the CSV when
/// `record_runtime` is set; otherwise the column is zero so that repeated
/// sweeps are byte-identical.
pub fn emit_all(table: &ResultTable, dir: &Path, record_runtime: bool) -> Result<EmittedFiles> {
    if table.rows.is_empty() {
        return Err(HarnessError::EmptyTable);
    }
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = EmittedFiles {
        csv: dir.join(format!("{}.csv", table.name)),
        summary: dir.join(format!("{}_summary.csv", table.name)),
        plot: dir.join(format!("{}.svg", table.name)),
        runs: dir.join(format!("{}.runs.json", table.name)),
    };
    emit_csv(table, &files.csv, record_runtime)?;
    emit_summary(table, &files.summary)?;
    emit_plot(table, &files.plot)?;
    emit_runs(table, &files.runs)?;
    Ok(files)
}
