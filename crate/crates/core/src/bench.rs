//! Experiment harness: random starting points, run grids, bootstrap
//! intervals and the CSV tables derived from them.
//!
//! Every run is seeded from a hash of its grid cell and start index, so the
//! records do not depend on thread scheduling. Starting points depend only on
//! the scheme and the start index, which means DCA and BDCA (and every
//! parameter configuration) start from the same points.

use std::cmp::Ordering;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::data::{quantile_linear, ScenarioSet, UNDEFINED};
use crate::error::{Error, Result};
use crate::objective::{self, ProblemSpec};
use crate::solvers::{self, Algorithm, SolverConfig};

pub const NEAR_UNIFORM_CONCENTRATION: f64 = 350.0;
pub const SKEWED_CONCENTRATION: f64 = 0.1;
/// Default bootstrap resample count.
pub const DEFAULT_RESAMPLES: usize = 100_000;

/// Bench thresholds on gross returns.
pub const BENCH_R_MINS: [f64; 5] = [0.96, 0.966, 0.968, 0.97, 0.972];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeId {
    NearUniform,
    Skewed,
}

impl SchemeId {
    pub fn default_concentration(self) -> f64 {
        match self {
            SchemeId::NearUniform => NEAR_UNIFORM_CONCENTRATION,
            SchemeId::Skewed => SKEWED_CONCENTRATION,
        }
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeId::NearUniform => "near_uniform",
            SchemeId::Skewed => "skewed",
        })
    }
}

impl FromStr for SchemeId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "near_uniform" | "1" => Ok(SchemeId::NearUniform),
            "skewed" | "2" => Ok(SchemeId::Skewed),
            other => Err(Error::invalid(format!("unknown scheme `{other}`"))),
        }
    }
}

/// Symmetric Dirichlet starting-point generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitScheme {
    pub scheme_id: SchemeId,
    pub concentration: f64,
    pub seed: u64,
}

impl InitScheme {
    pub fn new(scheme_id: SchemeId, seed: u64) -> Self {
        Self {
            scheme_id,
            concentration: scheme_id.default_concentration(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::invalid(format!(
                "concentration {} must be positive",
                self.concentration
            )));
        }
        Ok(())
    }
}

/// Hashes a sequence of tagged fields into a 64-bit seed.
#[derive(Default)]
struct SeedHasher(Sha256);

impl SeedHasher {
    fn str(mut self, s: &str) -> Self {
        self.0.update((s.len() as u64).to_le_bytes());
        self.0.update(s.as_bytes());
        self
    }

    fn u64(mut self, v: u64) -> Self {
        self.0.update(v.to_le_bytes());
        self
    }

    fn f64(self, v: f64) -> Self {
        self.u64(v.to_bits())
    }

    fn finish(self) -> u64 {
        let digest = self.0.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

/// Draw `draw_index` of the scheme's Dirichlet stream, on the simplex.
pub fn sample_start(scheme: &InitScheme, n: usize, draw_index: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("starting points need at least two assets"));
    }
    scheme.validate()?;
    let seed = SeedHasher::default()
        .str("start")
        .str(&scheme.scheme_id.to_string())
        .f64(scheme.concentration)
        .u64(scheme.seed)
        .u64(draw_index as u64)
        .finish();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(scheme.concentration, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    loop {
        let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = w.iter().sum();
        // tiny shapes can underflow every coordinate
        if total > 0.0 && total.is_finite() {
            w.iter_mut().for_each(|x| *x /= total);
            return Ok(w);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub id: String,
    pub scenarios: Arc<ScenarioSet>,
}

/// One penalty/step configuration of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConfig {
    pub label: String,
    pub tau: f64,
    pub rho: f64,
    pub beta: f64,
    pub adaptive: bool,
}

impl ParamConfig {
    pub fn fixed(tau: f64, rho: f64, beta: f64) -> Self {
        Self {
            label: format!("tau={tau}_rho={rho}_beta={beta}"),
            tau,
            rho,
            beta,
            adaptive: false,
        }
    }

    /// The adaptive schedule; `tau`, `rho` and `beta` are placeholders that
    /// the solver replaces.
    pub fn adaptive() -> Self {
        Self {
            label: "adaptive".into(),
            tau: solvers::TAU0,
            rho: 1.0,
            beta: 0.9,
            adaptive: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentGrid {
    pub datasets: Vec<Dataset>,
    pub r_mins: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub schemes: Vec<InitScheme>,
    pub starts: usize,
    pub configs: Vec<ParamConfig>,
    pub alpha: f64,
    pub gamma: Option<f64>,
    /// Stopping rule, limits and subproblem tolerance shared by every run.
    /// Its algorithm, beta, adaptive flag and seed are set per run.
    pub solver: SolverConfig,
    pub master_seed: u64,
}

impl ExperimentGrid {
    pub fn n_runs(&self) -> usize {
        self.datasets.len()
            * self.r_mins.len()
            * self.algorithms.len()
            * self.schemes.len()
            * self.configs.len()
            * self.starts
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("datasets", self.datasets.is_empty()),
            ("r_min values", self.r_mins.is_empty()),
            ("algorithms", self.algorithms.is_empty()),
            ("schemes", self.schemes.is_empty()),
            ("configs", self.configs.is_empty()),
            ("starts", self.starts == 0),
        ];
        if let Some((what, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::invalid(format!("experiment grid has no {what}")));
        }
        for s in &self.schemes {
            s.validate()?;
        }
        for d in &self.datasets {
            for &r_min in &self.r_mins {
                for c in &self.configs {
                    let spec = ProblemSpec::new(d.scenarios.clone(), self.alpha, self.gamma, r_min, c.tau, c.rho)?;
                    spec.validate()?;
                    SolverConfig {
                        beta: c.beta,
                        adaptive: c.adaptive,
                        ..self.solver.clone()
                    }
                    .validate()?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub dataset: String,
    pub r_min: f64,
    pub algorithm: Algorithm,
    pub scheme: SchemeId,
    pub config: String,
    pub start_index: usize,
    pub seed: u64,
    /// Terminal expected gross return `mean . w`.
    pub expected_return: f64,
    pub var: f64,
    pub feasible: bool,
    pub iterations: usize,
    pub kkt_residual: Option<f64>,
    /// Termination reason, or `error` if the solve failed.
    pub reason: String,
    /// Kept out of `records.csv` so that file is reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

struct Task<'a> {
    dataset: &'a Dataset,
    r_min: f64,
    algorithm: Algorithm,
    scheme: &'a InitScheme,
    config: &'a ParamConfig,
    start_index: usize,
}

fn run_seed(master: u64, t: &Task<'_>) -> u64 {
    SeedHasher::default()
        .str("run")
        .u64(master)
        .str(&t.dataset.id)
        .f64(t.r_min)
        .str(&t.algorithm.to_string())
        .str(&t.scheme.scheme_id.to_string())
        .str(&t.config.label)
        .u64(t.start_index as u64)
        .finish()
}

fn run_one(grid: &ExperimentGrid, t: &Task<'_>) -> (RunRecord, Option<solvers::SolveResult>) {
    let seed = run_seed(grid.master_seed, t);
    let clock = Instant::now();
    let mut record = RunRecord {
        dataset: t.dataset.id.clone(),
        r_min: t.r_min,
        algorithm: t.algorithm,
        scheme: t.scheme.scheme_id,
        config: t.config.label.clone(),
        start_index: t.start_index,
        seed,
        expected_return: f64::NAN,
        var: f64::NAN,
        feasible: false,
        iterations: 0,
        kkt_residual: None,
        reason: "error".into(),
        wall_seconds: 0.0,
    };
    let n = t.dataset.scenarios.n_assets();
    let w0 = match sample_start(t.scheme, n, t.start_index) {
        Ok(w) => w,
        Err(_) => crate::simplex::uniform(n),
    };
    let spec = ProblemSpec::new(
        t.dataset.scenarios.clone(),
        grid.alpha,
        grid.gamma,
        t.r_min,
        t.config.tau,
        t.config.rho,
    );
    let config = SolverConfig {
        algorithm: t.algorithm,
        beta: t.config.beta,
        adaptive: t.config.adaptive,
        seed,
        ..grid.solver.clone()
    };
    let outcome = spec.and_then(|spec| solvers::solve(&spec, &w0, &config));
    match &outcome {
        Ok(result) => {
            record.expected_return = result.expected_return;
            record.var = result.var;
            record.feasible = result.feasible;
            record.iterations = result.iterations;
            record.kkt_residual = result.kkt_residual;
            record.reason = result.reason.to_string();
        }
        Err(_) => {
            // Report the start so the cell is never dropped.
            let mean = t.dataset.scenarios.mean_returns();
            record.expected_return = mean.iter().zip(&w0).map(|(m, w)| m * w).sum();
            if let Ok(spec) = ProblemSpec::new(
                t.dataset.scenarios.clone(),
                grid.alpha,
                grid.gamma,
                t.r_min,
                t.config.tau,
                t.config.rho,
            ) {
                if let Ok(v) = objective::phi(&spec, &w0) {
                    record.var = v.var;
                    record.feasible = v.feasible;
                }
            }
        }
    }
    record.wall_seconds = clock.elapsed().as_secs_f64();
    (record, outcome.ok())
}

/// Runs every cell of the grid on `jobs` threads (all cores if `None`).
/// Records come back in grid order: dataset, r_min, algorithm, scheme,
/// config, start.
pub fn run_experiment(grid: &ExperimentGrid, jobs: Option<usize>) -> Result<Vec<RunRecord>> {
    run_experiment_observed(grid, jobs, |_, _| {})
}

/// [`run_experiment`], calling `observe` on each worker with the record and
/// the full solve result (absent when the solve failed).
pub fn run_experiment_observed<F>(grid: &ExperimentGrid, jobs: Option<usize>, observe: F) -> Result<Vec<RunRecord>>
where
    F: Fn(&RunRecord, Option<&solvers::SolveResult>) + Sync,
{
    grid.validate()?;
    let mut tasks = Vec::with_capacity(grid.n_runs());
    for dataset in &grid.datasets {
        for &r_min in &grid.r_mins {
            for &algorithm in &grid.algorithms {
                for scheme in &grid.schemes {
                    for config in &grid.configs {
                        for start_index in 0..grid.starts {
                            tasks.push(Task {
                                dataset,
                                r_min,
                                algorithm,
                                scheme,
                                config,
                                start_index,
                            });
                        }
                    }
                }
            }
        }
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::invalid("jobs must be at least 1"));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder.build().map_err(|e| Error::Domain(e.to_string()))?;
    Ok(pool.install(|| {
        tasks
            .par_iter()
            .map(|t| {
                let (record, result) = run_one(grid, t);
                observe(&record, result.as_ref());
                record
            })
            .collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Median,
    /// Mean of 0/1 indicators.
    Fraction,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub statistic: Statistic,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    /// Family-wide level before the Bonferroni adjustment.
    pub level: f64,
    pub resamples: usize,
    pub comparisons: usize,
}

impl BootstrapCI {
    /// Per-interval level after dividing the miss rate by `comparisons`.
    pub fn adjusted_level(&self) -> f64 {
        adjusted_level(self.level, self.comparisons)
    }
}

fn adjusted_level(level: f64, m: usize) -> f64 {
    1.0 - (1.0 - level) / m as f64
}

/// Median with the two middle values averaged; reorders `buf`.
fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (left, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = left.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

fn statistic_value(statistic: Statistic, buf: &mut [f64]) -> f64 {
    match statistic {
        Statistic::Median => median_in_place(buf),
        Statistic::Fraction => buf.iter().sum::<f64>() / buf.len() as f64,
    }
}

/// Percentile bootstrap. Resample `b` draws `n` indices with
/// `gen_range(0..n)` from a ChaCha8 stream seeded by `seed`.
pub fn bootstrap_ci(
    values: &[f64],
    statistic: Statistic,
    b: usize,
    level: f64,
    m: usize,
    seed: u64,
) -> Result<BootstrapCI> {
    if values.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("bootstrap values must be finite"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("level {level} must lie in (0, 1)")));
    }
    if b == 0 || m == 0 {
        return Err(Error::invalid("resamples and comparisons must be at least 1"));
    }
    let mut buf = values.to_vec();
    let point = statistic_value(statistic, &mut buf);
    let mut ci = BootstrapCI {
        statistic,
        point,
        lower: point,
        upper: point,
        level,
        resamples: b,
        comparisons: m,
    };
    let n = values.len();
    if n == 1 {
        return Ok(ci);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(b);
    for _ in 0..b {
        for slot in buf.iter_mut() {
            *slot = values[rng.random_range(0..n)];
        }
        stats.push(statistic_value(statistic, &mut buf));
    }
    stats.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - adjusted_level(level, m));
    ci.lower = quantile_linear(&stats, tail).min(point);
    ci.upper = quantile_linear(&stats, 1.0 - tail).max(point);
    Ok(ci)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            level: 0.95,
            seed: 0,
        }
    }
}

/// One row per (dataset, r_min, algorithm, scheme, config).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub r_min: f64,
    pub algorithm: Algorithm,
    pub scheme: SchemeId,
    pub config: String,
    pub runs: usize,
    pub errors: usize,
    pub infeasible_count: usize,
    pub infeasible: BootstrapCI,
    /// Over feasible runs; `None` when there are none.
    pub median_return: Option<BootstrapCI>,
    pub median_iterations: BootstrapCI,
    /// `None` after reading a summary back without its timing table.
    pub median_seconds: Option<BootstrapCI>,
    /// Best feasible return over all records with this dataset and r_min.
    pub best_known_return: Option<f64>,
}

impl SummaryRow {
    pub fn infeasible_fraction(&self) -> f64 {
        self.infeasible_count as f64 / self.runs as f64
    }
}

type CellKey = (String, f64, Algorithm, SchemeId, String);

fn cmp_key(a: &CellKey, b: &CellKey) -> Ordering {
    a.0.cmp(&b.0)
        .then(a.1.total_cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(a.3.cmp(&b.3))
        .then(a.4.cmp(&b.4))
}

fn key_of(r: &RunRecord) -> CellKey {
    (r.dataset.clone(), r.r_min, r.algorithm, r.scheme, r.config.clone())
}

fn cell_seed(seed: u64, key: &CellKey, what: &str) -> u64 {
    SeedHasher::default()
        .str("bootstrap")
        .u64(seed)
        .str(&key.0)
        .f64(key.1)
        .str(&key.2.to_string())
        .str(&key.3.to_string())
        .str(&key.4)
        .str(what)
        .finish()
}

/// Summarizes records per cell. Rows are sorted by key and the result does
/// not depend on record order. The Bonferroni divisor of a row is the number
/// of cells sharing its dataset and r_min.
pub fn aggregate(records: &[RunRecord], opts: &AggregateOptions) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::invalid("no records to aggregate"));
    }
    let mut sorted: Vec<&RunRecord> = records.iter().collect();
    sorted.sort_by(|a, b| {
        cmp_key(&key_of(a), &key_of(b))
            .then(a.start_index.cmp(&b.start_index))
            .then(a.seed.cmp(&b.seed))
    });
    let mut cells: Vec<(CellKey, Vec<&RunRecord>)> = Vec::new();
    for r in sorted {
        let key = key_of(r);
        match cells.last_mut() {
            Some((k, rows)) if cmp_key(k, &key) == Ordering::Equal => rows.push(r),
            _ => cells.push((key, vec![r])),
        }
    }

    let same_panel = |a: &CellKey, b: &CellKey| a.0 == b.0 && a.1.total_cmp(&b.1) == Ordering::Equal;
    let mut rows = Vec::with_capacity(cells.len());
    for (key, group) in &cells {
        let m = cells.iter().filter(|(k, _)| same_panel(k, key)).count();
        let best = records
            .iter()
            .filter(|r| r.feasible && same_panel(&key_of(r), key))
            .map(|r| r.expected_return)
            .filter(|v| v.is_finite())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));

        let ci = |values: &[f64], stat, what| {
            bootstrap_ci(values, stat, opts.resamples, opts.level, m, cell_seed(opts.seed, key, what))
        };
        let infeasible: Vec<f64> = group.iter().map(|r| if r.feasible { 0.0 } else { 1.0 }).collect();
        let returns: Vec<f64> = group
            .iter()
            .filter(|r| r.feasible && r.expected_return.is_finite())
            .map(|r| r.expected_return)
            .collect();
        let iterations: Vec<f64> = group.iter().map(|r| r.iterations as f64).collect();
        let seconds: Vec<f64> = group.iter().map(|r| r.wall_seconds).collect();
        rows.push(SummaryRow {
            dataset: key.0.clone(),
            r_min: key.1,
            algorithm: key.2,
            scheme: key.3,
            config: key.4.clone(),
            runs: group.len(),
            errors: group.iter().filter(|r| r.reason == "error").count(),
            infeasible_count: group.iter().filter(|r| !r.feasible).count(),
            infeasible: ci(&infeasible, Statistic::Fraction, "infeasible")?,
            median_return: if returns.is_empty() {
                None
            } else {
                Some(ci(&returns, Statistic::Median, "return")?)
            },
            median_iterations: ci(&iterations, Statistic::Median, "iterations")?,
            median_seconds: Some(ci(&seconds, Statistic::Median, "seconds")?),
            best_known_return: best,
        });
    }
    Ok(rows)
}

/// A float written as `undefined` when absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marked(pub Option<f64>);

impl Serialize for Marked {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str(UNDEFINED),
        }
    }
}

impl<'de> Deserialize<'de> for Marked {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == UNDEFINED {
            return Ok(Marked(None));
        }
        s.parse().map(|v| Marked(Some(v))).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryCsvRow {
    dataset: String,
    r_min: f64,
    algorithm: Algorithm,
    scheme: SchemeId,
    config: String,
    runs: usize,
    errors: usize,
    infeasible_count: usize,
    infeasible_fraction: f64,
    infeasible_lower: f64,
    infeasible_upper: f64,
    median_return: Marked,
    return_lower: Marked,
    return_upper: Marked,
    median_iterations: f64,
    iterations_lower: f64,
    iterations_upper: f64,
    best_known_return: Marked,
    level: f64,
    resamples: usize,
    comparisons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryTimingRow {
    dataset: String,
    r_min: f64,
    algorithm: Algorithm,
    scheme: SchemeId,
    config: String,
    median_seconds: f64,
    seconds_lower: f64,
    seconds_upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingRow {
    dataset: String,
    r_min: f64,
    algorithm: Algorithm,
    scheme: SchemeId,
    config: String,
    start_index: usize,
    wall_seconds: f64,
}

/// Long-format series for plotting: `x` is r_min, `series` is
/// algorithm and scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureRow {
    pub dataset: String,
    pub config: String,
    pub series: String,
    pub x: f64,
    pub y: Marked,
    pub lower: Marked,
    pub upper: Marked,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        row,
        message: e.to_string(),
    }
}

fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<csv output>".into(),
        source: e,
    })
}

fn read_csv<T: for<'de> Deserialize<'de>, R: Read>(input: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(csv_err)
}

pub fn write_records<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    write_csv(records, out)
}

/// Reads `records.csv`; wall times come back as zero.
pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    read_csv(input)
}

pub fn write_timings<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let rows: Vec<TimingRow> = records
        .iter()
        .map(|r| TimingRow {
            dataset: r.dataset.clone(),
            r_min: r.r_min,
            algorithm: r.algorithm,
            scheme: r.scheme,
            config: r.config.clone(),
            start_index: r.start_index,
            wall_seconds: r.wall_seconds,
        })
        .collect();
    write_csv(&rows, out)
}

/// Fills `wall_seconds` from a `timings.csv` written for the same records.
pub fn merge_timings<R: Read>(records: &mut [RunRecord], input: R) -> Result<()> {
    let rows: Vec<TimingRow> = read_csv(input)?;
    if rows.len() != records.len() {
        return Err(Error::shape(format!(
            "{} timing rows for {} records",
            rows.len(),
            records.len()
        )));
    }
    for (r, t) in records.iter_mut().zip(rows) {
        let same = r.dataset == t.dataset
            && r.r_min == t.r_min
            && r.algorithm == t.algorithm
            && r.scheme == t.scheme
            && r.config == t.config
            && r.start_index == t.start_index;
        if !same {
            return Err(Error::shape("timing rows do not match the records"));
        }
        r.wall_seconds = t.wall_seconds;
    }
    Ok(())
}

fn ci_parts(ci: Option<&BootstrapCI>) -> (Marked, Marked, Marked) {
    match ci {
        Some(c) => (Marked(Some(c.point)), Marked(Some(c.lower)), Marked(Some(c.upper))),
        None => (Marked(None), Marked(None), Marked(None)),
    }
}

pub fn write_summary<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let flat: Vec<SummaryCsvRow> = rows
        .iter()
        .map(|r| {
            let (median_return, return_lower, return_upper) = ci_parts(r.median_return.as_ref());
            SummaryCsvRow {
                dataset: r.dataset.clone(),
                r_min: r.r_min,
                algorithm: r.algorithm,
                scheme: r.scheme,
                config: r.config.clone(),
                runs: r.runs,
                errors: r.errors,
                infeasible_count: r.infeasible_count,
                infeasible_fraction: r.infeasible_fraction(),
                infeasible_lower: r.infeasible.lower,
                infeasible_upper: r.infeasible.upper,
                median_return,
                return_lower,
                return_upper,
                median_iterations: r.median_iterations.point,
                iterations_lower: r.median_iterations.lower,
                iterations_upper: r.median_iterations.upper,
                best_known_return: Marked(r.best_known_return),
                level: r.infeasible.level,
                resamples: r.infeasible.resamples,
                comparisons: r.infeasible.comparisons,
            }
        })
        .collect();
    write_csv(&flat, out)
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let flat: Vec<SummaryCsvRow> = read_csv(input)?;
    flat.into_iter()
        .map(|f| {
            let ci = |statistic, point, lower, upper| BootstrapCI {
                statistic,
                point,
                lower,
                upper,
                level: f.level,
                resamples: f.resamples,
                comparisons: f.comparisons,
            };
            let median_return = match (f.median_return.0, f.return_lower.0, f.return_upper.0) {
                (Some(p), Some(l), Some(u)) => Some(ci(Statistic::Median, p, l, u)),
                (None, None, None) => None,
                _ => return Err(Error::Parse {
                    row: 0,
                    message: "return interval is partially undefined".into(),
                }),
            };
            Ok(SummaryRow {
                infeasible: ci(
                    Statistic::Fraction,
                    f.infeasible_fraction,
                    f.infeasible_lower,
                    f.infeasible_upper,
                ),
                median_return,
                median_iterations: ci(
                    Statistic::Median,
                    f.median_iterations,
                    f.iterations_lower,
                    f.iterations_upper,
                ),
                median_seconds: None,
                best_known_return: f.best_known_return.0,
                dataset: f.dataset,
                r_min: f.r_min,
                algorithm: f.algorithm,
                scheme: f.scheme,
                config: f.config,
                runs: f.runs,
                errors: f.errors,
                infeasible_count: f.infeasible_count,
            })
        })
        .collect()
}

pub fn write_summary_timing<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let flat: Vec<SummaryTimingRow> = rows
        .iter()
        .filter_map(|r| {
            r.median_seconds.map(|c| SummaryTimingRow {
                dataset: r.dataset.clone(),
                r_min: r.r_min,
                algorithm: r.algorithm,
                scheme: r.scheme,
                config: r.config.clone(),
                median_seconds: c.point,
                seconds_lower: c.lower,
                seconds_upper: c.upper,
            })
        })
        .collect();
    write_csv(&flat, out)
}

/// Figure tables keyed by file stem.
pub fn figure_tables(rows: &[SummaryRow]) -> Vec<(&'static str, Vec<FigureRow>)> {
    let series = |r: &SummaryRow| format!("{}_{}", r.algorithm, r.scheme);
    let table = |f: &dyn Fn(&SummaryRow) -> (Marked, Marked, Marked)| -> Vec<FigureRow> {
        rows.iter()
            .map(|r| {
                let (y, lower, upper) = f(r);
                FigureRow {
                    dataset: r.dataset.clone(),
                    config: r.config.clone(),
                    series: series(r),
                    x: r.r_min,
                    y,
                    lower,
                    upper,
                }
            })
            .collect()
    };
    let mut best: Vec<FigureRow> = Vec::new();
    for r in rows {
        let dup = best.iter().any(|b| b.dataset == r.dataset && b.x == r.r_min);
        if !dup {
            best.push(FigureRow {
                dataset: r.dataset.clone(),
                config: String::new(),
                series: "best_known".into(),
                x: r.r_min,
                y: Marked(r.best_known_return),
                lower: Marked(None),
                upper: Marked(None),
            });
        }
    }
    vec![
        ("infeasible_fraction", table(&|r| ci_parts(Some(&r.infeasible)))),
        ("median_return", table(&|r| ci_parts(r.median_return.as_ref()))),
        ("median_iterations", table(&|r| ci_parts(Some(&r.median_iterations)))),
        ("median_seconds", table(&|r| ci_parts(r.median_seconds.as_ref()))),
        ("best_known_return", best),
    ]
}

pub fn read_figure_table<R: Read>(input: R) -> Result<Vec<FigureRow>> {
    read_csv(input)
}

/// Writes `records.csv`, `timings.csv`, `summary.csv`, `summary_timing.csv`
/// and `figure_data/*.csv` under `dir`. Returns the paths written.
pub fn write_outputs(dir: &Path, records: &[RunRecord], summary: &[SummaryRow]) -> Result<Vec<PathBuf>> {
    let figures = dir.join("figure_data");
    fs::create_dir_all(&figures).map_err(|e| io_err(&figures, e))?;
    let mut written = Vec::new();
    let mut emit = |path: PathBuf, f: &dyn Fn(BufWriter<File>) -> Result<()>| -> Result<()> {
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        f(BufWriter::new(file))?;
        written.push(path);
        Ok(())
    };
    emit(dir.join("records.csv"), &|w| write_records(records, w))?;
    emit(dir.join("timings.csv"), &|w| write_timings(records, w))?;
    emit(dir.join("summary.csv"), &|w| write_summary(summary, w))?;
    emit(dir.join("summary_timing.csv"), &|w| write_summary_timing(summary, w))?;
    for (stem, rows) in figure_tables(summary) {
        emit(figures.join(format!("{stem}.csv")), &|w| write_csv(&rows, w))?;
    }
    Ok(written)
}
