//! Single certification runs and seeded experiment grids.

use std::fmt;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{continuous_bound, hybrid_bound, BaselineReport, BoundReport, CertifyError};
use crate::config::ConfigError;
use crate::csvfmt::num;
use crate::policy::Tolerances;
use crate::sampling::{sample_continuous, sample_hybrid, SamplingConfig, SamplingError};
use crate::solver::{solve_continuous, solve_hybrid, ScenarioSolution, SolverError};
use crate::system::SwitchedSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Hybrid,
    Continuous,
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Hybrid => "hybrid",
            Mode::Continuous => "continuous",
            Mode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(Mode::Hybrid),
            "continuous" => Ok(Mode::Continuous),
            "baseline" => Ok(Mode::Baseline),
            other => Err(format!("unknown mode `{other}` (expected hybrid, continuous or baseline)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("baseline mode has no sampled certification")]
    BaselineMode,
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
}

/// Parameters of one sampled certification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyRequest {
    pub mode: Mode,
    pub horizon: usize,
    pub samples: usize,
    pub noise_radius: f64,
    pub beta: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct CertifyOutcome {
    pub solution: ScenarioSolution,
    pub report: BoundReport,
}

/// Samples, solves and bounds in one go.
pub fn certify_run(
    sys: &SwitchedSystem,
    req: &CertifyRequest,
    tol: &Tolerances,
) -> Result<CertifyOutcome, RunError> {
    let cfg = SamplingConfig::new(req.horizon, req.samples, req.noise_radius, req.seed)?;
    match req.mode {
        Mode::Hybrid => {
            let set = sample_hybrid(sys, &cfg)?;
            let solution = solve_hybrid(&set, tol)?;
            let report = hybrid_bound(
                &solution,
                set.lifted_edge_count,
                &set.observed_pairs(),
                req.beta,
                req.samples,
                req.noise_radius,
            )?;
            Ok(CertifyOutcome { solution, report })
        }
        Mode::Continuous => {
            let set = sample_continuous(sys, &cfg)?;
            let solution = solve_continuous(&set, tol)?;
            let report = continuous_bound(&solution, set.word_count, req.beta, req.samples, req.noise_radius)?;
            Ok(CertifyOutcome { solution, report })
        }
        Mode::Baseline => Err(RunError::BaselineMode),
    }
}

pub const DEFAULT_SAMPLE_COUNTS: [usize; 8] = [50, 100, 200, 500, 1000, 2000, 4000, 8000];

fn default_horizons() -> Vec<usize> {
    vec![1]
}
fn default_sample_counts() -> Vec<usize> {
    DEFAULT_SAMPLE_COUNTS.to_vec()
}
fn default_noise_radii() -> Vec<f64> {
    vec![0.0]
}
fn default_beta() -> f64 {
    0.05
}
fn default_realizations() -> usize {
    20
}
fn default_cycle_max() -> usize {
    12
}
fn default_system() -> String {
    "ncs".into()
}

/// One experiment grid. Every field except `mode` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"ncs"` or a system file, relative paths resolved against the
    /// experiment file's directory.
    #[serde(default = "default_system")]
    pub system: String,
    pub mode: Mode,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<usize>,
    #[serde(default = "default_sample_counts")]
    pub sample_counts: Vec<usize>,
    #[serde(default = "default_noise_radii")]
    pub noise_radii: Vec<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Longest cycle inspected by the baseline lower bound.
    #[serde(default = "default_cycle_max")]
    pub cycle_max: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Fills the `wall_ms` column, which makes output run-dependent.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
}

impl ExperimentConfig {
    pub fn new(mode: Mode) -> Self {
        ExperimentConfig {
            system: default_system(),
            mode,
            horizons: default_horizons(),
            sample_counts: default_sample_counts(),
            noise_radii: default_noise_radii(),
            beta: default_beta(),
            realizations: default_realizations(),
            base_seed: 0,
            cycle_max: default_cycle_max(),
            output: None,
            workers: None,
            record_timing: false,
            tolerances: Tolerances::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            what: "experiment config".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and rebases its relative paths on the file's folder.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.system != "ncs" && Path::new(&cfg.system).is_relative() {
            cfg.system = base.join(&cfg.system).to_string_lossy().into_owned();
        }
        if let Some(out) = &cfg.output {
            if out.is_relative() {
                cfg.output = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, message: &str| {
            Err(ConfigError::Field {
                field: field.into(),
                message: message.into(),
            })
        };
        if self.realizations == 0 {
            return bad("realizations", "must be at least 1");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta", "must lie in (0, 1)");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons", "must be a nonempty list of positive integers");
        }
        if self.mode != Mode::Baseline && (self.sample_counts.is_empty() || self.sample_counts.contains(&0)) {
            return bad("sample_counts", "must be a nonempty list of positive integers");
        }
        if self.noise_radii.is_empty() || self.noise_radii.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("noise_radii", "must be a nonempty list of finite nonnegative radii");
        }
        if self.workers == Some(0) {
            return bad("workers", "must be at least 1");
        }
        if self.cycle_max == 0 {
            return bad("cycle_max", "must be at least 1");
        }
        Ok(())
    }

    /// Every `(l, W, N, realization)` cell in key order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &horizon in &self.horizons {
            for &noise_radius in &self.noise_radii {
                for &samples in &self.sample_counts {
                    for realization in 0..self.realizations {
                        cells.push(Cell {
                            horizon,
                            noise_radius,
                            samples,
                            realization,
                            seed: cell_seed(self.base_seed, horizon, noise_radius, samples, realization),
                        });
                    }
                }
            }
        }
        cells.sort_by(|a, b| a.key_cmp(b));
        cells.dedup_by(|a, b| a.key_cmp(b).is_eq());
        cells
    }

    fn pool(&self) -> rayon::ThreadPool {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(w) = self.workers {
            builder = builder.num_threads(w);
        }
        builder.build().expect("worker pool")
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed of one grid cell.
pub fn cell_seed(base: u64, horizon: usize, noise_radius: f64, samples: usize, realization: usize) -> u64 {
    [horizon as u64, noise_radius.to_bits(), samples as u64, realization as u64]
        .into_iter()
        .fold(splitmix64(base), |h, v| splitmix64(h ^ v))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub horizon: usize,
    pub noise_radius: f64,
    pub samples: usize,
    pub realization: usize,
    pub seed: u64,
}

impl Cell {
    fn key_cmp(&self, other: &Cell) -> std::cmp::Ordering {
        self.horizon
            .cmp(&other.horizon)
            .then(self.noise_radius.total_cmp(&other.noise_radius))
            .then(self.samples.cmp(&other.samples))
            .then(self.realization.cmp(&other.realization))
    }

    fn same_group(&self, other: &Cell) -> bool {
        self.horizon == other.horizon && self.noise_radius == other.noise_radius && self.samples == other.samples
    }
}

/// Numbers kept from one successful cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRecord {
    pub lambda_star: f64,
    pub epsilon: f64,
    pub rho_primary: f64,
    pub rho_alternative: f64,
    pub rho_final: f64,
    pub vacuous: bool,
    pub certified: bool,
}

impl From<&BoundReport> for CellRecord {
    fn from(r: &BoundReport) -> Self {
        CellRecord {
            lambda_star: r.lambda_star,
            epsilon: r.epsilon,
            rho_primary: r.rho_primary,
            rho_alternative: r.rho_alternative,
            rho_final: r.rho_final,
            vacuous: r.vacuous,
            certified: r.certifies_stability,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<CellRecord, String>,
    pub wall_ms: Option<f64>,
}

/// Means over the successful realizations of one `(l, W, N)` group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub horizon: usize,
    pub noise_radius: f64,
    pub samples: usize,
    pub succeeded: usize,
    pub lambda_star: f64,
    pub epsilon: f64,
    pub rho_primary: f64,
    pub rho_alternative: f64,
    pub rho_final: f64,
    pub vacuous_fraction: f64,
    pub certified_fraction: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub mode: Mode,
    pub cells: Vec<CellResult>,
}

pub const EXPERIMENT_HEADER: &str = "mode,l,W,N,realization,seed,lambda_star,epsilon,rho_primary,rho_alternative,rho_final,vacuous,certified,wall_ms,error";

fn clean(message: &str) -> String {
    message.replace([',', '\n', '\r'], ";")
}

impl ExperimentResult {
    pub fn error_count(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.cells
            .chunk_by(|a, b| a.cell.same_group(&b.cell))
            .map(|group| {
                let ok: Vec<&CellRecord> = group.iter().filter_map(|c| c.outcome.as_ref().ok()).collect();
                let k = ok.len() as f64;
                let mean = |f: fn(&CellRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / k;
                let timed: Vec<f64> = group.iter().filter_map(|c| c.wall_ms).collect();
                let first = group[0].cell;
                Aggregate {
                    horizon: first.horizon,
                    noise_radius: first.noise_radius,
                    samples: first.samples,
                    succeeded: ok.len(),
                    lambda_star: mean(|r| r.lambda_star),
                    epsilon: mean(|r| r.epsilon),
                    rho_primary: mean(|r| r.rho_primary),
                    rho_alternative: mean(|r| r.rho_alternative),
                    rho_final: mean(|r| r.rho_final),
                    vacuous_fraction: mean(|r| f64::from(u8::from(r.vacuous))),
                    certified_fraction: mean(|r| f64::from(u8::from(r.certified))),
                    wall_ms: (!timed.is_empty()).then(|| timed.iter().sum::<f64>() / timed.len() as f64),
                }
            })
            .collect()
    }

    /// Data rows of each group followed by its `mean` row.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "{EXPERIMENT_HEADER}")?;
        let mode = self.mode.as_str();
        let timing = |ms: Option<f64>| ms.map(num).unwrap_or_default();
        let groups = self.cells.chunk_by(|a, b| a.cell.same_group(&b.cell));
        for (group, agg) in groups.zip(self.aggregates()) {
            for c in group {
                let cell = c.cell;
                let prefix = format!(
                    "{mode},{},{},{},{},{}",
                    cell.horizon,
                    num(cell.noise_radius),
                    cell.samples,
                    cell.realization,
                    cell.seed
                );
                match &c.outcome {
                    Ok(r) => writeln!(
                        out,
                        "{prefix},{},{},{},{},{},{},{},{},",
                        num(r.lambda_star),
                        num(r.epsilon),
                        num(r.rho_primary),
                        num(r.rho_alternative),
                        num(r.rho_final),
                        u8::from(r.vacuous),
                        u8::from(r.certified),
                        timing(c.wall_ms)
                    )?,
                    Err(e) => writeln!(out, "{prefix},,,,,,,,{},{}", timing(c.wall_ms), clean(e))?,
                }
            }
            let prefix = format!("{mode},{},{},{},mean,", agg.horizon, num(agg.noise_radius), agg.samples);
            if agg.succeeded == 0 {
                writeln!(out, "{prefix},,,,,,,,{},no successful realizations", timing(agg.wall_ms))?;
            } else {
                writeln!(
                    out,
                    "{prefix},{},{},{},{},{},{},{},{},",
                    num(agg.lambda_star),
                    num(agg.epsilon),
                    num(agg.rho_primary),
                    num(agg.rho_alternative),
                    num(agg.rho_final),
                    num(agg.vacuous_fraction),
                    num(agg.certified_fraction),
                    timing(agg.wall_ms)
                )?;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Runs every cell of a sampled grid on a bounded worker pool. Cell
/// failures are recorded, not propagated.
pub fn run_experiment(sys: &SwitchedSystem, cfg: &ExperimentConfig) -> Result<ExperimentResult, ConfigError> {
    cfg.validate()?;
    if cfg.mode == Mode::Baseline {
        return Err(ConfigError::Field {
            field: "mode".into(),
            message: "baseline grids are run with run_baseline".into(),
        });
    }
    let cells = cfg.cells();
    let run = |cell: &Cell| {
        let start = Instant::now();
        let req = CertifyRequest {
            mode: cfg.mode,
            horizon: cell.horizon,
            samples: cell.samples,
            noise_radius: cell.noise_radius,
            beta: cfg.beta,
            seed: cell.seed,
        };
        let outcome = certify_run(sys, &req, &cfg.tolerances)
            .map(|o| CellRecord::from(&o.report))
            .map_err(|e| e.to_string());
        CellResult {
            cell: *cell,
            outcome,
            wall_ms: cfg.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
        }
    };
    let results: Vec<CellResult> = cfg.pool().install(|| cells.par_iter().map(run).collect());
    Ok(ExperimentResult {
        mode: cfg.mode,
        cells: results,
    })
}

/// Model-based bracket for `l = 1..=max(horizons)`.
pub fn run_baseline(sys: &SwitchedSystem, cfg: &ExperimentConfig) -> Result<BaselineReport, RunError> {
    let l_max = cfg.horizons.iter().copied().max().unwrap_or(1);
    Ok(crate::certify::baseline(sys, l_max, cfg.cycle_max, &cfg.tolerances)?)
}

pub const BASELINE_HEADER: &str = "l,upper,arbitrary_upper,lower,width";

pub fn write_baseline_csv<W: Write>(report: &BaselineReport, out: &mut W) -> io::Result<()> {
    writeln!(out, "{BASELINE_HEADER}")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.horizon,
            num(r.upper),
            num(r.arbitrary_upper),
            num(r.lower),
            num(r.width)
        )?;
    }
    Ok(())
}
