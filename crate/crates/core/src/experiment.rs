//! Seeded experiment sweeps: estimation error over `(input kind, L, T)`
//! grids, persistence-of-excitation rates, and Ho-Kalman recovery reports.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimate::{fit_markov, gram_min_eig, MarkovParams};
use crate::features::{feature_matrix_from_inputs, FeatureConfig};
use crate::linalg::op_norm;
use crate::model::{random_system, Dims, SystemJson, SystemParams};
use crate::recover::true_markov;
use crate::recover::{ho_kalman_with, markov_mismatch, HankelShape, MarkovMismatch};
use crate::rng::{derive_seed, rng_from_seed};
use crate::simulate::{generate_trajectory, sample_inputs, InputDistribution, NoiseConfig};

/// Version tag written into every CSV header line and manifest.
pub const FORMAT_VERSION: u32 = 1;

const STREAM_SYSTEM: u64 = 0;
const STREAM_TRAJECTORY: u64 = 1;
const STREAM_PE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub rho0: f64,
    pub rhok: f64,
    /// Standard deviation of both noise sequences.
    pub sigma: f64,
    pub input_kinds: Vec<InputDistribution>,
    pub l_list: Vec<usize>,
    pub t_list: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    /// Share one system across all trials instead of drawing one per trial.
    pub fixed_system: bool,
    /// Failure probability used when reporting the excitation threshold.
    pub delta: f64,
    /// Output directory for CSV and manifest files.
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 5,
            p: 2,
            m: 2,
            rho0: 0.4,
            rhok: 0.2,
            sigma: 0.01,
            input_kinds: vec![InputDistribution::Gaussian],
            l_list: vec![5, 6, 7],
            t_list: (1000..=5000).step_by(500).collect(),
            trials: 10,
            base_seed: 0,
            fixed_system: false,
            delta: 0.1,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML or JSON file, chosen by extension (TOML otherwise).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg: Self = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n == 0 || self.p == 0 || self.m == 0 {
            return bad("n, p and m must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.input_kinds.is_empty() || self.l_list.is_empty() || self.t_list.is_empty() {
            return bad("input_kinds, l_list and t_list must be non-empty".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.rho0 >= 0.0 && self.rhok >= 0.0 && self.rho0.is_finite() && self.rhok.is_finite())
        {
            return bad("spectral radii must be finite and >= 0".into());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if let Some(&l) = self.l_list.iter().find(|&&l| l == 0) {
            return bad(format!("L must be at least 1, got {l}"));
        }
        let max_l = *self.l_list.iter().max().unwrap_or(&1);
        let min_t = *self.t_list.iter().min().unwrap_or(&0);
        if min_t < max_l {
            return bad(format!(
                "every T must be >= L, but T = {min_t} < L = {max_l}"
            ));
        }
        FeatureConfig::new(max_l, self.p).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn dims(&self) -> Result<Dims> {
        Dims::new(self.n, self.p, self.m)
    }

    /// SHA-256 of the canonical JSON form, excluding the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = None;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn system_seed(&self, trial: usize) -> u64 {
        if self.fixed_system {
            derive_seed(self.base_seed, &[STREAM_SYSTEM])
        } else {
            derive_seed(self.base_seed, &[STREAM_SYSTEM, trial as u64])
        }
    }

    /// Trajectory seed for one trial. It does not depend on `T`, so shorter
    /// horizons see a prefix of the longer runs, and it does not depend on the
    /// input kind, so kinds are compared on the same noise realization.
    pub fn trajectory_seed(&self, trial: usize) -> u64 {
        derive_seed(self.base_seed, &[STREAM_TRAJECTORY, trial as u64])
    }

    pub fn pe_seed(&self, trial: usize) -> u64 {
        derive_seed(self.base_seed, &[STREAM_PE, trial as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub kind: InputDistribution,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub trial: usize,
    pub system_seed: u64,
    pub trajectory_seed: u64,
    /// `|G^ - G|_op^2`, NaN when the trial failed.
    pub error_sq: f64,
    pub lambda_min: f64,
    pub rank: usize,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Unstable,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub kind: InputDistribution,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub mean_error_sq: f64,
    /// Sample standard deviation (0 for a single successful trial).
    pub std_error_sq: f64,
    pub median_error_sq: f64,
    pub mean_lambda_min: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub kind: InputDistribution,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub trial: usize,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<AggregateRow>,
    pub timings: Vec<TimingRow>,
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Groups raw rows by `(kind, L, T)` in first-appearance order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<AggregateRow> {
    let mut keys: Vec<(InputDistribution, usize, usize)> = Vec::new();
    for r in rows {
        let key = (r.kind, r.l, r.t);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(kind, l, t)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| (r.kind, r.l, r.t) == (kind, l, t))
                .collect();
            let ok: Vec<&SweepRow> = group
                .iter()
                .copied()
                .filter(|r| r.status == TrialStatus::Ok)
                .collect();
            let errors: Vec<f64> = ok.iter().map(|r| r.error_sq).collect();
            let lambdas: Vec<f64> = ok.iter().map(|r| r.lambda_min).collect();
            let (mean, std) = mean_std(&errors);
            AggregateRow {
                kind,
                l,
                t,
                mean_error_sq: mean,
                std_error_sq: std,
                median_error_sq: median(&errors),
                mean_lambda_min: mean_std(&lambdas).0,
                n_ok: ok.len(),
                n_failed: group.len() - ok.len(),
            }
        })
        .collect()
}

struct Task {
    kind: InputDistribution,
    l: usize,
    t: usize,
    trial: usize,
}

fn run_trial(
    cfg: &ExperimentConfig,
    system: &Result<SystemParams<f64>, String>,
    task: &Task,
) -> SweepRow {
    let mut row = SweepRow {
        kind: task.kind,
        l: task.l,
        t: task.t,
        trial: task.trial,
        system_seed: cfg.system_seed(task.trial),
        trajectory_seed: cfg.trajectory_seed(task.trial),
        error_sq: f64::NAN,
        lambda_min: f64::NAN,
        rank: 0,
        status: TrialStatus::Failed,
    };
    let sys = match system {
        Ok(sys) => sys,
        Err(msg) => {
            log::warn!("trial {}: system draw failed: {msg}", task.trial);
            return row;
        }
    };
    let outcome = (|| -> Result<(f64, f64, usize)> {
        let fcfg = FeatureConfig::new(task.l, cfg.p)?;
        let traj = generate_trajectory(
            sys,
            task.kind,
            task.t,
            NoiseConfig::new(cfg.sigma)?,
            row.trajectory_seed,
        )?;
        let fit = fit_markov(&traj, &fcfg)?;
        let g = true_markov(sys, task.l)?;
        let err = op_norm((fit.markov.matrix() - g.matrix()).as_ref())?;
        let gram = fit.gram_report(task.t + 1 - task.l);
        Ok((err * err, gram.lambda_min, fit.rank))
    })();
    match outcome {
        Ok((error_sq, lambda_min, rank)) => {
            row.error_sq = error_sq;
            row.lambda_min = lambda_min;
            row.rank = rank;
            row.status = TrialStatus::Ok;
        }
        Err(e) => {
            log::warn!(
                "{} L={} T={} trial {}: {e}",
                task.kind,
                task.l,
                task.t,
                task.trial
            );
            if matches!(e, Error::Unstable { .. }) {
                row.status = TrialStatus::Unstable;
            }
        }
    }
    row
}

/// Runs every `(kind, L, T, trial)` combination. Failed trials are recorded
/// with NaN errors and excluded from the aggregates.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let dims = cfg.dims()?;
    let systems: Vec<Result<SystemParams<f64>, String>> = (0..cfg.trials)
        .map(|trial| {
            random_system(dims, cfg.rho0, cfg.rhok, cfg.system_seed(trial))
                .map_err(|e| e.to_string())
        })
        .collect();
    let mut tasks = Vec::new();
    for &kind in &cfg.input_kinds {
        for &l in &cfg.l_list {
            for &t in &cfg.t_list {
                for trial in 0..cfg.trials {
                    tasks.push(Task { kind, l, t, trial });
                }
            }
        }
    }
    let outcomes: Vec<(SweepRow, f64)> = tasks
        .par_iter()
        .map(|task| {
            let start = Instant::now();
            let row = run_trial(cfg, &systems[task.trial], task);
            (row, start.elapsed().as_secs_f64())
        })
        .collect();
    let timings = outcomes
        .iter()
        .map(|(r, secs)| TimingRow {
            kind: r.kind,
            l: r.l,
            t: r.t,
            trial: r.trial,
            wall_time: *secs,
        })
        .collect();
    let rows: Vec<SweepRow> = outcomes.into_iter().map(|(r, _)| r).collect();
    let aggregates = aggregate(&rows);
    Ok(SweepResult {
        rows,
        aggregates,
        timings,
    })
}

fn unix_time() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Writes `rows` as CSV preceded by one `#` comment line carrying the format
/// version and a timestamp. Everything after that line is deterministic.
pub fn write_tagged_csv<W: Write, S: Serialize>(mut out: W, tag: &str, rows: &[S]) -> Result<()> {
    writeln!(
        out,
        "# blds {tag} v{FORMAT_VERSION} generated_at={}",
        unix_time()
    )?;
    let mut wtr = csv::Writer::from_writer(out);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub format_version: u32,
    pub crate_version: String,
    pub generated_at: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub system_seeds: Vec<u64>,
    pub trajectory_seeds: Vec<u64>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn new(kind: &str, cfg: &ExperimentConfig, files: Vec<String>) -> Self {
        Self {
            kind: kind.into(),
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").into(),
            generated_at: unix_time(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            system_seeds: (0..cfg.trials).map(|t| cfg.system_seed(t)).collect(),
            trajectory_seeds: (0..cfg.trials).map(|t| cfg.trajectory_seed(t)).collect(),
            files,
        }
    }
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let f = fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, manifest)?;
    Ok(())
}

/// Writes `raw.csv`, `aggregate.csv`, `timings.csv` and `manifest.json`.
pub fn write_sweep(
    dir: impl AsRef<Path>,
    cfg: &ExperimentConfig,
    result: &SweepResult,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_tagged_csv(
        fs::File::create(dir.join("raw.csv"))?,
        "sweep-raw",
        &result.rows,
    )?;
    write_tagged_csv(
        fs::File::create(dir.join("aggregate.csv"))?,
        "sweep-aggregate",
        &result.aggregates,
    )?;
    write_tagged_csv(
        fs::File::create(dir.join("timings.csv"))?,
        "sweep-timings",
        &result.timings,
    )?;
    let files = ["raw.csv", "aggregate.csv", "timings.csv"]
        .map(String::from)
        .to_vec();
    write_manifest(dir, &Manifest::new("sweep", cfg, files))
}

/// `L + L(L+1) (3 v gamma)^(L+1) (ln((L+1)/delta) + (p+1)^(L+1) ln((p+1)^(L+1)/delta))`,
/// the trajectory length above which the Gram bound holds with probability
/// `1 - delta`, with the unspecified absolute constant set to 1.
pub fn excitation_horizon(p: usize, l: usize, gamma: f64, delta: f64) -> f64 {
    let lf = l as f64;
    let width = ((p + 1) as f64).powi(l as i32 + 1);
    let moments = gamma.max(3.0).powi(l as i32 + 1);
    lf + lf * (lf + 1.0) * moments * (((lf + 1.0) / delta).ln() + width * (width / delta).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeRow {
    pub kind: InputDistribution,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub trial: usize,
    pub seed: u64,
    pub lambda_min: f64,
    pub threshold: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeSummary {
    pub kind: InputDistribution,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub trials: usize,
    pub satisfied: usize,
    pub rate: f64,
    /// Trajectory length from the excitation bound with unit constant.
    pub horizon_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeCheck {
    pub rows: Vec<PeRow>,
    pub summary: Vec<PeSummary>,
}

/// Smallest Gram eigenvalue of the covariate matrix against `(T-L+1)/4` over
/// the `T` grid. Each trial draws one input sequence and the shorter
/// horizons use its prefixes. Only the inputs matter, so no system is drawn.
pub fn run_pe_check(cfg: &ExperimentConfig) -> Result<PeCheck> {
    cfg.validate()?;
    let max_t = *cfg.t_list.iter().max().expect("validated");
    let mut tasks = Vec::new();
    for &kind in &cfg.input_kinds {
        for &l in &cfg.l_list {
            for trial in 0..cfg.trials {
                tasks.push((kind, l, trial));
            }
        }
    }
    let per_task: Vec<Result<Vec<PeRow>>> = tasks
        .par_iter()
        .map(|&(kind, l, trial)| {
            let fcfg = FeatureConfig::new(l, cfg.p)?;
            let seed = cfg.pe_seed(trial);
            let inputs = sample_inputs::<f64, _>(kind, cfg.p, max_t + 1, &mut rng_from_seed(seed));
            cfg.t_list
                .iter()
                .map(|&t| {
                    let design = feature_matrix_from_inputs(inputs.subrows(0, t + 1), &fcfg)?;
                    let report = gram_min_eig(design.as_ref())?;
                    Ok(PeRow {
                        kind,
                        l,
                        t,
                        trial,
                        seed,
                        lambda_min: report.lambda_min,
                        threshold: report.threshold,
                        satisfied: report.satisfied,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_task {
        rows.extend(r?);
    }
    // regroup as kind, L, T, trial
    rows.sort_by_key(|r| {
        let kind_pos = cfg
            .input_kinds
            .iter()
            .position(|&k| k == r.kind)
            .unwrap_or(0);
        let l_pos = cfg.l_list.iter().position(|&l| l == r.l).unwrap_or(0);
        let t_pos = cfg.t_list.iter().position(|&t| t == r.t).unwrap_or(0);
        (kind_pos, l_pos, t_pos, r.trial)
    });
    let mut summary: Vec<PeSummary> = Vec::new();
    for r in &rows {
        match summary.last_mut() {
            Some(s) if (s.kind, s.l, s.t) == (r.kind, r.l, r.t) => {
                s.trials += 1;
                s.satisfied += r.satisfied as usize;
            }
            _ => summary.push(PeSummary {
                kind: r.kind,
                l: r.l,
                t: r.t,
                trials: 1,
                satisfied: r.satisfied as usize,
                rate: 0.0,
                horizon_bound: excitation_horizon(cfg.p, r.l, r.kind.gamma(cfg.p), cfg.delta),
            }),
        }
    }
    for s in &mut summary {
        s.rate = s.satisfied as f64 / s.trials as f64;
    }
    Ok(PeCheck { rows, summary })
}

/// Writes `pe_raw.csv`, `pe_summary.csv` and `manifest.json`.
pub fn write_pe_check(
    dir: impl AsRef<Path>,
    cfg: &ExperimentConfig,
    check: &PeCheck,
) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_tagged_csv(
        fs::File::create(dir.join("pe_raw.csv"))?,
        "pe-raw",
        &check.rows,
    )?;
    write_tagged_csv(
        fs::File::create(dir.join("pe_summary.csv"))?,
        "pe-summary",
        &check.summary,
    )?;
    let files = ["pe_raw.csv", "pe_summary.csv"].map(String::from).to_vec();
    write_manifest(dir, &Manifest::new("pe-check", cfg, files))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecoverReport {
    pub order: usize,
    pub system: SystemJson,
    pub hankel_singular_values: Vec<f64>,
    /// How well the recovered system reproduces the input `G`.
    pub mismatch: MarkovMismatch,
    pub warnings: Vec<String>,
}

/// Ho-Kalman realization of order `n` from `g`, with the reconstruction error
/// of every Markov block.
pub fn run_recover(
    g: &MarkovParams<f64>,
    n: usize,
    shape: Option<HankelShape>,
) -> Result<RecoverReport> {
    let shape = shape.unwrap_or_else(|| {
        let l = g.cfg().history();
        let n1 = l.div_ceil(2).max(1);
        HankelShape {
            n1,
            n2: (l - n1).max(1),
        }
    });
    let realization = ho_kalman_with(g, n, shape)?;
    let mismatch = markov_mismatch(&realization.system, g)?;
    for w in &realization.warnings {
        log::warn!("{w}");
    }
    Ok(RecoverReport {
        order: n,
        system: realization.system.to_json_doc(),
        hankel_singular_values: realization.hankel_singular_values.clone(),
        mismatch,
        warnings: realization.warnings,
    })
}
