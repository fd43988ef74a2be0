//! Monte-Carlo sweeps over one configuration parameter.
//!
//! Trial `i` draws its channels from `mix_seed(base_seed, i)` at every grid
//! point and for every arm, so the arms are compared on identical channels
//! and curves are paired across the grid. Results come back in canonical
//! (grid value, trial, arm) order whatever the worker count.

use std::time::Instant;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{db_to_linear, ConfigError, SystemConfig};
use crate::model::{draw_channels, mix_seed, ChannelRealization};
use crate::optimizer::{
    default_init, optimize_fixed_gain_with, optimize_joint_with, OptimizationResult,
    OptimizerSettings,
};

/// Repeater gain of the fixed-gain baseline, dB.
pub const DEFAULT_FIXED_ALPHA_DB: f64 = 18.5;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("grid value {value} is not valid for {variable}")]
    BadGridValue { variable: &'static str, value: f64 },
    #[error("sweep grid must be strictly increasing or strictly decreasing")]
    UnorderedGrid,
    #[error("number of trials must be positive")]
    NoTrials,
    #[error("at least one arm is required")]
    NoArms,
    #[error("unknown sweep variable '{0}' (expected max_power, min_user_sinr_db or rcs_var_db)")]
    UnknownVariable(String),
    #[error("unknown arm '{0}' (expected joint or fixed)")]
    UnknownArm(String),
    #[error("fixed repeater gain {0} dB is not finite")]
    BadFixedGain(f64),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("could not build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    /// P_max, linear.
    MaxPower,
    /// γ_u in dB.
    MinUserSinrDb,
    /// σ_RCS² in dB.
    RcsVarDb,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            Self::MaxPower => "max_power",
            Self::MinUserSinrDb => "min_user_sinr_db",
            Self::RcsVarDb => "rcs_var_db",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "max_power" => Ok(Self::MaxPower),
            "min_user_sinr_db" => Ok(Self::MinUserSinrDb),
            "rcs_var_db" => Ok(Self::RcsVarDb),
            other => Err(ExperimentError::UnknownVariable(other.to_string())),
        }
    }

    /// Copy of `cfg` with this variable set to `value`.
    pub fn apply(self, cfg: &SystemConfig, value: f64) -> Result<SystemConfig, ExperimentError> {
        let out = match self {
            Self::MaxPower => cfg.with(|p| p.max_power = value),
            Self::MinUserSinrDb => cfg.with(|p| p.min_user_sinr_db = value),
            Self::RcsVarDb => cfg.with(|p| p.rcs_var_db = value),
        };
        out.map_err(|_| ExperimentError::BadGridValue {
            variable: self.name(),
            value,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Arm {
    Joint,
    FixedGain,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Joint => "joint",
            Self::FixedGain => "fixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "joint" => Ok(Self::Joint),
            "fixed" => Ok(Self::FixedGain),
            other => Err(ExperimentError::UnknownArm(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    variable: SweepVariable,
    grid: Vec<f64>,
    trials: usize,
    base_seed: u64,
    arms: Vec<Arm>,
    fixed_alpha_db: f64,
}

impl SweepSpec {
    pub fn new(
        cfg: &SystemConfig,
        variable: SweepVariable,
        grid: Vec<f64>,
        trials: usize,
        base_seed: u64,
        arms: Vec<Arm>,
    ) -> Result<Self, ExperimentError> {
        if grid.is_empty() {
            return Err(ExperimentError::EmptyGrid);
        }
        for &v in &grid {
            variable.apply(cfg, v)?;
        }
        let up = grid.windows(2).all(|p| p[0] < p[1]);
        let down = grid.windows(2).all(|p| p[0] > p[1]);
        if !(up || down) {
            return Err(ExperimentError::UnorderedGrid);
        }
        if trials == 0 {
            return Err(ExperimentError::NoTrials);
        }
        let mut arms = arms;
        arms.sort();
        arms.dedup();
        if arms.is_empty() {
            return Err(ExperimentError::NoArms);
        }
        Ok(Self {
            variable,
            grid,
            trials,
            base_seed,
            arms,
            fixed_alpha_db: DEFAULT_FIXED_ALPHA_DB,
        })
    }

    pub fn with_fixed_alpha_db(mut self, db: f64) -> Result<Self, ExperimentError> {
        if !db.is_finite() {
            return Err(ExperimentError::BadFixedGain(db));
        }
        self.fixed_alpha_db = db;
        Ok(self)
    }

    pub fn variable(&self) -> SweepVariable {
        self.variable
    }
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
    pub fn trials(&self) -> usize {
        self.trials
    }
    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }
    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }
    pub fn fixed_alpha_db(&self) -> f64 {
        self.fixed_alpha_db
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub variable: SweepVariable,
    pub sweep_value: f64,
    pub trial: usize,
    pub arm: Arm,
    pub alpha: f64,
    pub crb_d: f64,
    pub sinr_db: f64,
    pub power_used: f64,
    pub converged: bool,
    pub infeasible: bool,
    pub iterations: usize,
    /// Hex SHA-256 prefix of the composite channel, for pairing checks.
    pub channel_digest: String,
    /// Not part of any deterministic output.
    pub wall_time_s: f64,
}

impl TrialRecord {
    pub fn sqrt_crb_d(&self) -> f64 {
        self.crb_d.sqrt()
    }

    /// Counted in the statistics.
    pub fn is_ok(&self) -> bool {
        self.converged && !self.infeasible && self.crb_d.is_finite()
    }
}

/// First 16 hex digits of SHA-256 over the little-endian (re, im) entries of G, row-major.
pub fn channel_digest(ch: &ChannelRealization) -> String {
    let mut hasher = Sha256::new();
    for r in 0..ch.g.nrows() {
        for c in 0..ch.g.ncols() {
            let v = ch.g[(r, c)];
            hasher.update(v.re.to_le_bytes());
            hasher.update(v.im.to_le_bytes());
        }
    }
    hasher.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// One arm on one channel draw, both arms starting from the same precoder.
pub fn run_arm(
    cfg: &SystemConfig,
    ch: &ChannelRealization,
    arm: Arm,
    fixed_alpha_db: f64,
    settings: &OptimizerSettings,
) -> Result<OptimizationResult, ExperimentError> {
    let (w0, alpha0) = default_init(cfg);
    Ok(match arm {
        Arm::Joint => optimize_joint_with(cfg, &ch.g, (w0, alpha0), settings),
        Arm::FixedGain => {
            let alpha = db_to_linear(fixed_alpha_db)?;
            optimize_fixed_gain_with(cfg, &ch.g, alpha, w0, settings)
        }
    })
}

fn run_job(
    cfg: &SystemConfig,
    spec: &SweepSpec,
    value: f64,
    trial: usize,
) -> Result<Vec<TrialRecord>, ExperimentError> {
    let point = spec.variable.apply(cfg, value)?;
    let ch = draw_channels(&point, mix_seed(spec.base_seed, trial as u64));
    let digest = channel_digest(&ch);
    let settings = OptimizerSettings::default();
    spec.arms
        .iter()
        .map(|&arm| {
            let start = Instant::now();
            let res = run_arm(&point, &ch, arm, spec.fixed_alpha_db, &settings)?;
            Ok(TrialRecord {
                variable: spec.variable,
                sweep_value: value,
                trial,
                arm,
                alpha: res.alpha,
                crb_d: res.crb_d,
                sinr_db: res.sinr_db,
                power_used: res.power_used,
                converged: res.converged,
                infeasible: res.infeasible,
                iterations: res.iterations,
                channel_digest: digest.clone(),
                wall_time_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Runs every (grid value, trial) job; `workers` of `None` lets the pool pick.
pub fn run_sweep(
    cfg: &SystemConfig,
    spec: &SweepSpec,
    workers: Option<usize>,
) -> Result<Vec<TrialRecord>, ExperimentError> {
    let jobs: Vec<(f64, usize)> = spec
        .grid
        .iter()
        .flat_map(|&v| (0..spec.trials).map(move |t| (v, t)))
        .collect();
    let per_job = execute(&jobs, workers, |&(v, t)| run_job(cfg, spec, v, t))?;
    Ok(per_job.into_iter().flatten().collect())
}

#[cfg(feature = "parallel")]
fn execute<J, F>(
    jobs: &[J],
    workers: Option<usize>,
    f: F,
) -> Result<Vec<Vec<TrialRecord>>, ExperimentError>
where
    J: Sync,
    F: Fn(&J) -> Result<Vec<TrialRecord>, ExperimentError> + Sync,
{
    use rayon::prelude::*;
    if workers == Some(1) {
        return jobs.iter().map(f).collect();
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| ExperimentError::Pool(e.to_string()))?;
    pool.install(|| jobs.par_iter().map(&f).collect())
}

#[cfg(not(feature = "parallel"))]
fn execute<J, F>(
    jobs: &[J],
    _workers: Option<usize>,
    f: F,
) -> Result<Vec<Vec<TrialRecord>>, ExperimentError>
where
    F: Fn(&J) -> Result<Vec<TrialRecord>, ExperimentError>,
{
    jobs.iter().map(f).collect()
}

/// Per-(grid value, arm) summary of √CRB over the records that count.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub variable: SweepVariable,
    pub sweep_value: f64,
    pub arm: Arm,
    pub n_total: usize,
    pub n_ok: usize,
    /// `None` when no record counts.
    pub stats: Option<SummaryStats>,
    pub feasible_rate: f64,
    pub converged_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
}

/// Quantile with linear interpolation between order statistics; `sorted` must be ascending.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<SummaryStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(SummaryStats {
        mean: v.iter().sum::<f64>() / v.len() as f64,
        median: quantile(&v, 0.5),
        p10: quantile(&v, 0.1),
        p90: quantile(&v, 0.9),
    })
}

/// Groups in order of first appearance, so canonical input gives canonical output.
pub fn aggregate(records: &[TrialRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(f64, Arm)> = Vec::new();
    for r in records {
        let key = (r.sweep_value, r.arm);
        if !keys.iter().any(|k| k.0.to_bits() == key.0.to_bits() && k.1 == key.1) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(value, arm)| {
            let group: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.sweep_value.to_bits() == value.to_bits() && r.arm == arm)
                .collect();
            let n_total = group.len();
            let ok: Vec<f64> = group.iter().filter(|r| r.is_ok()).map(|r| r.sqrt_crb_d()).collect();
            let feasible = group.iter().filter(|r| !r.infeasible).count();
            let converged = group.iter().filter(|r| r.converged).count();
            AggregateRow {
                variable: group[0].variable,
                sweep_value: value,
                arm,
                n_total,
                n_ok: ok.len(),
                stats: summarize(&ok),
                feasible_rate: feasible as f64 / n_total as f64,
                converged_rate: converged as f64 / n_total as f64,
            }
        })
        .collect()
}
