//! Subcommands of the `ncr-isac` binary and the CSV schemas they write.
//!
//! Exit codes are a stable contract, see [`exit`].

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use ncr_isac::config::{linear_to_db, ConfigError, SystemConfig};
use ncr_isac::crb::{crb_closed_form, crb_range, CrbError, DiagonalVariant};
use ncr_isac::experiments::{
    aggregate, channel_digest, run_arm, run_sweep, AggregateRow, Arm, ExperimentError, SweepSpec,
    SweepVariable, TrialRecord, DEFAULT_FIXED_ALPHA_DB,
};
use ncr_isac::model::{draw_channels, mix_seed, steering_vector, Precoder};
use ncr_isac::optimizer::OptimizerSettings;
use ncr_isac::validation::{run_validation, ValidationOptions};

/// Overrides the sweep worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "NCR_ISAC_WORKERS";

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const INFEASIBLE: i32 = 2;
    pub const NOT_CONVERGED: i32 = 3;
    pub const VALIDATION_FAILED: i32 = 4;
    /// Range cannot be estimated at all (zero RCS, null beam, one sub-carrier).
    pub const NOT_IDENTIFIABLE: i32 = 5;
}

pub const TRIAL_HEADER: [&str; 13] = [
    "variable",
    "sweep_value",
    "trial",
    "arm",
    "alpha_linear",
    "crb_d_m2",
    "sqrt_crb_d_m",
    "sinr_db",
    "power_used",
    "converged",
    "infeasible",
    "iterations",
    "channel_digest",
];

pub const AGGREGATE_HEADER: [&str; 10] = [
    "variable",
    "sweep_value",
    "arm",
    "n_ok",
    "mean_sqrt_crb",
    "median_sqrt_crb",
    "p10",
    "p90",
    "feasible_rate",
    "converged_rate",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}; the target range cannot be estimated with this configuration")]
    NotIdentifiable(CrbError),
    #[error(transparent)]
    Crb(CrbError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{0}")]
    Usage(String),
}

impl From<CrbError> for CliError {
    fn from(e: CrbError) -> Self {
        match e {
            CrbError::Degenerate(_) => Self::NotIdentifiable(e),
            other => Self::Crb(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::NotIdentifiable(_) => exit::NOT_IDENTIFIABLE,
            Self::Crb(CrbError::OracleMismatch { .. }) => exit::VALIDATION_FAILED,
            _ => exit::USAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ncr-isac", version, about = "Range CRB and precoder / repeater-gain design for repeater-assisted ISAC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the range CRB at one operating point.
    Crb(CrbArgs),
    /// Run one optimization on a seeded channel draw.
    Optimize(OptimizeArgs),
    /// Monte-Carlo sweep over one parameter; writes trial and aggregate CSVs.
    Sweep(SweepArgs),
    /// Run the built-in oracle and property checks.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecoderKind {
    /// √(P_max/M)·[1, …, 1]
    Uniform,
    /// √(P_max/M)·a(φ)
    Matched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArmArg {
    Joint,
    Fixed,
}

impl From<ArmArg> for Arm {
    fn from(a: ArmArg) -> Self {
        match a {
            ArmArg::Joint => Arm::Joint,
            ArmArg::Fixed => Arm::FixedGain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariableArg {
    #[value(name = "max_power")]
    MaxPower,
    #[value(name = "min_user_sinr_db")]
    MinUserSinrDb,
    #[value(name = "rcs_var_db")]
    RcsVarDb,
}

impl From<VariableArg> for SweepVariable {
    fn from(v: VariableArg) -> Self {
        match v {
            VariableArg::MaxPower => SweepVariable::MaxPower,
            VariableArg::MinUserSinrDb => SweepVariable::MinUserSinrDb,
            VariableArg::RcsVarDb => SweepVariable::RcsVarDb,
        }
    }
}

#[derive(Debug, Args)]
pub struct CrbArgs {
    /// Configuration file; the built-in reference parameters when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Repeater gain, linear.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = PrecoderKind::Matched)]
    pub precoder: PrecoderKind,
    /// Target distance in metres, overriding the configuration.
    #[arg(long, allow_negative_numbers = true)]
    pub distance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Channel seed; the draw equals trial 0 of a sweep with the same seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ArmArg::Joint)]
    pub arm: ArmArg,
    #[arg(long, default_value_t = DEFAULT_FIXED_ALPHA_DB, allow_negative_numbers = true)]
    pub fixed_alpha_db: f64,
    /// Also write the result as a one-row trial CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub variable: VariableArg,
    /// Comma-separated, strictly ordered values (P_max linear, others in dB).
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "joint,fixed")]
    pub arms: Vec<ArmArg>,
    #[arg(long, default_value_t = DEFAULT_FIXED_ALPHA_DB, allow_negative_numbers = true)]
    pub fixed_alpha_db: f64,
    /// Trial CSV; the aggregate goes next to it as `<stem>.aggregate.csv`.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads (default: $NCR_ISAC_WORKERS, else all processors).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Instances per check.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use a unit trailing diagonal in the closed-form Fisher
    /// matrix, which must make the PSD check fail.
    #[arg(long)]
    pub inject_unit_diagonal: bool,
}

/// Human-readable report plus the process exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub report: String,
    pub code: i32,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Crb(a) => cmd_crb(a),
        Command::Optimize(a) => cmd_optimize(a),
        Command::Sweep(a) => {
            let env = std::env::var(WORKERS_ENV).ok();
            cmd_sweep(a, resolve_workers(a.workers, env.as_deref())?)
        }
        Command::Validate(a) => Ok(cmd_validate(a)),
    }
}

fn load(path: Option<&Path>) -> Result<SystemConfig, CliError> {
    match path {
        Some(p) => Ok(SystemConfig::from_path(p)?),
        None => Ok(SystemConfig::reference()),
    }
}

/// `flag` wins over `env`; zero and unparsable values are usage errors.
pub fn resolve_workers(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>, CliError> {
    let n = match (flag, env) {
        (Some(n), _) => Some(n),
        (None, Some(s)) if !s.trim().is_empty() => Some(s.trim().parse::<usize>().map_err(|_| {
            CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got '{s}'"))
        })?),
        _ => None,
    };
    if n == Some(0) {
        return Err(CliError::Usage("worker count must be at least 1".into()));
    }
    Ok(n)
}

pub fn cmd_crb(args: &CrbArgs) -> Result<Outcome, CliError> {
    let mut cfg = load(args.config.as_deref())?;
    if let Some(d) = args.distance {
        cfg = cfg.with(|p| p.target_distance_m = d)?;
    }
    if !(args.alpha.is_finite() && args.alpha >= 0.0) {
        return Err(CliError::Usage(format!(
            "--alpha must be finite and non-negative, got {}",
            args.alpha
        )));
    }
    let m = cfg.num_antennas();
    let w = match args.precoder {
        PrecoderKind::Uniform => Precoder::uniform(m, cfg.max_power()),
        PrecoderKind::Matched => {
            Precoder::matched(&steering_vector(cfg.target_angle(), m), cfg.max_power())
        }
    };
    let b = crb_range(
        &w,
        args.alpha,
        cfg.rcs_var(),
        cfg.target_angle(),
        cfg.target_distance(),
        &cfg,
    )?;
    let unit_gap = ((b.crb_unit_diagonal - b.crb_d) / b.crb_d).abs();
    let mut r = String::new();
    let _ = writeln!(r, "precoder           {:?}, power {:.6e}", args.precoder, w.power());
    let _ = writeln!(r, "alpha              {:.6e} ({:.3} dB)", args.alpha, linear_to_db(args.alpha));
    let _ = writeln!(r, "distance_m         {}", cfg.target_distance());
    let _ = writeln!(r, "psi                {:.10e}", b.psi);
    let _ = writeln!(r, "C                  {:.10e}", b.coeff_c);
    let _ = writeln!(r, "S_re               {:.10e}", b.s_re);
    let _ = writeln!(r, "S_im               {:.10e}", b.s_im);
    let _ = writeln!(r, "crb_d_m2           {:.10e}  (closed form, N_s diagonal)", b.crb_d);
    let _ = writeln!(r, "crb_d_direct_m2    {:.10e}  (inverse of summed Fisher matrix)", b.crb_direct);
    let _ = writeln!(r, "closed_vs_direct   {:.3e}", b.relative_discrepancy());
    let _ = writeln!(r, "sqrt_crb_d_m       {:.10e}", b.crb_d.sqrt());
    let _ = writeln!(r, "crb_d_unit_diag_m2 {:.10e}  (unit trailing diagonal)", b.crb_unit_diagonal);
    let _ = writeln!(r, "unit_diag_vs_ns    {:.3e}", unit_gap);
    if !(b.crb_unit_diagonal > 0.0) {
        let _ = writeln!(
            r,
            "note: the unit-diagonal matrix is indefinite here, so its bound is meaningless"
        );
    }
    Ok(Outcome {
        report: r,
        code: exit::OK,
    })
}

fn check_identifiable(cfg: &SystemConfig) -> Result<(), CliError> {
    let m = cfg.num_antennas();
    crb_closed_form(
        &Precoder::matched(&steering_vector(cfg.target_angle(), m), 1.0),
        1.0,
        cfg.rcs_var(),
        cfg.target_angle(),
        cfg.target_distance(),
        cfg,
    )?;
    Ok(())
}

pub fn cmd_optimize(args: &OptimizeArgs) -> Result<Outcome, CliError> {
    let cfg = load(args.config.as_deref())?;
    check_identifiable(&cfg)?;
    let arm = Arm::from(args.arm);
    let ch = draw_channels(&cfg, mix_seed(args.seed, 0));
    let digest = channel_digest(&ch);
    let res = run_arm(&cfg, &ch, arm, args.fixed_alpha_db, &OptimizerSettings::default())?;

    let code = if res.infeasible {
        exit::INFEASIBLE
    } else if !res.converged {
        exit::NOT_CONVERGED
    } else {
        exit::OK
    };
    let status = match code {
        exit::INFEASIBLE => "infeasible",
        exit::NOT_CONVERGED => "not converged",
        _ => "converged",
    };

    let mut r = String::new();
    let _ = writeln!(r, "arm                {}", arm.name());
    let _ = writeln!(r, "seed               {}", args.seed);
    let _ = writeln!(r, "channel_digest     {digest}");
    let _ = writeln!(r, "status             {status}");
    let _ = writeln!(r, "certificate        {:.6e}", res.certificate);
    let _ = writeln!(r, "alpha              {:.10e} ({:.4} dB)", res.alpha, linear_to_db(res.alpha));
    let _ = writeln!(r, "crb_d_m2           {:.10e}", res.crb_d);
    let _ = writeln!(r, "sqrt_crb_d_m       {:.10e}", res.sqrt_crb());
    let _ = writeln!(r, "sinr_db            {:.6} (floor {:.6})", res.sinr_db, cfg.params().min_user_sinr_db);
    let _ = writeln!(r, "power_used         {:.10e} (max {:.6e})", res.power_used, cfg.max_power());
    let _ = writeln!(r, "beam_alignment     {:.6}", res.beam_alignment(cfg.target_angle()));
    let _ = writeln!(r, "iterations         {}", res.iterations);
    let _ = writeln!(r, "penalty_stages     {}", res.stage_starts.len());
    let _ = writeln!(r, "final_penalty      {:.1e}", res.final_penalty);

    if let Some(path) = &args.csv {
        let rec = TrialRecord {
            variable: SweepVariable::MaxPower,
            sweep_value: f64::NAN,
            trial: 0,
            arm,
            alpha: res.alpha,
            crb_d: res.crb_d,
            sinr_db: res.sinr_db,
            power_used: res.power_used,
            converged: res.converged,
            infeasible: res.infeasible,
            iterations: res.iterations,
            channel_digest: digest,
            wall_time_s: 0.0,
        };
        let file = create(path)?;
        let mut w = csv_writer(file);
        w.write_record(TRIAL_HEADER)
            .and_then(|_| w.write_record(trial_fields("none", None, &rec)))
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|source| CliError::Csv {
                path: path.clone(),
                source,
            })?;
    }
    Ok(Outcome { report: r, code })
}

/// `<out>` with its extension replaced by `aggregate.csv`.
pub fn aggregate_path(out: &Path) -> PathBuf {
    out.with_extension("aggregate.csv")
}

pub fn cmd_sweep(args: &SweepArgs, workers: Option<usize>) -> Result<Outcome, CliError> {
    let cfg = load(args.config.as_deref())?;
    check_identifiable(&cfg)?;
    let arms = args.arms.iter().map(|&a| Arm::from(a)).collect();
    let spec = SweepSpec::new(
        &cfg,
        args.variable.into(),
        args.grid.clone(),
        args.trials,
        args.seed,
        arms,
    )?
    .with_fixed_alpha_db(args.fixed_alpha_db)?;

    // Fail on an unwritable path before spending time on the sweep.
    let trial_file = create(&args.out)?;
    let agg_path = aggregate_path(&args.out);
    let agg_file = create(&agg_path)?;

    let records = run_sweep(&cfg, &spec, workers)?;
    let rows = aggregate(&records);

    write_trials(trial_file, &records).map_err(|source| CliError::Csv {
        path: args.out.clone(),
        source,
    })?;
    write_aggregate(agg_file, &rows).map_err(|source| CliError::Csv {
        path: agg_path.clone(),
        source,
    })?;

    let mut r = String::new();
    let _ = writeln!(
        r,
        "{} records -> {}\naggregate -> {}",
        records.len(),
        args.out.display(),
        agg_path.display()
    );
    let _ = writeln!(
        r,
        "{:>14} {:>6} {:>5} {:>14} {:>14} {:>9} {:>9}",
        spec.variable().name(),
        "arm",
        "n_ok",
        "mean_sqrt_crb",
        "median",
        "feasible",
        "converged"
    );
    for row in &rows {
        let (mean, median) = row
            .stats
            .map(|s| (format!("{:.6e}", s.mean), format!("{:.6e}", s.median)))
            .unwrap_or_else(|| ("NA".into(), "NA".into()));
        let _ = writeln!(
            r,
            "{:>14} {:>6} {:>5} {:>14} {:>14} {:>9.3} {:>9.3}",
            row.sweep_value,
            row.arm.name(),
            row.n_ok,
            mean,
            median,
            row.feasible_rate,
            row.converged_rate
        );
    }
    Ok(Outcome {
        report: r,
        code: exit::OK,
    })
}

pub fn cmd_validate(args: &ValidateArgs) -> Outcome {
    let opts = ValidationOptions {
        trials: args.trials,
        seed: args.seed,
        diagonal: if args.inject_unit_diagonal {
            DiagonalVariant::Unit
        } else {
            DiagonalVariant::Reconciled
        },
    };
    let checks = run_validation(&opts);
    let mut r = String::new();
    if args.inject_unit_diagonal {
        let _ = writeln!(r, "fault injection: closed-form Fisher matrix uses the unit diagonal");
    }
    for c in &checks {
        let _ = writeln!(
            r,
            "{} {:<42} max {:.3e}  tol {:.0e}  n={}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.max_discrepancy,
            c.tolerance,
            c.instances
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    let _ = writeln!(r, "{} of {} checks passed", checks.len() - failed, checks.len());
    Outcome {
        report: r,
        code: if failed == 0 {
            exit::OK
        } else {
            exit::VALIDATION_FAILED
        },
    }
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<BufWriter<W>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(w))
}

/// 17 significant digits, so values round-trip exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_else(|| "NA".into())
}

pub fn trial_fields(variable: &str, sweep_value: Option<f64>, r: &TrialRecord) -> Vec<String> {
    vec![
        variable.to_string(),
        fmt_opt(sweep_value),
        r.trial.to_string(),
        r.arm.name().to_string(),
        fmt_f64(r.alpha),
        fmt_f64(r.crb_d),
        fmt_f64(r.sqrt_crb_d()),
        fmt_f64(r.sinr_db),
        fmt_f64(r.power_used),
        r.converged.to_string(),
        r.infeasible.to_string(),
        r.iterations.to_string(),
        r.channel_digest.clone(),
    ]
}

pub fn aggregate_fields(row: &AggregateRow) -> Vec<String> {
    let s = row.stats;
    vec![
        row.variable.name().to_string(),
        fmt_f64(row.sweep_value),
        row.arm.name().to_string(),
        row.n_ok.to_string(),
        fmt_opt(s.map(|s| s.mean)),
        fmt_opt(s.map(|s| s.median)),
        fmt_opt(s.map(|s| s.p10)),
        fmt_opt(s.map(|s| s.p90)),
        fmt_f64(row.feasible_rate),
        fmt_f64(row.converged_rate),
    ]
}

pub fn write_trials<W: Write>(out: W, records: &[TrialRecord]) -> csv::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(TRIAL_HEADER)?;
    for r in records {
        w.write_record(trial_fields(r.variable.name(), Some(r.sweep_value), r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate<W: Write>(out: W, rows: &[AggregateRow]) -> csv::Result<()> {
    let mut w = csv_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for row in rows {
        w.write_record(aggregate_fields(row))?;
    }
    w.flush()?;
    Ok(())
}
