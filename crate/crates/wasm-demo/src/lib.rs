//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no generated TypeScript types. The `*_data` functions are the same
//! computations without the JSON step, for native tests.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ncr_isac::config::{db_to_linear, linear_to_db, ConfigParams, SystemConfig};
use ncr_isac::crb::crb_closed_form;
use ncr_isac::experiments::{run_arm, Arm};
use ncr_isac::model::{draw_channels, mix_seed, steering_vector, Precoder};
use ncr_isac::optimizer::OptimizerSettings;

const MAX_ANTENNAS: u32 = 256;
const MAX_SUBCARRIERS: u32 = 4096;
const MAX_POINTS: u32 = 4096;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Curve {
    pub alpha_db: Vec<f64>,
    pub sqrt_crb_m: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Pattern {
    pub angle_deg: Vec<f64>,
    /// |a(θ)^H w|² / (M‖w‖²) in dB.
    pub gain_db: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Design {
    pub arm: &'static str,
    pub infeasible: bool,
    pub converged: bool,
    pub alpha: f64,
    pub alpha_db: f64,
    pub sqrt_crb_m: f64,
    pub sinr_db: f64,
    pub power_used: f64,
    pub beam_alignment: f64,
    pub iterations: usize,
    pub pattern: Pattern,
}

fn config(
    num_antennas: u32,
    num_subcarriers: u32,
    edit: impl FnOnce(&mut ConfigParams),
) -> Result<SystemConfig, String> {
    if num_antennas > MAX_ANTENNAS || num_subcarriers > MAX_SUBCARRIERS {
        return Err(format!(
            "demo limits: at most {MAX_ANTENNAS} antennas and {MAX_SUBCARRIERS} sub-carriers"
        ));
    }
    SystemConfig::reference()
        .with(|p| {
            p.num_antennas = num_antennas as usize;
            p.num_subcarriers = num_subcarriers as usize;
            edit(p);
        })
        .map_err(|e| e.to_string())
}

fn precoder(kind: &str, cfg: &SystemConfig) -> Result<Precoder, String> {
    let m = cfg.num_antennas();
    match kind {
        "matched" => Ok(Precoder::matched(
            &steering_vector(cfg.target_angle(), m),
            cfg.max_power(),
        )),
        "uniform" => Ok(Precoder::uniform(m, cfg.max_power())),
        other => Err(format!("unknown precoder '{other}' (matched or uniform)")),
    }
}

fn check_points(points: u32) -> Result<usize, String> {
    if (2..=MAX_POINTS).contains(&points) {
        Ok(points as usize)
    } else {
        Err(format!("points must be in 2..={MAX_POINTS}"))
    }
}

/// √CRB of the range against the repeater gain, at full power.
#[allow(clippy::too_many_arguments)]
pub fn crb_curve_data(
    num_antennas: u32,
    num_subcarriers: u32,
    distance_m: f64,
    angle_deg: f64,
    rcs_var_db: f64,
    kind: &str,
    alpha_db_min: f64,
    alpha_db_max: f64,
    points: u32,
) -> Result<Curve, String> {
    let n = check_points(points)?;
    if !(alpha_db_min.is_finite() && alpha_db_max.is_finite() && alpha_db_min < alpha_db_max) {
        return Err("need finite alpha_db_min < alpha_db_max".into());
    }
    let cfg = config(num_antennas, num_subcarriers, |p| {
        p.target_distance_m = distance_m;
        p.target_angle_deg = angle_deg;
        p.rcs_var_db = rcs_var_db;
    })?;
    let w = precoder(kind, &cfg)?;
    let mut curve = Curve {
        alpha_db: Vec::with_capacity(n),
        sqrt_crb_m: Vec::with_capacity(n),
    };
    for i in 0..n {
        let db = alpha_db_min + (alpha_db_max - alpha_db_min) * i as f64 / (n - 1) as f64;
        let alpha = db_to_linear(db).map_err(|e| e.to_string())?;
        let crb = crb_closed_form(
            &w,
            alpha,
            cfg.rcs_var(),
            cfg.target_angle(),
            cfg.target_distance(),
            &cfg,
        )
        .map_err(|e| e.to_string())?;
        curve.alpha_db.push(db);
        curve.sqrt_crb_m.push(crb.sqrt());
    }
    Ok(curve)
}

fn pattern_of(w: &Precoder, points: usize) -> Pattern {
    let m = w.len();
    let mut p = Pattern {
        angle_deg: Vec::with_capacity(points),
        gain_db: Vec::with_capacity(points),
    };
    for i in 0..points {
        let deg = 180.0 * i as f64 / (points - 1) as f64;
        let a = steering_vector(deg.to_radians(), m);
        let g = a.inner(&w.w).norm_sqr() / (m as f64 * w.power());
        p.angle_deg.push(deg);
        p.gain_db.push(linear_to_db(g).max(-60.0));
    }
    p
}

/// Normalized array gain over 0°–180° for a matched or uniform precoder.
pub fn beam_pattern_data(
    num_antennas: u32,
    angle_deg: f64,
    kind: &str,
    points: u32,
) -> Result<Pattern, String> {
    let n = check_points(points)?;
    let cfg = config(num_antennas, 2, |p| p.target_angle_deg = angle_deg)?;
    Ok(pattern_of(&precoder(kind, &cfg)?, n))
}

/// Joint or fixed-gain design on one seeded channel draw.
#[allow(clippy::too_many_arguments)]
pub fn optimize_data(
    num_antennas: u32,
    num_subcarriers: u32,
    angle_deg: f64,
    max_power: f64,
    min_user_sinr_db: f64,
    arm: &str,
    fixed_alpha_db: f64,
    seed: u32,
) -> Result<Design, String> {
    let cfg = config(num_antennas, num_subcarriers, |p| {
        p.target_angle_deg = angle_deg;
        p.max_power = max_power;
        p.min_user_sinr_db = min_user_sinr_db;
    })?;
    let arm = Arm::parse(arm).map_err(|e| e.to_string())?;
    let ch = draw_channels(&cfg, mix_seed(u64::from(seed), 0));
    let res = run_arm(&cfg, &ch, arm, fixed_alpha_db, &OptimizerSettings::default())
        .map_err(|e| e.to_string())?;
    Ok(Design {
        arm: arm.name(),
        infeasible: res.infeasible,
        converged: res.converged,
        alpha: res.alpha,
        alpha_db: linear_to_db(res.alpha),
        sqrt_crb_m: res.sqrt_crb(),
        sinr_db: res.sinr_db,
        power_used: res.power_used,
        beam_alignment: res.beam_alignment(cfg.target_angle()),
        iterations: res.iterations,
        pattern: pattern_of(&res.w, 361),
    })
}

fn json<T: Serialize>(r: Result<T, String>) -> Result<String, String> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
}

/// Gains are in dB with α = 10^(dB/10), as for the fixed-gain baseline.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn crb_curve(
    num_antennas: u32,
    num_subcarriers: u32,
    distance_m: f64,
    angle_deg: f64,
    rcs_var_db: f64,
    precoder: &str,
    alpha_db_min: f64,
    alpha_db_max: f64,
    points: u32,
) -> Result<String, String> {
    json(crb_curve_data(
        num_antennas,
        num_subcarriers,
        distance_m,
        angle_deg,
        rcs_var_db,
        precoder,
        alpha_db_min,
        alpha_db_max,
        points,
    ))
}

#[wasm_bindgen]
pub fn beam_pattern(
    num_antennas: u32,
    angle_deg: f64,
    precoder: &str,
    points: u32,
) -> Result<String, String> {
    json(beam_pattern_data(num_antennas, angle_deg, precoder, points))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    num_antennas: u32,
    num_subcarriers: u32,
    angle_deg: f64,
    max_power: f64,
    min_user_sinr_db: f64,
    arm: &str,
    fixed_alpha_db: f64,
    seed: u32,
) -> Result<String, String> {
    json(optimize_data(
        num_antennas,
        num_subcarriers,
        angle_deg,
        max_power,
        min_user_sinr_db,
        arm,
        fixed_alpha_db,
        seed,
    ))
}
