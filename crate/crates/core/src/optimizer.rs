//! Joint precoder / repeater-gain design.
//!
//! Minimizes the range CRB over (w, α) subject to the user SINR floor and
//! the transmit power cap:
//!
//! ```text
//! min  crb_d(w, α)   s.t.  γ(w, α) ≥ γ_u,   ‖w‖² ≤ P_max
//! ```
//!
//! The solver runs projected gradient descent on the real vector
//! z = [Re w̃, Im w̃, t] with w = √P_max·w̃ and α = e^t, minimizing the merit
//!
//! ```text
//! f(z) = ln crb_d(w, α) + ρ·max(0, ln γ_u − ln γ(w, α))²
//! ```
//!
//! w̃ is projected onto the unit ball and t onto [ln α_min, ln α_max] after
//! every step. ρ grows tenfold whenever a stage ends at a point that still
//! violates the SINR floor. A final polish raises α by the smallest factor
//! that restores the floor exactly.
//!
//! The SINR violation is measured in log space so that its scale matches the
//! log objective; the SINR itself spans many decades over the gain range.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::config::{linear_to_db, SystemConfig};
use crate::crb::{crb_closed_form, schur_term, CrbError};
use crate::model::{steering_vector, Precoder};
use crate::sinr::user_sinr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    #[default]
    Analytic,
    /// Central differences of the merit; for cross-checking only.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub max_iterations: usize,
    /// Relative merit change regarded as stalled.
    pub rel_tol: f64,
    /// Consecutive stalled steps that end a penalty stage.
    pub stall_steps: usize,
    pub armijo: f64,
    pub initial_step: f64,
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    /// Allowed ln γ_u − ln γ at the end of a stage before polishing.
    pub violation_tol: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub gradient: GradientMode,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            rel_tol: 1e-10,
            stall_steps: 5,
            armijo: 1e-4,
            initial_step: 1.0,
            initial_penalty: 1.0,
            penalty_growth: 10.0,
            max_penalty: 1e12,
            violation_tol: 1e-6,
            alpha_min: 1e-6,
            alpha_max: 1e12,
            gradient: GradientMode::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub w: Precoder,
    pub alpha: f64,
    /// m²; infinite when the bound is undefined at the returned point.
    pub crb_d: f64,
    pub sinr_db: f64,
    pub power_used: f64,
    pub converged: bool,
    pub infeasible: bool,
    pub iterations: usize,
    /// Merit at every accepted step.
    pub objective_trace: Vec<f64>,
    /// Index into `objective_trace` where each penalty stage begins.
    pub stage_starts: Vec<usize>,
    pub final_penalty: f64,
    /// Feasibility certificate from [`feasibility_check`].
    pub certificate: f64,
}

impl OptimizationResult {
    /// |a^H w|² / (M‖w‖²), 1 for a perfectly steered beam.
    pub fn beam_alignment(&self, phi: f64) -> f64 {
        let a = steering_vector(phi, self.w.len());
        a.inner(&self.w.w).norm_sqr() / (self.w.len() as f64 * self.w.power())
    }

    pub fn sqrt_crb(&self) -> f64 {
        self.crb_d.sqrt()
    }
}

/// Σ_k conj(g_k)·g_kᵀ, so that Σ_k |g_kᵀ w|² = w^H R w.
pub fn channel_gram(g: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    g.adjoint() * g
}

/// Largest achievable SINR over ‖w‖² = P_max as α → ∞, relative to γ_u.
///
/// Returns `(feasible, certificate)` with certificate
/// P_max·λ_max(R) / (N_s·σ_b²·σ_e²) / γ_u; feasible iff certificate ≥ 1.
pub fn feasibility_check(g: &DMatrix<Complex64>, cfg: &SystemConfig) -> (bool, f64) {
    let gram = channel_gram(g);
    let lambda_max = if gram.nrows() == 0 {
        0.0
    } else {
        gram.symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |acc, &v| acc.max(v))
    };
    let ns = cfg.num_subcarriers() as f64;
    let sup = cfg.max_power() * lambda_max
        / (ns * cfg.repeater_user_chan_var() * cfg.noise_power());
    let certificate = sup / cfg.min_user_sinr();
    (certificate >= 1.0, certificate)
}

/// The smooth merit over z = [Re w̃, Im w̃, t].
///
/// With `fixed_alpha` set, z has no t entry and α stays frozen.
#[derive(Debug, Clone)]
pub struct MeritFunction {
    steer: DVector<Complex64>,
    gram: DMatrix<Complex64>,
    sqrt_power: f64,
    log_gamma: f64,
    var_h: f64,
    var_z: f64,
    var_e: f64,
    var_b: f64,
    log_user_noise: f64,
    /// ln(d⁴ / (2·M·N·Schur)).
    log_crb_offset: f64,
    fixed_alpha: Option<f64>,
    m: usize,
}

/// Objective pieces at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritValue {
    pub merit: f64,
    pub log_crb: f64,
    pub log_sinr: f64,
    /// max(0, ln γ_u − ln γ).
    pub violation: f64,
}

impl MeritFunction {
    pub fn new(
        cfg: &SystemConfig,
        g: &DMatrix<Complex64>,
        fixed_alpha: Option<f64>,
    ) -> Result<Self, CrbError> {
        let m = cfg.num_antennas();
        let d = cfg.target_distance();
        let sigma_sq = cfg.rcs_var();
        // Surfaces RCS / single-sub-carrier degeneracy before any iteration.
        crb_closed_form(
            &Precoder::matched(&steering_vector(cfg.target_angle(), m), 1.0),
            1.0,
            sigma_sq,
            cfg.target_angle(),
            d,
            cfg,
        )?;
        let schur = schur_term(sigma_sq, d, cfg);
        let log_crb_offset = 4.0 * d.ln()
            - (2.0 * m as f64 * cfg.num_time_samples() as f64).ln()
            - schur.ln();
        Ok(Self {
            steer: steering_vector(cfg.target_angle(), m).entries,
            gram: channel_gram(g),
            sqrt_power: cfg.max_power().sqrt(),
            log_gamma: cfg.min_user_sinr().ln(),
            var_h: cfg.chan_est_err_var(),
            var_z: cfg.propagated_noise_var(),
            var_e: cfg.noise_power(),
            var_b: cfg.repeater_user_chan_var(),
            log_user_noise: (cfg.num_subcarriers() as f64 * cfg.noise_power()).ln(),
            log_crb_offset,
            fixed_alpha,
            m,
        })
    }

    /// Length of z.
    pub fn dim(&self) -> usize {
        2 * self.m + usize::from(self.fixed_alpha.is_none())
    }

    /// Packs (w, α) into z.
    pub fn encode(&self, w: &Precoder, alpha: f64) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.extend(w.w.iter().map(|x| x.re / self.sqrt_power));
        z.extend(w.w.iter().map(|x| x.im / self.sqrt_power));
        if self.fixed_alpha.is_none() {
            z.push(alpha.ln());
        }
        z
    }

    /// Unpacks z into (w, α).
    pub fn decode(&self, z: &[f64]) -> (Precoder, f64) {
        let m = self.m;
        let w = DVector::from_fn(m, |i, _| Complex64::new(z[i], z[m + i]) * self.sqrt_power);
        (Precoder::new(w), self.alpha_of(z))
    }

    fn alpha_of(&self, z: &[f64]) -> f64 {
        self.fixed_alpha.unwrap_or_else(|| z[2 * self.m].exp())
    }

    fn scaled_w(&self, z: &[f64]) -> DVector<Complex64> {
        let m = self.m;
        DVector::from_fn(m, |i, _| Complex64::new(z[i], z[m + i]))
    }

    pub fn evaluate(&self, z: &[f64], rho: f64) -> MeritValue {
        self.evaluate_with_gradient(z, rho, false).0
    }

    pub fn gradient(&self, z: &[f64], rho: f64) -> Vec<f64> {
        self.evaluate_with_gradient(z, rho, true).1
    }

    /// Central-difference gradient with relative step `h`.
    pub fn gradient_fd(&self, z: &[f64], rho: f64, h: f64) -> Vec<f64> {
        let mut probe = z.to_vec();
        (0..z.len())
            .map(|i| {
                let step = h * z[i].abs().max(1.0);
                probe[i] = z[i] + step;
                let up = self.evaluate(&probe, rho).merit;
                probe[i] = z[i] - step;
                let down = self.evaluate(&probe, rho).merit;
                probe[i] = z[i];
                (up - down) / (2.0 * step)
            })
            .collect()
    }

    fn evaluate_with_gradient(&self, z: &[f64], rho: f64, want_grad: bool) -> (MeritValue, Vec<f64>) {
        let p = self.sqrt_power * self.sqrt_power;
        let ws = self.scaled_w(z);
        let alpha = self.alpha_of(z);
        let a2 = alpha * alpha;

        // Quantities in unscaled w: ‖w‖² = P‖w̃‖², |a^H w|² = P|a^H w̃|², X = P·w̃^H R w̃.
        let norm_s = ws.norm_squared();
        let beam = self.steer.dotc(&ws);
        let beam_s = beam.norm_sqr();
        let rw = &self.gram * &ws;
        let x_s = ws.dotc(&rw).re;

        let q = a2 * (self.var_h * p * norm_s + self.var_z) + self.var_e;
        let log_crb = self.log_crb_offset + q.ln() - (p * beam_s).ln();
        let log_sinr = a2.ln() + (p * x_s).ln() - self.log_user_noise - (a2 * self.var_b + 1.0).ln();
        let violation = (self.log_gamma - log_sinr).max(0.0);
        let value = MeritValue {
            merit: log_crb + rho * violation * violation,
            log_crb,
            log_sinr,
            violation,
        };
        if !want_grad {
            return (value, Vec::new());
        }

        // Real gradients of real functions of w̃, stored as complex (∂/∂Re, ∂/∂Im):
        // ‖w̃‖² → 2w̃, |a^H w̃|² → 2a(a^H w̃), w̃^H R w̃ → 2Rw̃.
        let pen = -2.0 * rho * violation;
        let c_norm = 2.0 * a2 * self.var_h * p / q;
        let c_beam = -2.0 / beam_s;
        let c_gain = pen * 2.0 / x_s;
        let gw = &ws * Complex64::new(c_norm, 0.0)
            + &self.steer * (beam * c_beam)
            + rw * Complex64::new(c_gain, 0.0);

        let mut grad = Vec::with_capacity(self.dim());
        grad.extend(gw.iter().map(|c| c.re));
        grad.extend(gw.iter().map(|c| c.im));
        if self.fixed_alpha.is_none() {
            let dlogq = 2.0 * a2 * (self.var_h * p * norm_s + self.var_z) / q;
            let dlogsinr = 2.0 / (a2 * self.var_b + 1.0);
            grad.push(dlogq + pen * dlogsinr);
        }
        (value, grad)
    }

    fn project(&self, z: &mut [f64], t_bounds: (f64, f64)) {
        let m = self.m;
        let norm = z[..2 * m].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1.0 {
            z[..2 * m].iter_mut().for_each(|x| *x /= norm);
        }
        if self.fixed_alpha.is_none() {
            z[2 * m] = z[2 * m].clamp(t_bounds.0, t_bounds.1);
        }
    }
}

/// Joint design over (w, α) from the initial point `init`.
pub fn optimize_joint(
    cfg: &SystemConfig,
    g: &DMatrix<Complex64>,
    init: (Precoder, f64),
) -> OptimizationResult {
    optimize_joint_with(cfg, g, init, &OptimizerSettings::default())
}

pub fn optimize_joint_with(
    cfg: &SystemConfig,
    g: &DMatrix<Complex64>,
    init: (Precoder, f64),
    settings: &OptimizerSettings,
) -> OptimizationResult {
    run(cfg, g, init.0, init.1, None, settings)
}

/// Design over w only with the repeater gain frozen at `alpha_fixed` (linear).
pub fn optimize_fixed_gain(
    cfg: &SystemConfig,
    g: &DMatrix<Complex64>,
    alpha_fixed: f64,
    init: Precoder,
) -> OptimizationResult {
    optimize_fixed_gain_with(cfg, g, alpha_fixed, init, &OptimizerSettings::default())
}

pub fn optimize_fixed_gain_with(
    cfg: &SystemConfig,
    g: &DMatrix<Complex64>,
    alpha_fixed: f64,
    init: Precoder,
    settings: &OptimizerSettings,
) -> OptimizationResult {
    run(cfg, g, init, alpha_fixed, Some(alpha_fixed), settings)
}

/// The reference starting point: α = 1 and √(P_max/M)·[1, …, 1].
pub fn default_init(cfg: &SystemConfig) -> (Precoder, f64) {
    (Precoder::uniform(cfg.num_antennas(), cfg.max_power()), 1.0)
}

fn finish(
    cfg: &SystemConfig,
    g: &DMatrix<Complex64>,
    w: Precoder,
    alpha: f64,
    mut base: OptimizationResult,
) -> OptimizationResult {
    let crb = crb_closed_form(&w, alpha, cfg.rcs_var(), cfg.target_angle(), cfg.target_distance(), cfg)
        .unwrap_or(f64::INFINITY);
    let sinr = user_sinr(&w, alpha, g, cfg)
        .map(|r| r.sinr_linear)
        .unwrap_or(0.0);
    base.crb_d = crb;
    base.sinr_db = linear_to_db(sinr);
    base.power_used = w.power();
    base.w = w;
    base.alpha = alpha;
    base
}

fn run(
    cfg: &SystemConfig,
    g: &DMatrix<Complex64>,
    w0: Precoder,
    alpha0: f64,
    fixed_alpha: Option<f64>,
    s: &OptimizerSettings,
) -> OptimizationResult {
    let (feasible, certificate) = feasibility_check(g, cfg);
    let template = OptimizationResult {
        w: w0.clone(),
        alpha: alpha0,
        crb_d: f64::INFINITY,
        sinr_db: f64::NEG_INFINITY,
        power_used: 0.0,
        converged: false,
        infeasible: false,
        iterations: 0,
        objective_trace: Vec::new(),
        stage_starts: Vec::new(),
        final_penalty: s.initial_penalty,
        certificate,
    };
    let merit = match MeritFunction::new(cfg, g, fixed_alpha) {
        Ok(f) if feasible => f,
        _ => {
            let out = OptimizationResult {
                infeasible: true,
                ..template
            };
            return finish(cfg, g, w0.project(cfg.max_power()), alpha0, out);
        }
    };

    let t_bounds = (s.alpha_min.ln(), s.alpha_max.ln());
    let mut z = merit.encode(&w0, alpha0.clamp(s.alpha_min, s.alpha_max));
    merit.project(&mut z, t_bounds);

    let mut rho = s.initial_penalty;
    let mut trace = Vec::new();
    let mut stage_starts = vec![0];
    let mut iterations = 0;
    let mut converged = false;
    let mut step = s.initial_step;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;

    let grad_at = |z: &[f64], rho: f64| match s.gradient {
        GradientMode::Analytic => merit.gradient(z, rho),
        GradientMode::FiniteDifference => merit.gradient_fd(z, rho, 1e-6),
    };

    'stages: loop {
        let mut current = merit.evaluate(&z, rho);
        trace.push(current.merit);
        let mut stalled = 0;
        loop {
            if iterations >= s.max_iterations {
                break 'stages;
            }
            iterations += 1;
            let grad = grad_at(&z, rho);

            // Barzilai-Borwein trial step from the last accepted move.
            if let Some((z_old, g_old)) = &prev {
                let (mut ss, mut sy) = (0.0, 0.0);
                for i in 0..z.len() {
                    let dz = z[i] - z_old[i];
                    ss += dz * dz;
                    sy += dz * (grad[i] - g_old[i]);
                }
                if sy > 0.0 && ss > 0.0 {
                    step = (ss / sy).clamp(1e-16, 1e6);
                } else {
                    step = (step * 2.0).min(1e6);
                }
            }

            let mut accepted = None;
            let mut trial_step = step;
            while trial_step > 1e-20 {
                let mut cand: Vec<f64> = z.iter().zip(&grad).map(|(x, gx)| x - trial_step * gx).collect();
                merit.project(&mut cand, t_bounds);
                let slope: f64 = cand
                    .iter()
                    .zip(&z)
                    .zip(&grad)
                    .map(|((c, x), gx)| gx * (c - x))
                    .sum();
                if slope >= 0.0 {
                    // Projected gradient vanishes: stationary for this penalty.
                    break;
                }
                let value = merit.evaluate(&cand, rho);
                if value.merit.is_finite() && value.merit <= current.merit + s.armijo * slope {
                    accepted = Some((cand, value));
                    break;
                }
                trial_step *= 0.5;
            }

            let Some((cand, value)) = accepted else {
                break;
            };
            step = trial_step;
            let change = (current.merit - value.merit).abs();
            prev = Some((std::mem::replace(&mut z, cand), grad));
            current = value;
            trace.push(current.merit);
            if change <= s.rel_tol * current.merit.abs().max(1.0) {
                stalled += 1;
                if stalled >= s.stall_steps {
                    break;
                }
            } else {
                stalled = 0;
            }
        }

        if current.violation <= s.violation_tol {
            converged = true;
            break;
        }
        if rho * s.penalty_growth > s.max_penalty {
            break;
        }
        rho *= s.penalty_growth;
        prev = None;
        stage_starts.push(trace.len());
    }

    let (w, mut alpha) = merit.decode(&z);
    let w = w.project(cfg.max_power());
    // Raise α just enough to meet the SINR floor exactly.
    let report = user_sinr(&w, alpha, g, cfg).expect("dimensions checked by feasibility");
    if report.sinr_linear < cfg.min_user_sinr() {
        let gain = report.signal_power / (alpha * alpha);
        let gamma = cfg.min_user_sinr();
        let ns_noise = cfg.num_subcarriers() as f64 * cfg.noise_power();
        let margin = gain - gamma * ns_noise * cfg.repeater_user_chan_var();
        let needed = if fixed_alpha.is_none() && margin > 0.0 {
            ((gamma * ns_noise / margin).sqrt() * (1.0 + 1e-12)).min(s.alpha_max)
        } else {
            alpha
        };
        alpha = alpha.max(needed);
        if user_sinr(&w, alpha, g, cfg).unwrap().sinr_linear < gamma * (1.0 - 1e-6) {
            converged = false;
        }
    }

    let out = OptimizationResult {
        converged,
        iterations,
        objective_trace: trace,
        stage_starts,
        final_penalty: rho,
        ..template
    };
    finish(cfg, g, w, alpha, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::draw_channels;

    fn toy_cfg() -> SystemConfig {
        SystemConfig::reference()
            .with(|p| {
                p.num_antennas = 8;
                p.num_subcarriers = 16;
            })
            .unwrap()
    }

    #[test]
    fn zero_channel_is_infeasible() {
        let cfg = toy_cfg();
        let g = DMatrix::zeros(16, 8);
        assert_eq!(feasibility_check(&g, &cfg), (false, 0.0));
        let r = optimize_joint(&cfg, &g, default_init(&cfg));
        assert!(r.infeasible);
        assert!(!r.converged);
    }

    #[test]
    fn boundary_certificate() {
        // N_s = 1, g = e₁, σ_b²σ_e² = 1 and P_max = γ_u.
        let cfg = SystemConfig::reference()
            .with(|p| {
                p.num_antennas = 3;
                p.num_subcarriers = 1;
                p.noise_power_dbm = 0.0;
                p.repeater_user_chan_var_db = 0.0;
                p.min_user_sinr_db = 3.0;
                p.max_power = 10f64.powf(0.3);
            })
            .unwrap();
        let mut g = DMatrix::zeros(1, 3);
        g[(0, 0)] = Complex64::new(1.0, 0.0);
        let (feasible, cert) = feasibility_check(&g, &cfg);
        assert!((cert - 1.0).abs() < 1e-12);
        assert!(feasible || cert < 1.0);
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let cfg = toy_cfg();
        let ch = draw_channels(&cfg, 5);
        for fixed in [None, Some(70.0)] {
            let f = MeritFunction::new(&cfg, &ch.g, fixed).unwrap();
            let h = ch.h.row(3).transpose();
            let scale = (0.5 * cfg.max_power() / h.norm_squared()).sqrt();
            let w = Precoder::new(h * Complex64::new(scale, 0.0));
            let z = f.encode(&w, 30.0);
            for rho in [0.0, 1.0, 1e3] {
                let ga = f.gradient(&z, rho);
                let gf = f.gradient_fd(&z, rho, 1e-6);
                let err: f64 = ga.iter().zip(&gf).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = gf.iter().map(|b| b * b).sum::<f64>().sqrt();
                assert!(err <= 1e-5 * norm, "rho={rho} err={err} norm={norm}");
            }
        }
    }

    #[test]
    fn joint_meets_constraints_and_descends() {
        let cfg = toy_cfg();
        let ch = draw_channels(&cfg, 11);
        let init = default_init(&cfg);
        let r = optimize_joint(&cfg, &ch.g, init.clone());
        assert!(r.converged, "{r:?}");
        assert!(!r.infeasible);
        let sinr = user_sinr(&r.w, r.alpha, &ch.g, &cfg).unwrap().sinr_linear;
        assert!(sinr >= cfg.min_user_sinr() * (1.0 - 1e-6));
        assert!(r.w.power() <= cfg.max_power() * (1.0 + 1e-9));

        // Within the final penalty stage the merit never increases.
        let last = *r.stage_starts.last().unwrap();
        for pair in r.objective_trace[last..].windows(2) {
            assert!(pair[1] <= pair[0]);
        }

        // Better than the start once the start is made feasible by raising α.
        let f = optimize_fixed_gain(&cfg, &ch.g, 70.79, init.0);
        assert!(f.converged);
        assert_eq!(f.alpha, 70.79);
        assert!(r.crb_d <= f.crb_d);
    }

    #[test]
    fn tiny_floor_aligns_beam_and_drops_gain() {
        let cfg = toy_cfg().with(|p| p.min_user_sinr_db = -200.0).unwrap();
        let ch = draw_channels(&cfg, 3);
        let r = optimize_joint(&cfg, &ch.g, default_init(&cfg));
        assert!(r.converged);
        assert!(r.beam_alignment(cfg.target_angle()) >= 0.999);
        assert!((r.alpha - OptimizerSettings::default().alpha_min).abs() < 1e-9);

        let f = optimize_fixed_gain(&cfg, &ch.g, 70.79, default_init(&cfg).0);
        assert!(f.beam_alignment(cfg.target_angle()) >= 0.999);
    }

    #[test]
    fn deterministic() {
        let cfg = toy_cfg();
        let ch = draw_channels(&cfg, 21);
        let a = optimize_joint(&cfg, &ch.g, default_init(&cfg));
        let b = optimize_joint(&cfg, &ch.g, default_init(&cfg));
        assert_eq!(a, b);
    }
}
