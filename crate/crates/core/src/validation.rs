//! Self-checks run by `ncr-isac validate`.
//!
//! Each check draws its own instances from `mix_seed(seed, check index)` and
//! reports the worst discrepancy it saw against its tolerance.

use std::f64::consts::PI;

use nalgebra::{DVector, Matrix3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SystemConfig;
use crate::crb::{
    crb_closed_form, fim_closed_form_with, fim_direct, interference_power, rcs_from_power,
    DiagonalVariant, FisherMatrix,
};
use crate::model::{complex_gaussian, draw_channels, mix_seed, steering_vector, Precoder};
use crate::optimizer::{default_init, optimize_joint, MeritFunction, OptimizationResult};
use crate::sinr::user_sinr;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub instances: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub trials: usize,
    pub seed: u64,
    /// Trailing FIM diagonal used by the closed-form PSD check. Setting
    /// [`DiagonalVariant::Unit`] is the fault-injection hook.
    pub diagonal: DiagonalVariant,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            trials: 20,
            seed: 0,
            diagonal: DiagonalVariant::Reconciled,
        }
    }
}

/// A randomized CRB evaluation point.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub cfg: SystemConfig,
    pub w: Precoder,
    pub alpha: f64,
    pub sigma: Complex64,
    pub phi: f64,
    pub d: f64,
}

/// Reference parameters with 1 ≤ M ≤ 16, 2 ≤ N_s ≤ 64, 1 ≤ N ≤ 32, a random
/// precoder of power ≤ P_max, α ∈ [0.1, 100] log-uniform, d ∈ [50, 1000] m,
/// φ ∈ [10°, 170°] and |σ|² ∈ [−10, 20] dB.
pub fn random_instance(rng: &mut impl Rng) -> RandomInstance {
    let m = rng.random_range(1..=16usize);
    let ns = rng.random_range(2..=64usize);
    let n = rng.random_range(1..=32usize);
    let angle_deg = rng.random_range(10.0..170.0);
    let d = rng.random_range(50.0..1000.0);
    let cfg = SystemConfig::reference()
        .with(|p| {
            p.num_antennas = m;
            p.num_subcarriers = ns;
            p.num_time_samples = n;
            p.target_angle_deg = angle_deg;
            p.target_distance_m = d;
        })
        .expect("randomized dimensions are valid");
    let raw = Precoder::new(DVector::from_fn(m, |_, _| complex_gaussian(rng, 1.0)));
    let scale = (cfg.max_power() * rng.random_range(0.01..1.0) / raw.power()).sqrt();
    let w = Precoder::new(&raw.w * Complex64::new(scale, 0.0));
    let alpha = 10f64.powf(rng.random_range(-1.0..2.0));
    let sigma_sq = 10f64.powf(rng.random_range(-1.0..2.0));
    let sigma = Complex64::from_polar(sigma_sq.sqrt(), rng.random_range(-PI..PI));
    RandomInstance {
        phi: cfg.target_angle(),
        cfg,
        w,
        alpha,
        sigma,
        d,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn rng_for(seed: u64, check: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, check))
}

/// Echo mean μ_nk(ξ) for ξ = (d, σ_re, σ_im), with c_k = 1.
pub fn echo_mean(inst: &RandomInstance, xi: [f64; 3], n: usize, k: usize) -> DVector<Complex64> {
    let cfg = &inst.cfg;
    let ns = cfg.num_subcarriers();
    let [d, s_re, s_im] = xi;
    let a = steering_vector(inst.phi, inst.w.len());
    let tau = 2.0 * d / cfg.speed_of_light();
    let phase = Complex64::from_polar(1.0, 2.0 * PI * (k * n % ns) as f64 / ns as f64)
        * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * cfg.subcarrier_spacing() * tau);
    let scalar = Complex64::new(s_re, s_im) / (d * d) * a.inner(&inst.w.w) * phase;
    &a.entries * scalar
}

/// Fisher matrix assembled from central differences of [`echo_mean`].
pub fn fim_finite_difference(inst: &RandomInstance) -> Matrix3<f64> {
    let cfg = &inst.cfg;
    let xi = [inst.d, inst.sigma.re, inst.sigma.im];
    let steps = [1e-6 * inst.d, 1e-6 * inst.sigma.norm(), 1e-6 * inst.sigma.norm()];
    let inv_q = 1.0 / interference_power(inst.w.power(), inst.alpha, cfg);
    let mut info = Matrix3::zeros();
    for n in 0..cfg.num_time_samples() {
        for k in 0..cfg.num_subcarriers() {
            let partials: Vec<DVector<Complex64>> = (0..3)
                .map(|i| {
                    let (mut up, mut down) = (xi, xi);
                    up[i] += steps[i];
                    down[i] -= steps[i];
                    (echo_mean(inst, up, n, k) - echo_mean(inst, down, n, k))
                        / Complex64::new(2.0 * steps[i], 0.0)
                })
                .collect();
            for r in 0..3 {
                for s in 0..3 {
                    info[(r, s)] += 2.0 * partials[r].dotc(&partials[s]).re * inv_q;
                }
            }
        }
    }
    info
}

fn direct(inst: &RandomInstance) -> FisherMatrix {
    fim_direct(&inst.w, inst.alpha, inst.sigma, inst.phi, inst.d, &inst.cfg)
}

fn closed(inst: &RandomInstance, alpha: f64) -> f64 {
    crb_closed_form(&inst.w, alpha, inst.sigma.norm_sqr(), inst.phi, inst.d, &inst.cfg)
        .unwrap_or(f64::NAN)
}

fn outcome(name: &'static str, worst: f64, tolerance: f64, instances: usize) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= tolerance,
        max_discrepancy: worst,
        tolerance,
        instances,
    }
}

/// Runs every check with `opts.trials` instances each.
pub fn run_validation(opts: &ValidationOptions) -> Vec<CheckOutcome> {
    let t = opts.trials.max(1);
    vec![
        check_oracle(opts.seed, t),
        check_finite_difference(opts.seed, t),
        check_psd(opts.seed, t, opts.diagonal),
        check_gradient(opts.seed, t),
        check_alpha_monotone(opts.seed, t),
        check_interference_monotone(opts.seed, t),
        check_rcs_phase(opts.seed, t),
        check_sinr(opts.seed, t),
        check_channel_phase(opts.seed, t),
        check_alignment(opts.seed, t),
    ]
}

fn check_oracle(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let inv = direct(&inst).inverse_range_element().unwrap_or(f64::NAN);
        let e = rel(closed(&inst, inst.alpha), inv);
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    outcome("crb closed form vs direct inverse", worst, 1e-9, trials)
}

fn check_finite_difference(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 2);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let exact = direct(&inst).entries;
        let fd = fim_finite_difference(&inst);
        worst = worst.max((exact - fd).norm() / exact.norm());
    }
    outcome("fisher matrix vs finite-difference mean", worst, 1e-5, trials)
}

fn check_psd(seed: u64, trials: usize, variant: DiagonalVariant) -> CheckOutcome {
    let mut rng = rng_for(seed, 3);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let candidates = [
            direct(&inst),
            fim_closed_form_with(variant, &inst.w, inst.alpha, inst.sigma, inst.phi, inst.d, &inst.cfg),
        ];
        for f in candidates {
            let min_eig = f.eigenvalues().iter().fold(f64::INFINITY, |a, &b| a.min(b));
            worst = worst
                .max(-min_eig / f.trace())
                .max(f.max_asymmetry() / f.entries.norm());
        }
    }
    outcome("fisher matrix positive semidefinite", worst, 1e-9, trials)
}

fn check_gradient(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 4);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let m = rng.random_range(1..=16usize);
        let ns = rng.random_range(2..=32usize);
        let cfg = SystemConfig::reference()
            .with(|p| {
                p.num_antennas = m;
                p.num_subcarriers = ns;
            })
            .expect("valid dimensions");
        let ch = draw_channels(&cfg, rng.random());
        let Ok(merit) = MeritFunction::new(&cfg, &ch.g, None) else {
            continue;
        };
        let mut z: Vec<f64> = (0..2 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let radius = rng.random_range(0.2..1.0);
        z.iter_mut().for_each(|x| *x *= radius / norm);
        z.push(rng.random_range(0.0..12.0));
        let rho = 10f64.powf(rng.random_range(0.0..4.0));
        let g = merit.gradient(&z, rho);
        let fd = merit.gradient_fd(&z, rho, 1e-6);
        let num: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let den: f64 = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    outcome("merit gradient vs central differences", worst, 1e-4, trials)
}

fn check_alpha_monotone(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 5);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let mut prev = 0.0;
        for i in 0..40 {
            let c = closed(&inst, 10f64.powf(-3.0 + 0.25 * i as f64));
            worst = worst.max((prev - c) / prev.max(f64::MIN_POSITIVE));
            prev = c;
        }
    }
    outcome("crb non-decreasing in repeater gain", worst, 1e-12, trials)
}

fn check_interference_monotone(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 6);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let base = closed(&inst, inst.alpha);
        for bump in [
            |p: &mut crate::config::ConfigParams| p.chan_est_err_var_db += 3.0,
            |p: &mut crate::config::ConfigParams| p.propagated_noise_var_dbm += 3.0,
            |p: &mut crate::config::ConfigParams| p.noise_power_dbm += 3.0,
        ] {
            let louder = RandomInstance {
                cfg: inst.cfg.with(bump).expect("valid bump"),
                ..inst.clone()
            };
            let c = closed(&louder, louder.alpha);
            worst = worst.max((base - c) / base);
        }
    }
    outcome("crb non-decreasing in interference", worst, 1e-12, trials)
}

fn check_rcs_phase(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 7);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let base = direct(&inst).inverse_range_element().unwrap_or(f64::NAN);
        let rotated = RandomInstance {
            sigma: inst.sigma * Complex64::from_polar(1.0, rng.random_range(-PI..PI)),
            ..inst.clone()
        };
        let r = direct(&rotated).inverse_range_element().unwrap_or(f64::NAN);
        let reference = RandomInstance {
            sigma: rcs_from_power(inst.sigma.norm_sqr()),
            ..inst
        };
        let e = rel(base, r).max(rel(base, closed(&reference, reference.alpha)));
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    outcome("crb invariant to rcs phase", worst, 1e-9, trials)
}

fn check_sinr(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 8);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let inst = random_instance(&mut rng);
        let cfg = &inst.cfg;
        let ch = draw_channels(cfg, rng.random());
        let base = user_sinr(&inst.w, inst.alpha, &ch.g, cfg).expect("dims").sinr_linear;
        let c = Complex64::from_polar(rng.random_range(0.1..3.0), rng.random_range(-PI..PI));
        let scaled = Precoder::new(&inst.w.w * c);
        let s = user_sinr(&scaled, inst.alpha, &ch.g, cfg).expect("dims").sinr_linear;
        worst = worst.max(rel(s, c.norm_sqr() * base));
        let mut prev = 0.0;
        for i in 0..40 {
            let alpha = 10f64.powf(-3.0 + 0.25 * i as f64);
            let v = user_sinr(&inst.w, alpha, &ch.g, cfg).expect("dims").sinr_linear;
            worst = worst.max((prev - v) / prev.max(f64::MIN_POSITIVE));
            prev = v;
        }
    }
    outcome("sinr scaling and gain monotonicity", worst, 1e-12, trials)
}

fn small_cfg(rng: &mut impl Rng) -> SystemConfig {
    let m = rng.random_range(2..=8usize);
    let ns = rng.random_range(2..=16usize);
    SystemConfig::reference()
        .with(|p| {
            p.num_antennas = m;
            p.num_subcarriers = ns;
        })
        .expect("valid dimensions")
}

fn check_channel_phase(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 9);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let cfg = small_cfg(&mut rng);
        let ch = draw_channels(&cfg, rng.random());
        let rot = Complex64::from_polar(1.0, rng.random_range(-PI..PI));
        let a = optimize_joint(&cfg, &ch.g, default_init(&cfg));
        let b = optimize_joint(&cfg, &ch.g.map(|x| x * rot), default_init(&cfg));
        let e = if a.infeasible && b.infeasible {
            0.0
        } else {
            rel(a.crb_d, b.crb_d)
        };
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    outcome("optimized crb invariant to channel phase", worst, 1e-6, trials)
}

fn check_alignment(seed: u64, trials: usize) -> CheckOutcome {
    let mut rng = rng_for(seed, 10);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let cfg = small_cfg(&mut rng)
            .with(|p| p.min_user_sinr_db = -200.0)
            .expect("valid floor");
        let ch = draw_channels(&cfg, rng.random());
        let res: OptimizationResult = optimize_joint(&cfg, &ch.g, default_init(&cfg));
        let shortfall = 0.999 - res.beam_alignment(cfg.target_angle());
        worst = worst.max(shortfall.max(0.0));
        let random = Precoder::new(DVector::from_fn(cfg.num_antennas(), |_, _| {
            complex_gaussian(&mut rng, 1.0)
        }));
        let random = Precoder::new(
            &random.w * Complex64::new((cfg.max_power() / random.power()).sqrt(), 0.0),
        );
        let c_rand = crb_closed_form(
            &random,
            res.alpha,
            cfg.rcs_var(),
            cfg.target_angle(),
            cfg.target_distance(),
            &cfg,
        )
        .unwrap_or(f64::INFINITY);
        if !(res.crb_d <= c_rand) {
            worst = worst.max((res.crb_d - c_rand) / c_rand);
        }
    }
    outcome("unconstrained optimum is the matched beam", worst, 0.0, trials)
}
