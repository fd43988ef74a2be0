//! Fisher information and Cramér-Rao bound for the target range.
//!
//! After the known part of the repeater leakage is cancelled, the access
//! point observes, per sub-carrier k and sample n,
//!
//! ```text
//! y = μ_nk(ξ) + α·e^{j2πkn/N_s}·D_kᵀ·h̃_k + α·z + n,    ξ = (d, σ_re, σ_im)
//! μ_nk(ξ) = σ·β(d)·a a^H·e^{j2πkn/N_s}·w·c_k·e^{j2πkΔf·τ(d)}
//! ```
//!
//! with covariance q·I_M, q = α²σ_H²‖w‖² + α²σ_z² + σ_e². The Slepian-Bangs
//! sum over (n, k) collapses to
//!
//! ```text
//! I(ξ) = ψ/d⁴ · [[|σ|²C, S_re, S_im], [S_re, N_s, 0], [S_im, 0, N_s]]
//! ψ    = 2·M·N·|a^H w|² / q
//! ```
//!
//! Two routes are provided: the closed form above ([`fim_closed_form`]) and a
//! literal summation of the Slepian-Bangs terms ([`fim_direct`]). A variant
//! with 1 instead of N_s on the trailing diagonal is kept as
//! [`fim_closed_form_unit_diagonal`]; it is not positive semidefinite for
//! N_s ≥ 2 and serves as a known-bad reference.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

use crate::config::SystemConfig;
use crate::model::{steering_vector, Precoder};

/// Agreement required between the closed form and the full inverse of the
/// directly summed Fisher matrix.
pub const ORACLE_REL_TOL: f64 = 1e-9;

/// Relative size below which the range Schur complement counts as zero.
const SCHUR_REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Degeneracy {
    #[error("RCS is zero, so the echo carries no range information")]
    ZeroRcs,
    #[error("precoder is orthogonal to the target steering vector")]
    BeamNull,
    #[error("range and RCS phase are not separable (needs at least two sub-carriers)")]
    RangePhaseAmbiguity,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrbError {
    #[error("range is not identifiable: {0}")]
    Degenerate(Degeneracy),
    #[error("distance must be strictly positive, got {0}")]
    InvalidDistance(f64),
    #[error("closed-form CRB {closed} disagrees with direct inverse {direct}")]
    OracleMismatch { closed: f64, direct: f64 },
}

/// Real symmetric 3×3 information matrix over (d, σ_re, σ_im).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherMatrix {
    pub entries: Matrix3<f64>,
}

impl FisherMatrix {
    pub fn trace(&self) -> f64 {
        self.entries.trace()
    }

    pub fn max_asymmetry(&self) -> f64 {
        (self.entries - self.entries.transpose()).abs().max()
    }

    pub fn eigenvalues(&self) -> [f64; 3] {
        let sym = (self.entries + self.entries.transpose()) * 0.5;
        let ev = SymmetricEigen::new(sym).eigenvalues;
        let mut out = [ev[0], ev[1], ev[2]];
        out.sort_by(|a, b| a.total_cmp(b));
        out
    }

    /// Smallest eigenvalue ≥ −1e−9·|trace|.
    pub fn is_psd(&self) -> bool {
        self.eigenvalues()[0] >= -1e-9 * self.trace().abs()
    }

    /// [I⁻¹]₁₁ via a full 3×3 inverse.
    pub fn inverse_range_element(&self) -> Option<f64> {
        self.entries.try_inverse().map(|inv| inv[(0, 0)])
    }
}

/// Range-relevant pieces of the bound together with the direct-route check.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbBreakdown {
    /// Range CRB from the closed form, m².
    pub crb_d: f64,
    /// [fim_direct⁻¹]₁₁, m².
    pub crb_direct: f64,
    /// d⁴ / (ψ·(|σ|²C − S_re² − S_im²)) with a unit trailing diagonal.
    /// Negative whenever N_s ≥ 2.
    pub crb_unit_diagonal: f64,
    pub psi: f64,
    pub coeff_c: f64,
    pub s_re: f64,
    pub s_im: f64,
    /// Directly summed Fisher matrix.
    pub fim: FisherMatrix,
}

impl CrbBreakdown {
    pub fn relative_discrepancy(&self) -> f64 {
        ((self.crb_d - self.crb_direct) / self.crb_direct).abs()
    }
}

/// Which trailing diagonal entry to place in the closed-form matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalVariant {
    /// N_s, matching the Slepian-Bangs summation.
    #[default]
    Reconciled,
    /// 1, which leaves the matrix indefinite for N_s ≥ 2.
    Unit,
}

/// Noise-plus-interference power q = α²σ_H²‖w‖² + α²σ_z² + σ_e².
pub fn interference_power(power: f64, alpha: f64, cfg: &SystemConfig) -> f64 {
    let a2 = alpha * alpha;
    a2 * cfg.chan_est_err_var() * power + a2 * cfg.propagated_noise_var() + cfg.noise_power()
}

/// ψ(w, α) = 2·M·N·|a(φ)^H w|² / q.
pub fn psi(w: &Precoder, alpha: f64, phi: f64, cfg: &SystemConfig) -> f64 {
    let a = steering_vector(phi, w.len());
    let gain = a.inner(&w.w).norm_sqr();
    2.0 * w.len() as f64 * cfg.num_time_samples() as f64 * gain
        / interference_power(w.power(), alpha, cfg)
}

/// C = 4N_s/d² + 16π²Δf²·N_s(N_s−1)(2N_s−1)/(6c²).
pub fn coeff_c(cfg: &SystemConfig, d: f64) -> f64 {
    let ns = cfg.num_subcarriers() as f64;
    let df = cfg.subcarrier_spacing();
    let c = cfg.speed_of_light();
    4.0 * ns / (d * d) + 16.0 * PI * PI * df * df * ns * (ns - 1.0) * (2.0 * ns - 1.0) / (6.0 * c * c)
}

/// (S_re, S_im): range / RCS coupling terms.
pub fn coeff_s(sigma: Complex64, cfg: &SystemConfig, d: f64) -> (f64, f64) {
    let ns = cfg.num_subcarriers() as f64;
    let df = cfg.subcarrier_spacing();
    let c = cfg.speed_of_light();
    let a = 2.0 * ns / d;
    let b = 4.0 * PI * df * ns * (ns - 1.0) / (2.0 * c);
    (-sigma.re * a - sigma.im * b, -sigma.im * a + sigma.re * b)
}

/// Closed-form Fisher matrix with the chosen trailing diagonal.
pub fn fim_closed_form_with(
    variant: DiagonalVariant,
    w: &Precoder,
    alpha: f64,
    sigma: Complex64,
    phi: f64,
    d: f64,
    cfg: &SystemConfig,
) -> FisherMatrix {
    let scale = psi(w, alpha, phi, cfg) / d.powi(4);
    let c = coeff_c(cfg, d);
    let (s_re, s_im) = coeff_s(sigma, cfg, d);
    let diag = match variant {
        DiagonalVariant::Reconciled => cfg.num_subcarriers() as f64,
        DiagonalVariant::Unit => 1.0,
    };
    #[rustfmt::skip]
    let entries = Matrix3::new(
        sigma.norm_sqr() * c, s_re, s_im,
        s_re,                 diag, 0.0,
        s_im,                 0.0,  diag,
    ) * scale;
    FisherMatrix { entries }
}

pub fn fim_closed_form(
    w: &Precoder,
    alpha: f64,
    sigma: Complex64,
    phi: f64,
    d: f64,
    cfg: &SystemConfig,
) -> FisherMatrix {
    fim_closed_form_with(DiagonalVariant::Reconciled, w, alpha, sigma, phi, d, cfg)
}

pub fn fim_closed_form_unit_diagonal(
    w: &Precoder,
    alpha: f64,
    sigma: Complex64,
    phi: f64,
    d: f64,
    cfg: &SystemConfig,
) -> FisherMatrix {
    fim_closed_form_with(DiagonalVariant::Unit, w, alpha, sigma, phi, d, cfg)
}

/// Literal Slepian-Bangs summation
/// Σ_n Σ_k 2·Re{∂μ_nk^H/∂ξ_i · Σ⁻¹ · ∂μ_nk/∂ξ_j} with analytic partials.
///
/// Symbols are unit modulus, so c_k drops out of every product; c_k = 1.
pub fn fim_direct(
    w: &Precoder,
    alpha: f64,
    sigma: Complex64,
    phi: f64,
    d: f64,
    cfg: &SystemConfig,
) -> FisherMatrix {
    let m = w.len();
    let ns = cfg.num_subcarriers();
    let n_samples = cfg.num_time_samples();
    let df = cfg.subcarrier_spacing();
    let c = cfg.speed_of_light();
    let beta = 1.0 / (d * d);
    let dbeta = -2.0 / (d * d * d);
    let tau = 2.0 * d / c;
    let inv_q = 1.0 / interference_power(w.power(), alpha, cfg);

    let a = steering_vector(phi, m);
    let beam = &a.entries * a.inner(&w.w);

    let mut info = Matrix3::<f64>::zeros();
    let mut grads = [
        vec![Complex64::default(); m],
        vec![Complex64::default(); m],
        vec![Complex64::default(); m],
    ];
    for n in 0..n_samples {
        for k in 0..ns {
            let kf = k as f64;
            let phase = Complex64::from_polar(1.0, 2.0 * PI * (k * n % ns) as f64 / ns as f64)
                * Complex64::from_polar(1.0, 2.0 * PI * kf * df * tau);
            let d_range = sigma * Complex64::new(dbeta, beta * 4.0 * PI * kf * df / c) * phase;
            let d_re = phase * beta;
            let d_im = Complex64::i() * d_re;
            for (i, bm) in beam.iter().enumerate() {
                grads[0][i] = bm * d_range;
                grads[1][i] = bm * d_re;
                grads[2][i] = bm * d_im;
            }
            for r in 0..3 {
                for s in r..3 {
                    let inner: Complex64 = grads[r]
                        .iter()
                        .zip(&grads[s])
                        .map(|(x, y)| x.conj() * y)
                        .sum();
                    info[(r, s)] += 2.0 * inner.re * inv_q;
                }
            }
        }
    }
    for r in 0..3 {
        for s in 0..r {
            info[(r, s)] = info[(s, r)];
        }
    }
    FisherMatrix { entries: info }
}

/// Range Schur complement |σ|²C − (S_re² + S_im²)/N_s for σ = √(|σ|²/2)(1+j).
pub fn schur_term(sigma_sq: f64, d: f64, cfg: &SystemConfig) -> f64 {
    let sigma = rcs_from_power(sigma_sq);
    let (s_re, s_im) = coeff_s(sigma, cfg, d);
    sigma_sq * coeff_c(cfg, d) - (s_re * s_re + s_im * s_im) / cfg.num_subcarriers() as f64
}

/// Representative RCS with the given |σ|² and equal real and imaginary parts.
pub fn rcs_from_power(sigma_sq: f64) -> Complex64 {
    let part = (sigma_sq / 2.0).sqrt();
    Complex64::new(part, part)
}

/// Closed-form range CRB d⁴ / (ψ·(|σ|²C − (S_re² + S_im²)/N_s)).
///
/// This is the cheap route used inside the optimizer.
pub fn crb_closed_form(
    w: &Precoder,
    alpha: f64,
    sigma_sq: f64,
    phi: f64,
    d: f64,
    cfg: &SystemConfig,
) -> Result<f64, CrbError> {
    if !(d > 0.0) {
        return Err(CrbError::InvalidDistance(d));
    }
    if !(sigma_sq > 0.0) {
        return Err(CrbError::Degenerate(Degeneracy::ZeroRcs));
    }
    let a = steering_vector(phi, w.len());
    let gain = a.inner(&w.w).norm_sqr();
    if !(gain > 1e-30 * w.len() as f64 * w.power()) {
        return Err(CrbError::Degenerate(Degeneracy::BeamNull));
    }
    let schur = schur_term(sigma_sq, d, cfg);
    if !(schur > SCHUR_REL_FLOOR * sigma_sq * coeff_c(cfg, d)) {
        return Err(CrbError::Degenerate(Degeneracy::RangePhaseAmbiguity));
    }
    Ok(d.powi(4) / (psi(w, alpha, phi, cfg) * schur))
}

/// Range CRB from the closed form, cross-checked against the full inverse
/// of [`fim_direct`].
pub fn crb_range(
    w: &Precoder,
    alpha: f64,
    sigma_sq: f64,
    phi: f64,
    d: f64,
    cfg: &SystemConfig,
) -> Result<CrbBreakdown, CrbError> {
    let crb_d = crb_closed_form(w, alpha, sigma_sq, phi, d, cfg)?;
    let sigma = rcs_from_power(sigma_sq);
    let fim = fim_direct(w, alpha, sigma, phi, d, cfg);
    let crb_direct = fim
        .inverse_range_element()
        .unwrap_or(f64::INFINITY);
    if !(((crb_d - crb_direct) / crb_direct).abs() <= ORACLE_REL_TOL) {
        return Err(CrbError::OracleMismatch {
            closed: crb_d,
            direct: crb_direct,
        });
    }
    let psi_v = psi(w, alpha, phi, cfg);
    let coeff_c = coeff_c(cfg, d);
    let (s_re, s_im) = coeff_s(sigma, cfg, d);
    let crb_unit_diagonal = d.powi(4) / (psi_v * (sigma_sq * coeff_c - s_re * s_re - s_im * s_im));
    Ok(CrbBreakdown {
        crb_d,
        crb_direct,
        crb_unit_diagonal,
        psi: psi_v,
        coeff_c,
        s_re,
        s_im,
        fim,
    })
}
