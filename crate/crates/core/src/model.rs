//! Physical-layer primitives: array response, sampled OFDM, geometry,
//! channel draws and the per-sub-carrier received signal at the access point.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::config::SystemConfig;

/// Tolerance on |c_k| − 1 for OFDM symbols.
pub const UNIT_MODULUS_TOL: f64 = 1e-9;

const STREAM_CHANNEL_H: u64 = 1;
const STREAM_CHANNEL_B: u64 = 2;
const STREAM_RCS: u64 = 3;
const STREAM_RX_NOISE: u64 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("distance must be strictly positive, got {0}")]
    InvalidDistance(f64),
    #[error("symbol {index} has modulus {modulus}, expected 1")]
    NonUnitSymbol { index: usize, modulus: f64 },
    #[error("{what} index {index} out of range (< {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("repeater gain must be non-negative, got {0}")]
    NegativeGain(f64),
}

/// Half-wavelength uniform linear array response toward one angle.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub entries: DVector<Complex64>,
    /// Radians.
    pub angle: f64,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// a(φ)^H w.
    pub fn inner(&self, w: &DVector<Complex64>) -> Complex64 {
        self.entries.dotc(w)
    }
}

/// a(φ) with entries exp(j·m·π·cos φ), m = 0..M−1.
pub fn steering_vector(phi: f64, num_antennas: usize) -> SteeringVector {
    let phase = PI * phi.cos();
    let entries = DVector::from_fn(num_antennas, |m, _| Complex64::from_polar(1.0, m as f64 * phase));
    SteeringVector { entries, angle: phi }
}

/// Access-point precoding vector w.
#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    pub w: DVector<Complex64>,
}

impl Precoder {
    pub fn new(w: DVector<Complex64>) -> Self {
        Self { w }
    }

    /// Zero-phase, equal-power precoder √(P/M)·[1, …, 1].
    pub fn uniform(num_antennas: usize, power: f64) -> Self {
        let amp = (power / num_antennas as f64).sqrt();
        Self::new(DVector::from_element(num_antennas, Complex64::new(amp, 0.0)))
    }

    /// √(P/M)·a(φ), which maximizes |a(φ)^H w|² at power P.
    pub fn matched(steering: &SteeringVector, power: f64) -> Self {
        let amp = (power / steering.len() as f64).sqrt();
        Self::new(steering.entries.map(|a| a * amp))
    }

    /// ‖w‖².
    pub fn power(&self) -> f64 {
        self.w.norm_squared()
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Radial projection onto the ball ‖w‖² ≤ `max_power`.
    pub fn project(&self, max_power: f64) -> Self {
        let p = self.power();
        if p <= max_power {
            self.clone()
        } else {
            Self::new(&self.w * Complex64::new((max_power / p).sqrt(), 0.0))
        }
    }
}

/// One Monte Carlo channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// N_s × M composite AP-to-user channel; row k is g_k = b_k·h_k.
    pub g: DMatrix<Complex64>,
    /// N_s × M AP-to-repeater channel; row k is h_k.
    pub h: DMatrix<Complex64>,
    /// Repeater-to-user coefficients b_k.
    pub b: DVector<Complex64>,
    /// Radar cross-section σ.
    pub rcs: Complex64,
}

/// Σ_k c_k·exp(j2πkn/N_s) for unit-modulus symbols c_k.
pub fn ofdm_sample(symbols: &[Complex64], n: usize) -> Result<Complex64, ModelError> {
    check_unit_modulus(symbols)?;
    let ns = symbols.len() as f64;
    Ok(symbols
        .iter()
        .enumerate()
        .map(|(k, c)| c * Complex64::from_polar(1.0, 2.0 * PI * (k * n) as f64 / ns))
        .sum())
}

fn check_unit_modulus(symbols: &[Complex64]) -> Result<(), ModelError> {
    match symbols
        .iter()
        .enumerate()
        .find(|(_, c)| (c.norm() - 1.0).abs() > UNIT_MODULUS_TOL)
    {
        Some((index, c)) => Err(ModelError::NonUnitSymbol {
            index,
            modulus: c.norm(),
        }),
        None => Ok(()),
    }
}

/// Line-of-sight echo loss β(d) = 1/d².
pub fn path_loss(d: f64) -> Result<f64, ModelError> {
    if !(d > 0.0) {
        return Err(ModelError::InvalidDistance(d));
    }
    Ok(1.0 / (d * d))
}

/// Round-trip delay τ(d) = 2d/c.
pub fn round_trip_delay(d: f64, c: f64) -> Result<f64, ModelError> {
    if !(d > 0.0) {
        return Err(ModelError::InvalidDistance(d));
    }
    Ok(2.0 * d / c)
}

/// splitmix64 finalizer; used to derive independent seeds from (seed, index).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index));
    rng.set_stream(tag);
    rng
}

/// Draws CN(0, var).
pub fn complex_gaussian(rng: &mut impl rand::Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draws one channel realization.
///
/// b_k ~ CN(0, σ_b²) and h_k entries ~ CN(0, σ_g²/σ_b²) are independent, so
/// every entry of g_k = b_k·h_k has variance σ_g². The RCS is drawn from a
/// unit-variance stream and scaled, so realizations for different σ_RCS²
/// share the same underlying randomness.
pub fn draw_channels(cfg: &SystemConfig, seed: u64) -> ChannelRealization {
    let m = cfg.num_antennas();
    let ns = cfg.num_subcarriers();
    let var_b = cfg.repeater_user_chan_var();
    let var_h = cfg.composite_chan_var() / var_b;

    let mut rng_b = stream(seed, STREAM_CHANNEL_B, 0);
    let b = DVector::from_fn(ns, |_, _| complex_gaussian(&mut rng_b, var_b));
    let mut rng_h = stream(seed, STREAM_CHANNEL_H, 0);
    // Row-major fill so the draw order does not depend on matrix storage.
    let mut h = DMatrix::zeros(ns, m);
    for k in 0..ns {
        for i in 0..m {
            h[(k, i)] = complex_gaussian(&mut rng_h, var_h);
        }
    }
    let mut g = h.clone();
    for k in 0..ns {
        let bk = b[k];
        g.row_mut(k).iter_mut().for_each(|x| *x *= bk);
    }
    let mut rng_rcs = stream(seed, STREAM_RCS, 0);
    let rcs = complex_gaussian(&mut rng_rcs, 1.0) * cfg.rcs_var().sqrt();
    ChannelRealization { g, h, b, rcs }
}

/// Receiver noise for signal synthesis. `None` switches every noise term off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NoiseSource {
    pub seed: Option<u64>,
}

impl NoiseSource {
    pub fn off() -> Self {
        Self { seed: None }
    }

    pub fn seeded(seed: u64) -> Self {
        Self { seed: Some(seed) }
    }
}

/// Received M-vector at the access point for sub-carrier `k`, sample `n`:
///
/// σ·β(d)·a a^H·x_k(n/f_s − τ(d)) + α·h_k h_kᵀ·x_k[n] + α·h_k·n_rk[n] + n_k[n]
///
/// The delayed echo is evaluated analytically,
/// x_k(t) = w·c_k·exp(j2πkΔf·t), with f_s = N_s·Δf.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_received_ap(
    cfg: &SystemConfig,
    w: &Precoder,
    alpha: f64,
    chan: &ChannelRealization,
    symbols: &[Complex64],
    k: usize,
    n: usize,
    noise: NoiseSource,
) -> Result<DVector<Complex64>, ModelError> {
    let m = cfg.num_antennas();
    let ns = cfg.num_subcarriers();
    if alpha < 0.0 {
        return Err(ModelError::NegativeGain(alpha));
    }
    if w.len() != m || chan.h.nrows() != ns || chan.h.ncols() != m || symbols.len() != ns {
        return Err(ModelError::DimensionMismatch(format!(
            "M={m}, N_s={ns}, w={}, h={}x{}, symbols={}",
            w.len(),
            chan.h.nrows(),
            chan.h.ncols(),
            symbols.len()
        )));
    }
    if k >= ns {
        return Err(ModelError::IndexOutOfRange {
            what: "sub-carrier",
            index: k,
            bound: ns,
        });
    }
    if n >= cfg.num_time_samples() {
        return Err(ModelError::IndexOutOfRange {
            what: "sample",
            index: n,
            bound: cfg.num_time_samples(),
        });
    }
    check_unit_modulus(symbols)?;

    let d = cfg.target_distance();
    let beta = path_loss(d)?;
    let tau = round_trip_delay(d, cfg.speed_of_light())?;
    let df = cfg.subcarrier_spacing();
    let t = n as f64 / (df * ns as f64);
    let ck = symbols[k];

    let a = steering_vector(cfg.target_angle(), m);
    let echo_phase = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * df * (t - tau));
    let echo = &a.entries * (chan.rcs * beta * a.inner(&w.w) * ck * echo_phase);

    let hk = chan.h.row(k).transpose();
    let now_phase = Complex64::from_polar(1.0, 2.0 * PI * (k * n) as f64 / ns as f64);
    let leak = hk.dot(&w.w) * ck * now_phase * alpha;
    let mut y = echo + &hk * leak;

    if let Some(seed) = noise.seed {
        let var = cfg.noise_power();
        let mut rng = stream(seed, STREAM_RX_NOISE, (k * cfg.num_time_samples() + n) as u64);
        let n_r = complex_gaussian(&mut rng, var);
        y += &hk * (n_r * alpha);
        for yi in y.iter_mut() {
            *yi += complex_gaussian(&mut rng, var);
        }
    }
    Ok(y)
}
