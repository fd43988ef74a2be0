//! User SINR behind the repeater.
//!
//! The user hears the amplified downlink through the composite channel
//! g_k = b_k·h_k, plus the repeater's amplified receiver noise and its own
//! noise. With one precoder shared by all sub-carriers,
//!
//! ```text
//! γ = Σ_k α²·|g_kᵀ w|² / (N_s·α²·σ_b²·σ_e² + N_s·σ_e²)
//! ```

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::config::{linear_to_db, SystemConfig};
use crate::model::Precoder;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SinrError {
    #[error("channel is {rows}x{cols} but expected {ns}x{m} (N_s x M) for a length-{w} precoder")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        ns: usize,
        m: usize,
        w: usize,
    },
    #[error("repeater gain must be non-negative, got {0}")]
    NegativeGain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrReport {
    pub sinr_linear: f64,
    /// `-inf` when the SINR is zero.
    pub sinr_db: f64,
    pub signal_power: f64,
    pub noise_plus_interference: f64,
}

/// Σ_k |g_kᵀ w|², i.e. ‖G·w‖² with g_kᵀ as the rows of G.
pub fn beamformed_gain(g: &DMatrix<Complex64>, w: &DVector<Complex64>) -> f64 {
    (g * w).norm_squared()
}

pub fn user_sinr(
    w: &Precoder,
    alpha: f64,
    g: &DMatrix<Complex64>,
    cfg: &SystemConfig,
) -> Result<SinrReport, SinrError> {
    let ns = cfg.num_subcarriers();
    let m = cfg.num_antennas();
    if g.nrows() != ns || g.ncols() != m || w.len() != m {
        return Err(SinrError::DimensionMismatch {
            rows: g.nrows(),
            cols: g.ncols(),
            ns,
            m,
            w: w.len(),
        });
    }
    if alpha < 0.0 {
        return Err(SinrError::NegativeGain(alpha));
    }
    let a2 = alpha * alpha;
    let noise = cfg.noise_power();
    let signal_power = a2 * beamformed_gain(g, &w.w);
    let noise_plus_interference = ns as f64 * noise * (a2 * cfg.repeater_user_chan_var() + 1.0);
    let sinr_linear = signal_power / noise_plus_interference;
    Ok(SinrReport {
        sinr_linear,
        sinr_db: linear_to_db(sinr_linear),
        signal_power,
        noise_plus_interference,
    })
}
