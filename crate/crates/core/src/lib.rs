//! Range sensing under network-controlled repeater interference.
//!
//! A monostatic MIMO-OFDM access point senses a target while an
//! amplify-and-forward repeater relays its downlink to a user. The repeater
//! leaks an amplified, partly unknown copy of the transmission back into the
//! radar receiver. This crate computes the Cramér-Rao bound of the target
//! range under that interference and jointly designs the access-point
//! precoder and repeater gain subject to a user SINR floor and a transmit
//! power cap.
//!
//! Module map:
//!
//! - [`config`]: system parameters and dB/linear conversions.
//! - [`model`]: steering vectors, OFDM samples, channel draws, received-signal synthesis.
//! - [`sinr`]: user SINR.
//! - [`crb`]: Fisher information (closed form and direct summation) and the range CRB.
//! - [`optimizer`]: projected-gradient joint and fixed-gain designs.
//! - [`experiments`]: paired Monte Carlo sweeps and aggregation.
//! - [`validation`]: runtime oracle and property checks.

pub mod config;
pub mod crb;
pub mod experiments;
pub mod model;
pub mod optimizer;
pub mod sinr;
pub mod validation;

pub use config::{db_to_linear, linear_to_db, ConfigError, SystemConfig};
pub use crb::{crb_range, CrbBreakdown, CrbError, FisherMatrix};
pub use model::{ChannelRealization, Precoder, SteeringVector};

pub use optimizer::{optimize_fixed_gain, optimize_joint, OptimizationResult, OptimizerSettings};
pub use sinr::{user_sinr, SinrReport};

pub use num_complex::Complex64;
