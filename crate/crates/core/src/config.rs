//! System parameters, validation and unit conversions.
//!
//! Parameters are stored in the units they are quoted in (dB, dBm, degrees)
//! and exposed through accessors in linear power units and radians. Both dB
//! and dBm map through `10^(x/10)` onto one shared linear scale; absolute
//! wattage never enters any computation because every expression downstream
//! is a ratio of these quantities.
//!
//! The on-disk format is one `key = value` pair per line with `#` comments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing required key `{key}`")]
    Missing { key: &'static str },
    #[error("line {line}: duplicate key `{key}` (first set on line {first_line})")]
    Duplicate {
        key: String,
        line: usize,
        first_line: usize,
    },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("line {line}: key `{key}` has non-numeric value `{value}`")]
    InvalidNumber {
        key: String,
        line: usize,
        value: String,
    },
    #[error("{}: `{key}` {reason}", line.map(|l| format!("line {l}")).unwrap_or_else(|| "config".into()))]
    Invariant {
        key: &'static str,
        line: Option<usize>,
        reason: String,
    },
    #[error("non-finite value {0} cannot be converted")]
    NonFinite(f64),
    #[error("cannot read config file: {0}")]
    Io(String),
}

/// Raw parameter values in the units used by the configuration file.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigParams {
    pub noise_power_dbm: f64,
    pub chan_est_err_var_db: f64,
    pub propagated_noise_var_dbm: f64,
    pub repeater_user_chan_var_db: f64,
    pub composite_chan_var_db: f64,
    pub rcs_var_db: f64,
    pub target_angle_deg: f64,
    pub target_distance_m: f64,
    pub num_antennas: usize,
    pub num_time_samples: usize,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub max_power: f64,
    pub min_user_sinr_db: f64,
}

impl ConfigParams {
    /// Simulation parameter table with the 400 m target, 10 dB RCS variance
    /// and 2 dB SINR floor used for the reference experiments.
    ///
    /// `max_power` is not tabulated; 1e6 sits inside the range where the
    /// 18.5 dB fixed-gain repeater can still serve the user.
    pub fn reference() -> Self {
        Self {
            noise_power_dbm: -94.0,
            chan_est_err_var_db: -20.0,
            propagated_noise_var_dbm: -198.0,
            repeater_user_chan_var_db: -80.0,
            composite_chan_var_db: -184.0,
            rcs_var_db: 10.0,
            target_angle_deg: 30.0,
            target_distance_m: 400.0,
            num_antennas: 64,
            num_time_samples: 128,
            num_subcarriers: 128,
            subcarrier_spacing_hz: 120e3,
            max_power: 1e6,
            min_user_sinr_db: 2.0,
        }
    }
}

/// Configuration file keys, in canonical order.
pub const KEYS: [&str; 14] = [
    "noise_power_dbm",
    "chan_est_err_var_db",
    "propagated_noise_var_dbm",
    "repeater_user_chan_var_db",
    "composite_chan_var_db",
    "rcs_var_db",
    "target_angle_deg",
    "target_distance_m",
    "num_antennas",
    "num_time_samples",
    "num_subcarriers",
    "subcarrier_spacing_hz",
    "max_power",
    "min_user_sinr_db",
];

/// Validated, immutable system configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    params: ConfigParams,
}

impl SystemConfig {
    pub fn new(params: ConfigParams) -> Result<Self, ConfigError> {
        validate(&params, &HashMap::new())?;
        Ok(Self { params })
    }

    pub fn reference() -> Self {
        Self::new(ConfigParams::reference()).expect("reference parameters are valid")
    }

    pub fn params(&self) -> &ConfigParams {
        &self.params
    }

    /// Returns a copy with some raw parameters changed, re-validated.
    pub fn with(&self, edit: impl FnOnce(&mut ConfigParams)) -> Result<Self, ConfigError> {
        let mut params = self.params.clone();
        edit(&mut params);
        Self::new(params)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.as_ref().display())))?;
        load_config(&text)
    }

    /// σ_e², linear.
    pub fn noise_power(&self) -> f64 {
        lin(self.params.noise_power_dbm)
    }
    /// σ_H², linear.
    pub fn chan_est_err_var(&self) -> f64 {
        lin(self.params.chan_est_err_var_db)
    }
    /// σ_z², linear.
    pub fn propagated_noise_var(&self) -> f64 {
        lin(self.params.propagated_noise_var_dbm)
    }
    /// σ_b², linear.
    pub fn repeater_user_chan_var(&self) -> f64 {
        lin(self.params.repeater_user_chan_var_db)
    }
    /// σ_g², linear.
    pub fn composite_chan_var(&self) -> f64 {
        lin(self.params.composite_chan_var_db)
    }
    /// σ_RCS², linear.
    pub fn rcs_var(&self) -> f64 {
        lin(self.params.rcs_var_db)
    }
    /// Target angle φ in radians.
    pub fn target_angle(&self) -> f64 {
        self.params.target_angle_deg.to_radians()
    }
    pub fn target_distance(&self) -> f64 {
        self.params.target_distance_m
    }
    pub fn num_antennas(&self) -> usize {
        self.params.num_antennas
    }
    pub fn num_time_samples(&self) -> usize {
        self.params.num_time_samples
    }
    pub fn num_subcarriers(&self) -> usize {
        self.params.num_subcarriers
    }
    pub fn subcarrier_spacing(&self) -> f64 {
        self.params.subcarrier_spacing_hz
    }
    pub fn max_power(&self) -> f64 {
        self.params.max_power
    }
    /// γ_u, linear.
    pub fn min_user_sinr(&self) -> f64 {
        lin(self.params.min_user_sinr_db)
    }
    pub fn speed_of_light(&self) -> f64 {
        SPEED_OF_LIGHT
    }

    /// Renders the configuration in the file format accepted by [`load_config`].
    pub fn to_config_text(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let float_rows: [(&str, f64); 11] = [
            ("noise_power_dbm", p.noise_power_dbm),
            ("chan_est_err_var_db", p.chan_est_err_var_db),
            ("propagated_noise_var_dbm", p.propagated_noise_var_dbm),
            ("repeater_user_chan_var_db", p.repeater_user_chan_var_db),
            ("composite_chan_var_db", p.composite_chan_var_db),
            ("rcs_var_db", p.rcs_var_db),
            ("target_angle_deg", p.target_angle_deg),
            ("target_distance_m", p.target_distance_m),
            ("subcarrier_spacing_hz", p.subcarrier_spacing_hz),
            ("max_power", p.max_power),
            ("min_user_sinr_db", p.min_user_sinr_db),
        ];
        for (k, v) in float_rows {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        let _ = writeln!(out, "num_antennas = {}", p.num_antennas);
        let _ = writeln!(out, "num_time_samples = {}", p.num_time_samples);
        let _ = writeln!(out, "num_subcarriers = {}", p.num_subcarriers);
        out
    }
}

fn lin(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a dB (or dBm) value to a linear power ratio.
pub fn db_to_linear(x: f64) -> Result<f64, ConfigError> {
    if !x.is_finite() {
        return Err(ConfigError::NonFinite(x));
    }
    Ok(lin(x))
}

/// Converts a positive linear power ratio to dB.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Parses a `key = value` configuration document.
pub fn load_config(source: &str) -> Result<SystemConfig, ConfigError> {
    let mut seen: HashMap<&'static str, (usize, &str)> = HashMap::new();
    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let (key, value) = text.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line: line_no,
            text: text.to_string(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let canonical = KEYS
            .iter()
            .copied()
            .find(|k| *k == key)
            .ok_or_else(|| ConfigError::UnknownKey {
                key: key.to_string(),
                line: line_no,
            })?;
        if let Some((first_line, _)) = seen.get(canonical) {
            return Err(ConfigError::Duplicate {
                key: key.to_string(),
                line: line_no,
                first_line: *first_line,
            });
        }
        seen.insert(canonical, (line_no, value));
    }

    let float = |key: &'static str| -> Result<f64, ConfigError> {
        let (line, value) = *seen.get(key).ok_or(ConfigError::Missing { key })?;
        value.parse::<f64>().map_err(|_| ConfigError::InvalidNumber {
            key: key.to_string(),
            line,
            value: value.to_string(),
        })
    };
    let count = |key: &'static str| -> Result<usize, ConfigError> {
        let (line, value) = *seen.get(key).ok_or(ConfigError::Missing { key })?;
        value.parse::<usize>().map_err(|_| ConfigError::InvalidNumber {
            key: key.to_string(),
            line,
            value: value.to_string(),
        })
    };

    let params = ConfigParams {
        noise_power_dbm: float("noise_power_dbm")?,
        chan_est_err_var_db: float("chan_est_err_var_db")?,
        propagated_noise_var_dbm: float("propagated_noise_var_dbm")?,
        repeater_user_chan_var_db: float("repeater_user_chan_var_db")?,
        composite_chan_var_db: float("composite_chan_var_db")?,
        rcs_var_db: float("rcs_var_db")?,
        target_angle_deg: float("target_angle_deg")?,
        target_distance_m: float("target_distance_m")?,
        num_antennas: count("num_antennas")?,
        num_time_samples: count("num_time_samples")?,
        num_subcarriers: count("num_subcarriers")?,
        subcarrier_spacing_hz: float("subcarrier_spacing_hz")?,
        max_power: float("max_power")?,
        min_user_sinr_db: float("min_user_sinr_db")?,
    };
    let lines = seen.iter().map(|(k, (l, _))| (*k, *l)).collect();
    validate(&params, &lines)?;
    Ok(SystemConfig { params })
}

fn validate(p: &ConfigParams, lines: &HashMap<&'static str, usize>) -> Result<(), ConfigError> {
    let fail = |key: &'static str, reason: &str| ConfigError::Invariant {
        key,
        line: lines.get(key).copied(),
        reason: reason.to_string(),
    };
    let counts = [
        ("num_antennas", p.num_antennas),
        ("num_time_samples", p.num_time_samples),
        ("num_subcarriers", p.num_subcarriers),
    ];
    for (key, v) in counts {
        if v < 1 {
            return Err(fail(key, "must be at least 1"));
        }
    }
    let positive = [
        ("target_distance_m", p.target_distance_m),
        ("subcarrier_spacing_hz", p.subcarrier_spacing_hz),
        ("max_power", p.max_power),
    ];
    for (key, v) in positive {
        if !(v.is_finite() && v > 0.0) {
            return Err(fail(key, "must be finite and strictly positive"));
        }
    }
    let log_scaled = [
        ("noise_power_dbm", p.noise_power_dbm),
        ("chan_est_err_var_db", p.chan_est_err_var_db),
        ("propagated_noise_var_dbm", p.propagated_noise_var_dbm),
        ("repeater_user_chan_var_db", p.repeater_user_chan_var_db),
        ("composite_chan_var_db", p.composite_chan_var_db),
        ("rcs_var_db", p.rcs_var_db),
        ("min_user_sinr_db", p.min_user_sinr_db),
    ];
    for (key, v) in log_scaled {
        let linear = lin(v);
        if !(v.is_finite() && linear > 0.0 && linear.is_finite()) {
            return Err(fail(key, "must map to a finite, strictly positive linear value"));
        }
    }
    if !p.target_angle_deg.is_finite() {
        return Err(fail("target_angle_deg", "must be finite"));
    }
    Ok(())
}
