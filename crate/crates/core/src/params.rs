//! Tuning parameters for the SLAM filter and the loop-closure detector.

use serde::{Deserialize, Serialize};

use crate::ekf::ProcessNoise;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParamError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("n_lag must be ≥ n_lc")]
    LagShorterThanWindow,
    #[error("gamma must lie in (0, 1]")]
    GammaOutOfRange,
    #[error("unknown parameter '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for parameter '{key}'")]
    BadValue { key: String, value: String },
}

/// All tuning parameters of the filter and detector.
///
/// Defaults are the values used for the reported experiments: a one-second
/// matching window, five seconds of excluded history and loop closures at
/// least one second apart at 10 Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlamParams {
    /// Odometry position noise std per axis [m].
    pub sigma_p: f64,
    /// Gyroscope noise std [rad/s].
    pub sigma_omega: f64,
    /// Loop-closure measurement noise std [m].
    pub sigma_lc: f64,
    /// Magnetometer noise std assumed by the matching weights [uT].
    pub sigma_m: f64,
    /// Matching window length in samples.
    pub n_lc: usize,
    /// Most recent samples excluded from matching.
    pub n_lag: usize,
    /// Minimum spacing between accepted loop closures in samples.
    pub n_dist: usize,
    /// Detection threshold on the combined weight.
    pub gamma: f64,
    /// Minimum magnetic excitation over the window [uT].
    pub gamma_mag: f64,
    /// Marginal-likelihood rejection threshold.
    pub gamma_ml: f64,
    /// Initial position variance per axis [m^2].
    pub p0_pos: f64,
    /// Initial heading variance [rad^2].
    pub p0_heading: f64,
    /// Initial gyroscope bias variance [rad^2/s^2].
    pub p0_bias: f64,
    /// Initial landmark variance per axis [m^2].
    pub p0_landmark: f64,
    /// Multiplier on the process noise covariance used by the filter.
    pub process_noise_scale: f64,
}

impl Default for SlamParams {
    fn default() -> Self {
        Self {
            sigma_p: 1e-2,
            sigma_omega: 1e-2,
            sigma_lc: 0.1_f64.sqrt(),
            sigma_m: 3.0,
            n_lc: 10,
            n_lag: 50,
            n_dist: 10,
            gamma: 0.25,
            gamma_mag: 3.0,
            gamma_ml: 1e-16,
            p0_pos: 1e-8,
            p0_heading: 1e-8,
            p0_bias: 1e-4,
            p0_landmark: 1e4,
            process_noise_scale: 1.0,
        }
    }
}

/// Parameter names accepted by [`SlamParams::set`].
pub const PARAM_KEYS: &[&str] = &[
    "sigma_p",
    "sigma_omega",
    "sigma_lc",
    "sigma_m",
    "n_lc",
    "n_lag",
    "n_dist",
    "gamma",
    "gamma_mag",
    "gamma_ml",
    "p0_pos",
    "p0_heading",
    "p0_bias",
    "p0_landmark",
    "process_noise_scale",
];

impl SlamParams {
    /// Returns the parameters unchanged if every invariant holds, otherwise the
    /// first violated one.
    pub fn validate(self) -> Result<Self, ParamError> {
        let positive = [
            ("sigma_p", self.sigma_p),
            ("sigma_omega", self.sigma_omega),
            ("sigma_lc", self.sigma_lc),
            ("sigma_m", self.sigma_m),
            ("p0_pos", self.p0_pos),
            ("p0_heading", self.p0_heading),
            ("p0_bias", self.p0_bias),
            ("p0_landmark", self.p0_landmark),
            ("process_noise_scale", self.process_noise_scale),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ParamError::NotPositive(name));
            }
        }
        for (name, value) in [("gamma_mag", self.gamma_mag), ("gamma_ml", self.gamma_ml)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ParamError::Negative(name));
            }
        }
        if self.n_lc == 0 {
            return Err(ParamError::ZeroCount("n_lc"));
        }
        if self.n_lag < self.n_lc {
            return Err(ParamError::LagShorterThanWindow);
        }
        if self.n_dist == 0 {
            return Err(ParamError::ZeroCount("n_dist"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ParamError::GammaOutOfRange);
        }
        Ok(self)
    }

    /// Process noise used by the filter, scaled by `process_noise_scale`.
    pub fn process_noise(&self) -> ProcessNoise {
        ProcessNoise {
            q_pos: self.sigma_p * self.sigma_p * self.process_noise_scale,
            q_omega: self.sigma_omega * self.sigma_omega * self.process_noise_scale,
        }
    }

    /// Sets a parameter from its textual name and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        let bad = || ParamError::BadValue { key: key.to_string(), value: value.to_string() };
        let real = || value.trim().parse::<f64>().map_err(|_| bad());
        let count = || value.trim().parse::<usize>().map_err(|_| bad());
        match key {
            "sigma_p" => self.sigma_p = real()?,
            "sigma_omega" => self.sigma_omega = real()?,
            "sigma_lc" => self.sigma_lc = real()?,
            "sigma_m" => self.sigma_m = real()?,
            "n_lc" => self.n_lc = count()?,
            "n_lag" => self.n_lag = count()?,
            "n_dist" => self.n_dist = count()?,
            "gamma" => self.gamma = real()?,
            "gamma_mag" => self.gamma_mag = real()?,
            "gamma_ml" => self.gamma_ml = real()?,
            "p0_pos" => self.p0_pos = real()?,
            "p0_heading" => self.p0_heading = real()?,
            "p0_bias" => self.p0_bias = real()?,
            "p0_landmark" => self.p0_landmark = real()?,
            "process_noise_scale" => self.process_noise_scale = real()?,
            other => return Err(ParamError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}
