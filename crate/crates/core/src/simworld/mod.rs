//! Synthetic ground truth, magnetic fields and corrupted odometry.

mod field;
mod path;

pub use field::{field_at, make_field, FieldModel};
pub use path::Trajectory;

use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::types::SensorSample;
use path::heading_of;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("{0} must be positive")]
    Invalid(&'static str),
    #[error("{0} must be non-negative")]
    Negative(&'static str),
    #[error("coverage must lie in (0, 1]")]
    Coverage,
    #[error("waypoints: {0}")]
    Waypoints(String),
    #[error("unknown scenario parameter '{0}'")]
    UnknownKey(String),
    #[error("invalid value '{value}' for scenario parameter '{key}'")]
    BadValue { key: String, value: String },
}

/// Layout of the synthetic field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    /// World-frame background [uT].
    pub background: Vector3<f64>,
    /// Arc length between bumps along the path [m]; ignored when `anomaly_count` is set.
    pub anomaly_spacing: f64,
    pub anomaly_count: Option<usize>,
    /// Standard deviation of each bump amplitude component [uT].
    pub anomaly_strength: f64,
    /// Bump radius [m].
    pub length_scale: f64,
    /// Maximum sideways displacement of a bump from the path [m].
    pub lateral_offset: f64,
    /// Fraction of the lap, from its start, that carries bumps.
    pub coverage: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            background: Vector3::new(15.0, 0.0, -42.0),
            anomaly_spacing: 1.5,
            anomaly_count: None,
            anomaly_strength: 8.0,
            length_scale: 1.0,
            lateral_offset: 0.5,
            coverage: 1.0,
        }
    }
}

/// Everything needed to generate one synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub trajectory: Trajectory,
    pub laps: usize,
    /// Walking speed [m/s].
    pub speed: f64,
    pub rate_hz: f64,
    pub seed: u64,
    /// Constant gyroscope bias added to the angular rate [rad/s].
    pub bias_omega: f64,
    /// Odometry position noise std per axis [m].
    pub sigma_p: f64,
    /// Gyroscope noise std [rad/s].
    pub sigma_omega: f64,
    /// Magnetometer noise std per axis [uT].
    pub sigma_mag: f64,
    pub field: FieldSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            trajectory: Trajectory::Square { side: 10.0 },
            laps: 4,
            speed: 1.0,
            rate_hz: 10.0,
            seed: 1,
            bias_omega: 0.005,
            sigma_p: 0.01,
            sigma_omega: 0.01,
            sigma_mag: 0.5,
            field: FieldSpec::default(),
        }
    }
}

/// Keys accepted by [`ScenarioSpec::set`].
pub const SCENARIO_KEYS: &[&str] = &[
    "trajectory",
    "side",
    "radius",
    "length",
    "width",
    "waypoints",
    "laps",
    "speed",
    "rate_hz",
    "seed",
    "bias_omega",
    "sigma_p",
    "sigma_omega",
    "sigma_mag",
    "background_x",
    "background_y",
    "background_z",
    "anomaly_spacing",
    "anomaly_count",
    "anomaly_strength",
    "length_scale",
    "lateral_offset",
    "coverage",
];

impl ScenarioSpec {
    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.trajectory.validate()?;
        let positive = [("speed", self.speed), ("rate_hz", self.rate_hz), ("length_scale", self.field.length_scale)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Invalid(name));
            }
        }
        if self.laps == 0 {
            return Err(SimError::Invalid("laps"));
        }
        if self.field.anomaly_count.is_none() && !(self.field.anomaly_spacing > 0.0) {
            return Err(SimError::Invalid("anomaly_spacing"));
        }
        let non_negative = [
            ("sigma_p", self.sigma_p),
            ("sigma_omega", self.sigma_omega),
            ("sigma_mag", self.sigma_mag),
            ("anomaly_strength", self.field.anomaly_strength),
            ("lateral_offset", self.field.lateral_offset),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::Negative(name));
            }
        }
        if !self.bias_omega.is_finite() || !self.field.background.iter().all(|v| v.is_finite()) {
            return Err(SimError::BadValue { key: "bias_omega/background".into(), value: "non-finite".into() });
        }
        if !(self.field.coverage > 0.0 && self.field.coverage <= 1.0) {
            return Err(SimError::Coverage);
        }
        Ok(())
    }

    /// Sets a field from its textual key. Shape dimensions switch the
    /// trajectory kind only through the `trajectory` key; `waypoints` loads a
    /// file relative to the working directory.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SimError> {
        let bad = || SimError::BadValue { key: key.to_string(), value: value.to_string() };
        let real = || value.trim().parse::<f64>().map_err(|_| bad());
        let int = || value.trim().parse::<u64>().map_err(|_| bad());
        match key {
            "trajectory" => {
                self.trajectory = match value.trim() {
                    "square" => Trajectory::Square { side: 10.0 },
                    "figure-eight" => Trajectory::FigureEight { radius: 5.0 },
                    "corridor-loop" => Trajectory::CorridorLoop { length: 60.0, width: 27.5 },
                    "from-file" => match &self.trajectory {
                        t @ Trajectory::Waypoints { .. } => t.clone(),
                        _ => return Err(SimError::Waypoints("set 'waypoints' to a file path".into())),
                    },
                    _ => return Err(bad()),
                }
            }
            "side" => match &mut self.trajectory {
                Trajectory::Square { side } => *side = real()?,
                _ => return Err(bad()),
            },
            "radius" => match &mut self.trajectory {
                Trajectory::FigureEight { radius } => *radius = real()?,
                _ => return Err(bad()),
            },
            "length" => match &mut self.trajectory {
                Trajectory::CorridorLoop { length, .. } => *length = real()?,
                _ => return Err(bad()),
            },
            "width" => match &mut self.trajectory {
                Trajectory::CorridorLoop { width, .. } => *width = real()?,
                _ => return Err(bad()),
            },
            "waypoints" => self.trajectory = Trajectory::from_file(Path::new(value.trim()))?,
            "laps" => self.laps = int()? as usize,
            "speed" => self.speed = real()?,
            "rate_hz" => self.rate_hz = real()?,
            "seed" => self.seed = int()?,
            "bias_omega" => self.bias_omega = real()?,
            "sigma_p" => self.sigma_p = real()?,
            "sigma_omega" => self.sigma_omega = real()?,
            "sigma_mag" => self.sigma_mag = real()?,
            "background_x" => self.field.background.x = real()?,
            "background_y" => self.field.background.y = real()?,
            "background_z" => self.field.background.z = real()?,
            "anomaly_spacing" => self.field.anomaly_spacing = real()?,
            "anomaly_count" => {
                self.field.anomaly_count = match value.trim() {
                    "auto" => None,
                    _ => Some(int()? as usize),
                }
            }
            "anomaly_strength" => self.field.anomaly_strength = real()?,
            "length_scale" => self.field.length_scale = real()?,
            "lateral_offset" => self.field.lateral_offset = real()?,
            "coverage" => self.field.coverage = real()?,
            other => return Err(SimError::UnknownKey(other.to_string())),
        }
        Ok(())
    }
}

/// True poses at the sample instants and the angular rate between them.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthPath {
    pub dt: f64,
    pub positions: Vec<Vector2<f64>>,
    /// Unwrapped headings [rad].
    pub headings: Vec<f64>,
    /// `omegas[t] = (headings[t + 1] - headings[t]) / dt`.
    pub omegas: Vec<f64>,
}

impl GroundTruthPath {
    /// Number of odometry steps (one less than the number of poses).
    pub fn steps(&self) -> usize {
        self.omegas.len()
    }
}

/// Constant-speed traversal of `laps` laps, sampled at `rate_hz`.
///
/// The step length is adjusted so that the last pose lands exactly on the end
/// of the final lap.
pub fn generate_truth(spec: &ScenarioSpec) -> GroundTruthPath {
    let lap = spec.trajectory.lap();
    let lap_len = lap.length();
    let total = lap_len * spec.laps as f64;
    let dt = spec.dt();
    let steps = ((total / (spec.speed * dt)).round() as usize).max(1);
    let ds = total / steps as f64;

    let mut positions = Vec::with_capacity(steps + 1);
    let mut headings: Vec<f64> = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let s = k as f64 * ds;
        let lap_index = (s / lap_len).floor();
        let mut within = s - lap_index * lap_len;
        if within >= lap_len || k == steps {
            within = 0.0;
        }
        let (p, dir) = lap.point(within);
        let raw = heading_of(dir);
        let psi = match headings.last() {
            Some(prev) => raw + std::f64::consts::TAU * ((prev - raw) / std::f64::consts::TAU).round(),
            None => raw,
        };
        positions.push(p);
        headings.push(psi);
    }
    let omegas = headings.windows(2).map(|w| (w[1] - w[0]) / dt).collect();
    GroundTruthPath { dt, positions, headings, omegas }
}

/// Corrupts the true motion and samples the field.
///
/// Noise draws come from a stream of `spec.seed` separate from the field, and
/// standard normals are scaled by each std, so runs that differ only in the
/// noise levels share their random numbers.
pub fn synthesize_measurements(truth: &GroundTruthPath, field: &FieldModel, spec: &ScenarioSpec) -> Vec<SensorSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    (0..truth.steps())
        .map(|t| {
            let psi = truth.headings[t];
            let p = truth.positions[t];
            let step = crate::ekf::rotation_matrix(psi).transpose() * (truth.positions[t + 1] - p);
            let odom_pos = step + Vector2::new(normal(), normal()) * spec.sigma_p;
            let odom_gyro = truth.omegas[t] + spec.bias_omega + normal() * spec.sigma_omega;
            let mag = field_at(field, p, psi) + Vector3::new(normal(), normal(), normal()) * spec.sigma_mag;
            SensorSample { index: t, dt: truth.dt, odom_pos, odom_gyro, mag }
        })
        .collect()
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedRun {
    pub truth: GroundTruthPath,
    pub field: FieldModel,
    pub samples: Vec<SensorSample>,
}

/// Generates truth, a field seeded by `spec.seed` and the measurements.
pub fn simulate(spec: &ScenarioSpec) -> Result<SimulatedRun, SimError> {
    spec.validate()?;
    let truth = generate_truth(spec);
    let field = make_field(spec.seed, spec);
    let samples = synthesize_measurements(&truth, &field, spec);
    Ok(SimulatedRun { truth, field, samples })
}
