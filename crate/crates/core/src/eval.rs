//! Trajectory alignment, error metrics and the Monte Carlo harness.

use std::io::Write;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::ekf::rotation_matrix;
use crate::params::SlamParams;
use crate::simworld::{generate_truth, make_field, synthesize_measurements, ScenarioSpec, SimError};
use crate::slam::run_slam;
use crate::types::SensorSample;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("sequence lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two points to align")]
    TooShort,
    #[error("reference trajectory is degenerate (all points coincide)")]
    Degenerate,
    #[error("Monte Carlo config: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] SimError),
}

/// A rigid transform `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix2<f64>,
    pub translation: Vector2<f64>,
}

impl RigidTransform {
    pub fn apply(&self, p: Vector2<f64>) -> Vector2<f64> {
        self.rotation * p + self.translation
    }
}

fn centroid(points: &[Vector2<f64>]) -> Vector2<f64> {
    points.iter().sum::<Vector2<f64>>() / points.len() as f64
}

/// Rotation and translation (no scaling) minimizing the squared distance
/// between the transformed estimate and the reference.
pub fn procrustes_transform(
    estimate: &[Vector2<f64>],
    reference: &[Vector2<f64>],
) -> Result<RigidTransform, EvalError> {
    if estimate.len() != reference.len() {
        return Err(EvalError::LengthMismatch(estimate.len(), reference.len()));
    }
    if estimate.len() < 2 {
        return Err(EvalError::TooShort);
    }
    let ce = centroid(estimate);
    let cr = centroid(reference);
    let spread: f64 = reference.iter().map(|r| (r - cr).norm_squared()).sum();
    if !(spread > 0.0) {
        return Err(EvalError::Degenerate);
    }
    // Cross-covariance sum (r - cr)(e - ce)^T; the optimal rotation is U diag(1, det) V^T.
    let cross: Matrix2<f64> = estimate.iter().zip(reference).map(|(e, r)| (r - cr) * (e - ce).transpose()).sum();
    let svd = cross.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let d = (u * v_t).determinant().signum();
    let rotation = u * Matrix2::new(1.0, 0.0, 0.0, d) * v_t;
    Ok(RigidTransform { rotation, translation: cr - rotation * ce })
}

/// Estimate rigidly aligned onto the reference.
pub fn procrustes_align(estimate: &[Vector2<f64>], reference: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>, EvalError> {
    let tf = procrustes_transform(estimate, reference)?;
    Ok(estimate.iter().map(|p| tf.apply(*p)).collect())
}

pub fn rmse(a: &[Vector2<f64>], b: &[Vector2<f64>]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// RMSE after rigid alignment of `estimate` onto `reference`.
pub fn aligned_rmse(estimate: &[Vector2<f64>], reference: &[Vector2<f64>]) -> Result<f64, EvalError> {
    rmse(&procrustes_align(estimate, reference)?, reference)
}

/// Integrates the odometry from the origin with zero heading and no bias
/// correction. Returns one position per pose (samples + 1).
pub fn dead_reckon(samples: &[SensorSample]) -> Vec<Vector2<f64>> {
    let mut p = Vector2::zeros();
    let mut psi = 0.0;
    let mut out = Vec::with_capacity(samples.len() + 1);
    out.push(p);
    for s in samples {
        p += rotation_matrix(psi) * s.odom_pos;
        psi += s.dt * s.odom_gyro;
        out.push(p);
    }
    out
}

/// Odometry quality varied across a Monte Carlo sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Gyroscope bias [rad/s].
    Bias,
    /// Odometry position noise variance [m^2].
    PosNoiseVar,
    /// Gyroscope noise variance [rad^2/s^2].
    GyroNoiseVar,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Bias => "bias",
            SweepParam::PosNoiseVar => "pos-noise-var",
            SweepParam::GyroNoiseVar => "gyro-noise-var",
        }
    }

    /// Scenario with the swept quantity set to `value`.
    pub fn apply(self, spec: &ScenarioSpec, value: f64) -> ScenarioSpec {
        let mut s = spec.clone();
        match self {
            SweepParam::Bias => s.bias_omega = value,
            SweepParam::PosNoiseVar => s.sigma_p = value.sqrt(),
            SweepParam::GyroNoiseVar => s.sigma_omega = value.sqrt(),
        }
        s
    }
}

impl std::str::FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bias" => Ok(SweepParam::Bias),
            "pos-noise-var" => Ok(SweepParam::PosNoiseVar),
            "gyro-noise-var" => Ok(SweepParam::GyroNoiseVar),
            other => Err(format!("unknown sweep parameter '{other}' (bias | pos-noise-var | gyro-noise-var)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub sweep: SweepParam,
    pub values: Vec<f64>,
    pub runs: usize,
    pub scenario: ScenarioSpec,
    pub params: SlamParams,
    pub seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.runs == 0 {
            return Err(EvalError::Config("runs must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(EvalError::Config("no sweep values".into()));
        }
        for &v in &self.values {
            let ok = match self.sweep {
                SweepParam::Bias => v.is_finite(),
                _ => v >= 0.0 && v.is_finite(),
            };
            if !ok {
                return Err(EvalError::Config(format!("invalid {} value {v}", self.sweep.name())));
            }
        }
        self.scenario.validate()?;
        self.params.clone().validate().map_err(|e| EvalError::Config(e.to_string()))?;
        Ok(())
    }
}

/// Noise seed of run `run`: SplitMix64 applied to `master + run`. The same
/// seed is used for that run index at every sweep value.
pub fn run_seed(master: u64, run: usize) -> u64 {
    let mut z = master.wrapping_add(run as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McRun {
    pub sweep_value: f64,
    pub run: usize,
    pub slam_rmse: Option<f64>,
    pub odom_rmse: f64,
    pub loop_closures: usize,
    /// `"ok"` or the failure message.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub sweep_value: f64,
    pub slam_median: f64,
    pub slam_q25: f64,
    pub slam_q75: f64,
    pub odom_median: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub sweep: SweepParam,
    pub runs: Vec<McRun>,
    pub summaries: Vec<McSummary>,
}

/// Linear-interpolation quantile of an unsorted sample; NaN when empty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Filter parameters for data generated by `spec`: the odometry noise the
/// filter assumes follows the data, falling back to `base` when the data is
/// noise-free.
pub fn filter_params_for(spec: &ScenarioSpec, base: &SlamParams) -> SlamParams {
    let mut p = base.clone();
    if spec.sigma_p > 0.0 {
        p.sigma_p = spec.sigma_p;
    }
    if spec.sigma_omega > 0.0 {
        p.sigma_omega = spec.sigma_omega;
    }
    p
}

/// Runs every (sweep value, run) pair. The path and field are fixed by the
/// base scenario; only the odometry and magnetometer noise change between runs.
pub fn monte_carlo(config: &McConfig) -> Result<McReport, EvalError> {
    config.validate()?;
    let truth = generate_truth(&config.scenario);
    let field = make_field(config.scenario.seed, &config.scenario);
    let jobs: Vec<(f64, usize)> = config.values.iter().flat_map(|&v| (0..config.runs).map(move |r| (v, r))).collect();

    let runs: Vec<McRun> = jobs
        .par_iter()
        .map(|&(value, run)| {
            let mut spec = config.sweep.apply(&config.scenario, value);
            spec.seed = run_seed(config.seed, run);
            let samples = synthesize_measurements(&truth, &field, &spec);
            let params = filter_params_for(&spec, &config.params);
            let odom = dead_reckon(&samples);
            let odom_rmse = aligned_rmse(&odom, &truth.positions).unwrap_or(f64::NAN);
            let outcome = run_slam(&samples, &params).map_err(|e| e.to_string()).and_then(|traj| {
                let rmse = aligned_rmse(&traj.positions(), &truth.positions).map_err(|e| e.to_string())?;
                Ok((rmse, traj.events.len()))
            });
            match outcome {
                Ok((rmse, n)) => McRun {
                    sweep_value: value,
                    run,
                    slam_rmse: Some(rmse),
                    odom_rmse,
                    loop_closures: n,
                    status: "ok".into(),
                },
                Err(msg) => {
                    McRun { sweep_value: value, run, slam_rmse: None, odom_rmse, loop_closures: 0, status: msg }
                }
            }
        })
        .collect();

    let summaries = config
        .values
        .iter()
        .map(|&v| {
            let group: Vec<&McRun> = runs.iter().filter(|r| r.sweep_value == v).collect();
            let slam: Vec<f64> = group.iter().filter_map(|r| r.slam_rmse).collect();
            let odom: Vec<f64> = group.iter().map(|r| r.odom_rmse).collect();
            McSummary {
                sweep_value: v,
                slam_median: quantile(&slam, 0.5),
                slam_q25: quantile(&slam, 0.25),
                slam_q75: quantile(&slam, 0.75),
                odom_median: quantile(&odom, 0.5),
                failures: group.len() - slam.len(),
            }
        })
        .collect();
    Ok(McReport { sweep: config.sweep, runs, summaries })
}

/// Writes one row per run: `sweep_value,run,slam_rmse_m,odom_rmse_m,n_loop_closures,status`.
pub fn write_mc_csv<W: Write>(report: &McReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sweep_value", "run", "slam_rmse_m", "odom_rmse_m", "n_loop_closures", "status"])?;
    for r in &report.runs {
        let slam = r.slam_rmse.map_or_else(|| "nan".to_string(), |v| format!("{v:?}"));
        w.write_record([
            format!("{:?}", r.sweep_value),
            r.run.to_string(),
            slam,
            format!("{:?}", r.odom_rmse),
            r.loop_closures.to_string(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
