//! Domain types shared by the filter, the detector and the tooling around them.
//!
//! Units are fixed everywhere: meters, radians, seconds and microtesla. Heading
//! is kept unwrapped internally; [`wrap_angle`] is only applied when reporting.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Number of non-landmark states: position (2), heading, gyroscope bias.
pub const POSE_DIM: usize = 4;

/// Index of the heading in the state vector.
pub const HEADING: usize = 2;

/// Index of the gyroscope bias in the state vector.
pub const BIAS: usize = 3;

/// One time step of body-frame odometry and magnetometer data.
///
/// The odometry increment moves the sensor from pose `index` to pose
/// `index + 1`; the magnetometer reading is taken at pose `index`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub index: usize,
    /// Sampling interval in seconds.
    pub dt: f64,
    /// Body-frame position increment [m].
    pub odom_pos: Vector2<f64>,
    /// Angular-rate reading [rad/s].
    pub odom_gyro: f64,
    /// Gravity-aligned body-frame magnetic field [uT].
    pub mag: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("sample {index}: dt must be positive, got {dt}")]
    NonPositiveDt { index: usize, dt: f64 },
    #[error("sample {index}: non-finite value in {field}")]
    NonFinite { index: usize, field: &'static str },
}

impl SensorSample {
    pub fn validate(&self) -> Result<(), SampleError> {
        let index = self.index;
        if !self.dt.is_finite() {
            return Err(SampleError::NonFinite { index, field: "dt" });
        }
        if self.dt <= 0.0 {
            return Err(SampleError::NonPositiveDt { index, dt: self.dt });
        }
        if !self.odom_pos.iter().all(|v| v.is_finite()) {
            return Err(SampleError::NonFinite { index, field: "odom_pos" });
        }
        if !self.odom_gyro.is_finite() {
            return Err(SampleError::NonFinite { index, field: "odom_gyro" });
        }
        if !self.mag.iter().all(|v| v.is_finite()) {
            return Err(SampleError::NonFinite { index, field: "mag" });
        }
        Ok(())
    }
}

/// Gaussian belief over `(p_x, p_y, psi, b_omega, l_1x, l_1y, ..., l_Kx, l_Ky)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl StateBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(cov.nrows(), mean.len());
        debug_assert_eq!(cov.ncols(), mean.len());
        debug_assert!(mean.len() >= POSE_DIM && (mean.len() - POSE_DIM).is_multiple_of(2));
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn landmark_count(&self) -> usize {
        (self.mean.len() - POSE_DIM) / 2
    }

    /// Offset of landmark `k` in the state vector.
    pub fn landmark_offset(k: usize) -> usize {
        POSE_DIM + 2 * k
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.mean[0], self.mean[1])
    }

    pub fn heading(&self) -> f64 {
        self.mean[HEADING]
    }

    pub fn bias(&self) -> f64 {
        self.mean[BIAS]
    }

    pub fn position_cov(&self) -> Matrix2<f64> {
        self.cov.fixed_view::<2, 2>(0, 0).into_owned()
    }

    pub fn landmark(&self, k: usize) -> Vector2<f64> {
        let o = Self::landmark_offset(k);
        Vector2::new(self.mean[o], self.mean[o + 1])
    }

    pub fn landmark_cov(&self, k: usize) -> Matrix2<f64> {
        let o = Self::landmark_offset(k);
        self.cov.fixed_view::<2, 2>(o, o).into_owned()
    }

    /// Largest asymmetry `|P_ij - P_ji|` relative to the largest diagonal entry.
    pub fn relative_asymmetry(&self) -> f64 {
        let n = self.dim();
        let scale = (0..n).map(|i| self.cov[(i, i)].abs()).fold(f64::MIN_POSITIVE, f64::max);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in (j + 1)..n {
                worst = worst.max((self.cov[(i, j)] - self.cov[(j, i)]).abs());
            }
        }
        worst / scale
    }

    /// Smallest eigenvalue of the (symmetrized) covariance. O(n^3).
    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }

    /// Checks symmetry to `1e-9` relative and eigenvalues `>= -1e-9 * trace`.
    pub fn is_valid_covariance(&self) -> bool {
        let trace = self.cov.trace();
        self.cov.iter().all(|v| v.is_finite())
            && self.relative_asymmetry() <= 1e-9
            && self.min_eigenvalue() >= -1e-9 * trace.abs().max(f64::MIN_POSITIVE)
    }
}

/// Traversal direction of a loop-closure match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Forward => f.write_str("forward"),
            Direction::Backward => f.write_str("backward"),
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(format!("unknown direction '{other}'")),
        }
    }
}

/// An accepted loop closure binding poses `time_then` and `time_now` to landmark `landmark_index`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopClosureEvent {
    pub landmark_index: usize,
    pub time_now: usize,
    pub time_then: usize,
    pub direction: Direction,
    pub weight: f64,
}

/// All loop-closure weights computed at time `t`, indexed by candidate `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub t: usize,
    pub w_fwd: Vec<f64>,
    pub w_bwd: Vec<f64>,
    pub w_pos: Vec<f64>,
    pub w_combined: Vec<f64>,
    /// Position-weight length scale at time `t` [m].
    pub sigma_wp: f64,
}

impl WeightRow {
    pub fn empty(t: usize, sigma_wp: f64) -> Self {
        Self { t, w_fwd: Vec::new(), w_bwd: Vec::new(), w_pos: Vec::new(), w_combined: Vec::new(), sigma_wp }
    }

    pub fn len(&self) -> usize {
        self.w_combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_combined.is_empty()
    }

    /// Index and value of the largest combined weight; ties go to the smallest index.
    pub fn argmax(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &w) in self.w_combined.iter().enumerate() {
            match best {
                Some((_, b)) if w <= b => {}
                _ => best = Some((i, w)),
            }
        }
        best
    }
}

/// Residual statistics of one loop-closure measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    /// Predicted position minus predicted landmark location [m].
    pub residual: Vector2<f64>,
    /// Residual covariance [m^2].
    pub residual_cov: Matrix2<f64>,
    pub marginal_likelihood: f64,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}
