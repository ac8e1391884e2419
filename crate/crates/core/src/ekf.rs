//! Extended Kalman filter primitives for the planar odometry model with
//! landmark augmentation.
//!
//! The covariance is stored densely, but the time update only touches the
//! four pose rows and columns: the Jacobian is the identity outside the
//! `(p, psi)` and `(psi, b)` couplings, so a step costs O(n) instead of O(n^3).
//! Loop-closure updates use a rank-2 Joseph form in O(n^2).

use nalgebra::{DMatrix, DVector, Dyn, Matrix2, Matrix4, OMatrix, Vector2, U2};

use crate::types::{SensorSample, StateBelief, UpdateDiagnostics, BIAS, HEADING, POSE_DIM};

/// Variances of the odometry noise entering the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    /// Variance per axis of the position increment noise [m^2].
    pub q_pos: f64,
    /// Variance of the angular-rate noise [rad^2/s^2].
    pub q_omega: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericalError {
    #[error("covariance lost positive semidefiniteness (eigenvalue {min_eigenvalue:e} below {tolerance:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64, tolerance: f64 },
    #[error("residual covariance is not invertible")]
    SingularInnovation,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("landmark {index} out of range (belief has {count})")]
    NoSuchLandmark { index: usize, count: usize },
    #[error("predicted covariance is singular at pose {0}")]
    SingularPrediction(usize),
}

/// Body-to-world rotation `[[cos, sin], [-sin, cos]]`.
pub fn rotation_matrix(heading: f64) -> Matrix2<f64> {
    let (s, c) = heading.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// Derivative of [`rotation_matrix`] with respect to the heading.
pub fn rotation_derivative(heading: f64) -> Matrix2<f64> {
    let (s, c) = heading.sin_cos();
    Matrix2::new(-s, c, -c, -s)
}

/// Propagates the mean through the odometry-driven dynamics. Landmarks and
/// bias are constant.
pub fn propagate_mean(mean: &DVector<f64>, sample: &SensorSample) -> DVector<f64> {
    let mut next = mean.clone();
    propagate_in_place(&mut next, sample);
    next
}

fn propagate_in_place(mean: &mut DVector<f64>, sample: &SensorSample) {
    let psi = mean[HEADING];
    let step = rotation_matrix(psi) * sample.odom_pos;
    mean[0] += step.x;
    mean[1] += step.y;
    mean[HEADING] = psi + sample.dt * (sample.odom_gyro - mean[BIAS]);
}

/// The non-identity part of the state Jacobian for one time update.
///
/// `F = I` except `F[p, psi] = dp_dpsi` and `F[psi, b] = -dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub dp_dpsi: Vector2<f64>,
    pub dt: f64,
}

impl Transition {
    pub fn new(heading: f64, sample: &SensorSample) -> Self {
        Self { dp_dpsi: rotation_derivative(heading) * sample.odom_pos, dt: sample.dt }
    }

    /// Dense `n x n` Jacobian.
    pub fn dense(&self, n: usize) -> DMatrix<f64> {
        let mut f = DMatrix::identity(n, n);
        f[(0, HEADING)] = self.dp_dpsi.x;
        f[(1, HEADING)] = self.dp_dpsi.y;
        f[(HEADING, BIAS)] = -self.dt;
        f
    }

    /// `x <- F x`.
    pub fn apply(&self, x: &mut DVector<f64>) {
        x[0] += self.dp_dpsi.x * x[HEADING];
        x[1] += self.dp_dpsi.y * x[HEADING];
        x[HEADING] -= self.dt * x[BIAS];
    }

    /// `lambda <- F^T lambda`.
    pub fn apply_transpose(&self, lambda: &mut DVector<f64>) {
        lambda[BIAS] -= self.dt * lambda[HEADING];
        lambda[HEADING] += self.dp_dpsi.x * lambda[0] + self.dp_dpsi.y * lambda[1];
    }

    /// `P <- F P F^T`.
    pub fn propagate_cov(&self, p: &mut DMatrix<f64>) {
        let (jx, jy, dt) = (self.dp_dpsi.x, self.dp_dpsi.y, self.dt);
        for j in 0..p.ncols() {
            let r = p[(HEADING, j)];
            p[(0, j)] += jx * r;
            p[(1, j)] += jy * r;
            p[(HEADING, j)] -= dt * p[(BIAS, j)];
        }
        for i in 0..p.nrows() {
            let c = p[(i, HEADING)];
            p[(i, 0)] += jx * c;
            p[(i, 1)] += jy * c;
            p[(i, HEADING)] -= dt * p[(i, BIAS)];
        }
    }

    /// `M <- F^T M F`.
    pub fn congruence_transpose(&self, m: &mut DMatrix<f64>) {
        let (jx, jy, dt) = (self.dp_dpsi.x, self.dp_dpsi.y, self.dt);
        for i in 0..m.nrows() {
            let c = m[(i, HEADING)];
            m[(i, BIAS)] -= dt * c;
            m[(i, HEADING)] = c + jx * m[(i, 0)] + jy * m[(i, 1)];
        }
        for j in 0..m.ncols() {
            let r = m[(HEADING, j)];
            m[(BIAS, j)] -= dt * r;
            m[(HEADING, j)] = r + jx * m[(0, j)] + jy * m[(1, j)];
        }
    }
}

/// Dense state Jacobian `F` and noise Jacobian `G` (columns `e_p,x`, `e_p,y`, `e_omega`).
pub fn dynamics_jacobians(mean: &DVector<f64>, sample: &SensorSample) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = mean.len();
    let psi = mean[HEADING];
    let f = Transition::new(psi, sample).dense(n);
    let mut g = DMatrix::zeros(n, 3);
    let r = rotation_matrix(psi);
    g.view_mut((0, 0), (2, 2)).copy_from(&(-r));
    g[(HEADING, 2)] = -sample.dt;
    (f, g)
}

/// EKF time update. Returns the Jacobian used so that a smoother can replay it.
pub fn time_update(
    belief: &mut StateBelief,
    sample: &SensorSample,
    noise: &ProcessNoise,
) -> Result<Transition, NumericalError> {
    let psi = belief.heading();
    let transition = Transition::new(psi, sample);
    propagate_in_place(&mut belief.mean, sample);
    transition.propagate_cov(&mut belief.cov);

    // G Q G^T: -R(psi) q_pos I (-R(psi))^T on the position block, dt^2 q_omega on heading.
    let r = rotation_matrix(psi);
    let q_p = r * r.transpose() * noise.q_pos;
    for i in 0..2 {
        for j in 0..2 {
            belief.cov[(i, j)] += q_p[(i, j)];
        }
    }
    belief.cov[(HEADING, HEADING)] += sample.dt * sample.dt * noise.q_omega;

    symmetrize_pose_rows(&mut belief.cov);
    check_pose_block(belief)?;
    Ok(transition)
}

fn symmetrize_pose_rows(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..POSE_DIM {
        for j in 0..n {
            if i != j {
                let avg = 0.5 * (p[(i, j)] + p[(j, i)]);
                p[(i, j)] = avg;
                p[(j, i)] = avg;
            }
        }
    }
}

// Only the pose rows change in a time update, so checking the leading block
// is enough to catch loss of definiteness introduced there.
fn check_pose_block(belief: &StateBelief) -> Result<(), NumericalError> {
    if !belief.mean.iter().take(POSE_DIM).all(|v| v.is_finite()) {
        return Err(NumericalError::NonFinite("state mean"));
    }
    let block: Matrix4<f64> = belief.cov.fixed_view::<4, 4>(0, 0).into_owned();
    if !block.iter().all(|v| v.is_finite()) {
        return Err(NumericalError::NonFinite("covariance"));
    }
    let tolerance = 1e-9 * block.trace().abs();
    let min_eigenvalue = block.symmetric_eigenvalues().min();
    if min_eigenvalue < -tolerance {
        return Err(NumericalError::NotPositiveSemidefinite { min_eigenvalue, tolerance });
    }
    Ok(())
}

/// Appends a landmark with zero mean and covariance `p0_landmark * I`,
/// uncorrelated with the existing states. Returns its index.
pub fn augment_landmark(belief: &mut StateBelief, p0_landmark: f64) -> usize {
    let k = belief.landmark_count();
    let n = belief.dim();
    let mean = std::mem::replace(&mut belief.mean, DVector::zeros(0)).resize_vertically(n + 2, 0.0);
    let mut cov = std::mem::replace(&mut belief.cov, DMatrix::zeros(0, 0)).resize(n + 2, n + 2, 0.0);
    cov[(n, n)] = p0_landmark;
    cov[(n + 1, n + 1)] = p0_landmark;
    belief.mean = mean;
    belief.cov = cov;
    k
}

/// Outcome of a loop-closure measurement update, with what a smoother needs
/// to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkUpdate {
    pub landmark: usize,
    pub diagnostics: UpdateDiagnostics,
    /// Kalman gain (n x 2).
    pub gain: OMatrix<f64, Dyn, U2>,
    pub residual_cov_inv: Matrix2<f64>,
}

/// Fuses the pseudo-measurement `0 = p - l_k + e` with `e ~ N(0, sigma_lc^2 I)`.
///
/// The residual in the diagnostics is `p - l_k` before the update. The
/// covariance is updated in Joseph form.
pub fn landmark_measurement_update(
    belief: &mut StateBelief,
    k: usize,
    sigma_lc: f64,
) -> Result<LandmarkUpdate, NumericalError> {
    let count = belief.landmark_count();
    if k >= count {
        return Err(NumericalError::NoSuchLandmark { index: k, count });
    }
    let n = belief.dim();
    let o = StateBelief::landmark_offset(k);
    let r = sigma_lc * sigma_lc;

    // U = P H^T with H = [I2 0 0 ... -I2 ...].
    let mut u = OMatrix::<f64, Dyn, U2>::zeros(n);
    for c in 0..2 {
        for i in 0..n {
            u[(i, c)] = belief.cov[(i, c)] - belief.cov[(i, o + c)];
        }
    }
    let mut s = Matrix2::zeros();
    for rr in 0..2 {
        for c in 0..2 {
            s[(rr, c)] = u[(rr, c)] - u[(o + rr, c)];
        }
    }
    s[(0, 0)] += r;
    s[(1, 1)] += r;
    s = (s + s.transpose()) * 0.5;
    let s_inv = s.cholesky().ok_or(NumericalError::SingularInnovation)?.inverse();
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(NumericalError::SingularInnovation);
    }

    let residual = belief.position() - belief.landmark(k);
    let diagnostics =
        UpdateDiagnostics { residual, residual_cov: s, marginal_likelihood: marginal_likelihood(&residual, &s) };

    let gain = &u * s_inv;
    belief.mean -= &gain * residual;

    // Joseph form: (I - KH) P (I - KH)^T + K R K^T = P - K U^T - U K^T + K S K^T,
    // grouped as P - K U^T + W K^T with W = K S - U. Rows where U vanishes
    // (states not yet correlated with this measurement) have K = W = 0, so
    // only the active block changes. The result is symmetric by construction;
    // the lower triangle is computed and mirrored.
    let w = &gain * s - &u;
    let active: Vec<usize> = (0..n).filter(|&i| u[(i, 0)] != 0.0 || u[(i, 1)] != 0.0).collect();
    let cov = &mut belief.cov;
    for (a, &j) in active.iter().enumerate() {
        let (kj0, kj1, uj0, uj1) = (gain[(j, 0)], gain[(j, 1)], u[(j, 0)], u[(j, 1)]);
        for &i in &active[a..] {
            let delta = -gain[(i, 0)] * uj0 - gain[(i, 1)] * uj1 + w[(i, 0)] * kj0 + w[(i, 1)] * kj1;
            let v = cov[(i, j)] + delta;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    if !belief.mean.iter().all(|v| v.is_finite()) {
        return Err(NumericalError::NonFinite("state mean"));
    }
    for i in 0..n {
        if !(cov[(i, i)] >= 0.0) {
            return Err(NumericalError::NotPositiveSemidefinite { min_eigenvalue: cov[(i, i)], tolerance: 0.0 });
        }
    }

    Ok(LandmarkUpdate { landmark: k, diagnostics, gain, residual_cov_inv: s_inv })
}

/// Gaussian density of the residual: `exp(-eps^T S^-1 eps / 2) / (2 pi sqrt|S|)`.
pub fn marginal_likelihood(residual: &Vector2<f64>, residual_cov: &Matrix2<f64>) -> f64 {
    let det = residual_cov.determinant();
    let Some(inv) = residual_cov.try_inverse() else {
        return 0.0;
    };
    let mahalanobis = residual.dot(&(inv * residual));
    (-0.5 * mahalanobis).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
}
