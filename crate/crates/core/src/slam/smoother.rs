//! Fixed-interval smoothing of a [`FilterHistory`].
//!
//! [`rts_smooth`] runs the Rauch-Tung-Striebel recursion in its adjoint
//! (modified Bryson-Frazier) form: an adjoint vector and matrix are carried
//! backwards through the stored updates and transitions, so no predicted
//! covariance is ever inverted and each pose costs O(n) for the mean.
//! [`rts_smooth_dense`] is the textbook gain form on full covariances.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};

use super::history::FilterHistory;
use crate::ekf::{LandmarkUpdate, NumericalError};
use crate::types::{LoopClosureEvent, StateBelief, POSE_DIM};

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedPose {
    /// `(p_x, p_y, psi, b_omega)`.
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
    /// Trace of the full smoothed covariance at this pose.
    pub trace: f64,
    pub filtered_trace: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkEstimate {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedTrajectory {
    pub poses: Vec<SmoothedPose>,
    pub events: Vec<LoopClosureEvent>,
    pub landmarks: Vec<LandmarkEstimate>,
}

impl SmoothedTrajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector2<f64>> {
        self.poses.iter().map(|p| Vector2::new(p.mean[0], p.mean[1])).collect()
    }
}

fn h_entries(update: &LandmarkUpdate) -> [(usize, usize, f64); 4] {
    let o = StateBelief::landmark_offset(update.landmark);
    [(0, 0, 1.0), (1, 1, 1.0), (o, 0, -1.0), (o + 1, 1, -1.0)]
}

/// `lambda <- H^T S^-1 eps + (I - K H)^T lambda`.
fn adjoint_vector_update(lambda: &mut DVector<f64>, u: &LandmarkUpdate) {
    let a = u.gain.tr_mul(&*lambda);
    let v = u.residual_cov_inv * u.diagnostics.residual - Vector2::new(a[0], a[1]);
    for (i, c, s) in h_entries(u) {
        lambda[i] += s * v[c];
    }
}

/// `Lambda <- H^T S^-1 H + (I - K H)^T Lambda (I - K H)`.
fn adjoint_matrix_update(big: &mut DMatrix<f64>, u: &LandmarkUpdate) {
    let n = big.nrows();
    let b = &*big * &u.gain;
    let c = u.gain.tr_mul(&b);
    let d = Matrix2::new(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)]) + u.residual_cov_inv;
    let h = h_entries(u);
    for &(i, ci, si) in &h {
        for j in 0..n {
            big[(i, j)] -= si * b[(j, ci)];
        }
    }
    for &(j, cj, sj) in &h {
        for i in 0..n {
            big[(i, j)] -= sj * b[(i, cj)];
        }
    }
    for &(i, ci, si) in &h {
        for &(j, cj, sj) in &h {
            big[(i, j)] += si * sj * d[(ci, cj)];
        }
    }
}

fn check_uniform_dim(history: &FilterHistory) -> usize {
    let n = history.belief.dim();
    debug_assert!(history.records.iter().all(|r| r.dim() == n));
    n
}

fn pose_slice(v: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(v[0], v[1], v[2], v[3])
}

/// Smoothed pose means only; O(n) per pose.
pub fn smoothed_pose_means(history: &FilterHistory) -> Vec<Vector4<f64>> {
    let n = check_uniform_dim(history);
    let mut lambda = DVector::zeros(n);
    let mut out = vec![Vector4::zeros(); history.len()];
    for (tau, r) in history.records.iter().enumerate().rev() {
        out[tau] = pose_slice(&r.filtered_mean) - &r.filtered_rows * &lambda;
        for u in r.updates.iter().rev() {
            adjoint_vector_update(&mut lambda, u);
        }
        if let Some(tr) = &r.transition {
            tr.apply_transpose(&mut lambda);
        }
    }
    out
}

fn landmark_trace(history: &FilterHistory) -> f64 {
    let last = history.records.last().expect("history has at least one pose");
    last.filtered_trace - (0..POSE_DIM).map(|i| last.filtered_rows[(i, i)]).sum::<f64>()
}

fn landmarks(history: &FilterHistory) -> Vec<LandmarkEstimate> {
    let b = &history.belief;
    (0..b.landmark_count()).map(|k| LandmarkEstimate { mean: b.landmark(k), cov: b.landmark_cov(k) }).collect()
}

/// Smoothed pose means and covariances over the whole history.
///
/// Landmarks are constant states, so their smoothed estimates equal the final
/// filtered ones; the reported trace adds their final variance to the pose block.
pub fn rts_smooth(history: &FilterHistory) -> SmoothedTrajectory {
    let n = check_uniform_dim(history);
    let lm_trace = landmark_trace(history);
    let mut lambda = DVector::zeros(n);
    let mut big = DMatrix::zeros(n, n);
    let mut poses = Vec::with_capacity(history.len());
    for r in history.records.iter().rev() {
        let rows = &r.filtered_rows;
        let mean = pose_slice(&r.filtered_mean) - rows * &lambda;
        let p4: Matrix4<f64> = rows.fixed_columns::<4>(0).into_owned();
        let correction: Matrix4<f64> = rows * (&big * rows.transpose());
        let mut cov = p4 - correction;
        cov = (cov + cov.transpose()) * 0.5;
        poses.push(SmoothedPose { mean, cov, trace: cov.trace() + lm_trace, filtered_trace: r.filtered_trace });

        for u in r.updates.iter().rev() {
            adjoint_vector_update(&mut lambda, u);
            adjoint_matrix_update(&mut big, u);
        }
        if let Some(tr) = &r.transition {
            tr.apply_transpose(&mut lambda);
            tr.congruence_transpose(&mut big);
        }
    }
    poses.reverse();
    SmoothedTrajectory { poses, events: history.events.clone(), landmarks: landmarks(history) }
}

/// Gain-form RTS on the dense covariances of a [`HistoryDetail::Full`] history.
///
/// Returns the full smoothed belief at every pose. A predicted covariance
/// that fails Cholesky is regularized by `1e-12 * max diagonal` once before
/// giving up.
///
/// [`HistoryDetail::Full`]: super::history::HistoryDetail::Full
pub fn rts_smooth_dense(history: &FilterHistory) -> Result<Vec<StateBelief>, NumericalError> {
    let records = &history.records;
    let dense = |tau: usize| records[tau].dense.as_ref().expect("rts_smooth_dense needs a full-detail history");
    let last = records.len() - 1;
    let mut out = vec![StateBelief::new(records[last].filtered_mean.clone(), dense(last).filtered_cov.clone())];
    for tau in (0..last).rev() {
        let next = &records[tau + 1];
        let transition = next.transition.as_ref().expect("every pose after the first has a transition");
        let n = next.dim();
        let f = transition.dense(n);
        let p_f = &dense(tau).filtered_cov;
        let p_pred = &dense(tau + 1).predicted_cov;

        // C^T = P_pred^-1 F P_f
        let rhs = &f * p_f;
        let chol = match p_pred.clone().cholesky() {
            Some(c) => c,
            None => {
                let reg = 1e-12 * p_pred.diagonal().max();
                (p_pred + DMatrix::identity(n, n) * reg)
                    .cholesky()
                    .ok_or(NumericalError::SingularPrediction(tau + 1))?
            }
        };
        let gain = chol.solve(&rhs).transpose();

        let smoothed_next = out.last().expect("non-empty");
        let mean = &records[tau].filtered_mean + &gain * (&smoothed_next.mean - &next.predicted_mean);
        let mut cov = p_f + &gain * (&smoothed_next.cov - p_pred) * gain.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        if !cov.iter().all(|v| v.is_finite()) {
            return Err(NumericalError::NonFinite("smoothed covariance"));
        }
        out.push(StateBelief::new(mean, cov));
    }
    out.reverse();
    Ok(out)
}
