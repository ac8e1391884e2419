//! Shared test oracles.

use magslam::slam::{rerun_with_loop_closure, rts_smooth, rts_smooth_dense, FilterHistory, HistoryDetail};
use magslam::{Direction, LoopClosureEvent, SensorSample, SlamParams};
use nalgebra::{DMatrix, DVector, Matrix2};

fn rot(psi: f64) -> Matrix2<f64> {
    let (s, c) = psi.sin_cos();
    Matrix2::new(c, s, -s, c)
}

fn rot_dpsi(psi: f64) -> Matrix2<f64> {
    let (s, c) = psi.sin_cos();
    Matrix2::new(-s, c, -c, -s)
}

pub fn event(k: usize, then: usize, now: usize) -> LoopClosureEvent {
    LoopClosureEvent { landmark_index: k, time_now: now, time_then: then, direction: Direction::Forward, weight: 1.0 }
}

/// Posterior of all poses of the model linearized at the filtered means:
/// the joint Gaussian of the stacked states is built by forward propagation
/// and conditioned on every loop-closure pseudo-measurement at once.
pub fn batch_posterior(
    history: &FilterHistory,
    samples: &[SensorSample],
    params: &SlamParams,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = history.belief.dim();
    let poses = history.records.len();
    let big = n * poses;

    let mut mean = DVector::zeros(big);
    let mut cov = DMatrix::zeros(big, big);
    let mut p0 = DMatrix::zeros(n, n);
    p0[(0, 0)] = params.p0_pos;
    p0[(1, 1)] = params.p0_pos;
    p0[(2, 2)] = params.p0_heading;
    p0[(3, 3)] = params.p0_bias;
    for i in 4..n {
        p0[(i, i)] = params.p0_landmark;
    }
    cov.view_mut((0, 0), (n, n)).copy_from(&p0);

    let q_pos = params.sigma_p.powi(2) * params.process_noise_scale;
    let q_omega = params.sigma_omega.powi(2) * params.process_noise_scale;
    for tau in 0..poses - 1 {
        let lin = &history.records[tau].filtered_mean;
        let s = &samples[tau];
        let psi = lin[2];
        let mut f = DMatrix::<f64>::identity(n, n);
        let dp = rot_dpsi(psi) * s.odom_pos;
        f[(0, 2)] = dp.x;
        f[(1, 2)] = dp.y;
        f[(2, 3)] = -s.dt;
        let mut next = lin.clone();
        let step = rot(psi) * s.odom_pos;
        next[0] += step.x;
        next[1] += step.y;
        next[2] += s.dt * (s.odom_gyro - lin[3]);
        let offset = &next - &f * lin;

        let m = &f * mean.rows(tau * n, n) + offset;
        mean.rows_mut((tau + 1) * n, n).copy_from(&m);
        // Cross-covariances with every earlier pose, then the new diagonal block.
        for s_idx in 0..=tau {
            let c = &f * cov.view((tau * n, s_idx * n), (n, n));
            cov.view_mut(((tau + 1) * n, s_idx * n), (n, n)).copy_from(&c);
            cov.view_mut((s_idx * n, (tau + 1) * n), (n, n)).copy_from(&c.transpose());
        }
        let mut d = &f * cov.view((tau * n, tau * n), (n, n)) * f.transpose();
        d[(0, 0)] += q_pos;
        d[(1, 1)] += q_pos;
        d[(2, 2)] += s.dt * s.dt * q_omega;
        cov.view_mut(((tau + 1) * n, (tau + 1) * n), (n, n)).copy_from(&d);
    }

    let mut rows = Vec::new();
    for e in &history.events {
        for tau in [e.time_then, e.time_now] {
            rows.push((tau, e.landmark_index));
        }
    }
    let m = 2 * rows.len();
    let mut h = DMatrix::zeros(m, big);
    for (r, &(tau, k)) in rows.iter().enumerate() {
        for c in 0..2 {
            h[(2 * r + c, tau * n + c)] = 1.0;
            h[(2 * r + c, tau * n + 4 + 2 * k + c)] = -1.0;
        }
    }
    let s = &h * &cov * h.transpose() + DMatrix::identity(m, m) * params.sigma_lc.powi(2);
    let s_inv = s.cholesky().expect("innovation covariance").inverse();
    let gain = &cov * h.transpose() * s_inv;
    let post_mean = &mean - &gain * (&h * &mean);
    let post_cov = &cov - &gain * &h * &cov;
    (post_mean, post_cov)
}

/// Largest absolute difference between both smoothers and the batch
/// posterior over poses `0..=steps`, in means and covariances.
pub fn smoother_oracle_deviation(
    samples: &[SensorSample],
    events: &[LoopClosureEvent],
    steps: usize,
    params: &SlamParams,
) -> f64 {
    let full = rerun_with_loop_closure(samples, events, steps, params, HistoryDetail::Full).unwrap().history;
    let compact = rerun_with_loop_closure(samples, events, steps, params, HistoryDetail::Compact).unwrap().history;
    let (mean, cov) = batch_posterior(&full, samples, params);
    let n = full.belief.dim();

    let dense = rts_smooth_dense(&full).unwrap();
    let fast = rts_smooth(&compact);
    assert_eq!(dense.len(), steps + 1);
    assert_eq!(fast.len(), steps + 1);
    let mut worst: f64 = 0.0;
    for tau in 0..=steps {
        let o = tau * n;
        let m = mean.rows(o, n);
        let c = cov.view((o, o), (n, n));
        worst = worst.max((&dense[tau].mean - m).amax());
        worst = worst.max((&dense[tau].cov - c).amax());
        for i in 0..4 {
            worst = worst.max((fast.poses[tau].mean[i] - m[i]).abs());
            for j in 0..4 {
                worst = worst.max((fast.poses[tau].cov[(i, j)] - c[(i, j)]).abs());
            }
        }
    }
    worst
}
