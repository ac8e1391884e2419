//! Magnetic and position similarity weights, and the detection gates that turn
//! them into loop-closure candidates.

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::params::SlamParams;
use crate::types::{Direction, WeightRow};

/// Everything the detector needs to know at time `t = mag_history.len() - 1`.
#[derive(Debug, Clone, Copy)]
pub struct DetectionContext<'a> {
    pub mag_history: &'a [Vector3<f64>],
    pub pos_history: &'a [Vector2<f64>],
    /// Position block of the covariance at time `t`.
    pub pos_cov_now: Matrix2<f64>,
    pub last_accepted_t: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WindowError {
    #[error("window of {len} samples ending at {end} starts before the first sample")]
    BeforeStart { end: usize, len: usize },
    #[error("sample {index} is beyond the history (length {history})")]
    BeyondEnd { index: usize, history: usize },
}

impl DetectionContext<'_> {
    /// Index of the current sample. Panics on an empty history.
    pub fn t(&self) -> usize {
        debug_assert_eq!(self.mag_history.len(), self.pos_history.len());
        self.mag_history.len() - 1
    }
}

/// Rotates a field vector by 180 degrees about the vertical axis.
pub fn yaw_flip(mag: Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-mag.x, -mag.y, mag.z)
}

fn check_window(history: usize, end: usize, len: usize) -> Result<(), WindowError> {
    if end >= history {
        return Err(WindowError::BeyondEnd { index: end, history });
    }
    if end + 1 < len {
        return Err(WindowError::BeforeStart { end, len });
    }
    Ok(())
}

fn log_fwd(mag: &[Vector3<f64>], i: usize, t: usize, n_lc: usize, inv: f64) -> f64 {
    (0..n_lc).map(|n| -(mag[i - n] - mag[t - n]).norm_squared() * inv).sum()
}

fn log_bwd(mag: &[Vector3<f64>], i: usize, t: usize, n_lc: usize, inv: f64) -> f64 {
    (0..n_lc).map(|n| -(mag[i + n_lc - 1 - n] - yaw_flip(mag[t - n])).norm_squared() * inv).sum()
}

fn inv_scale(sigma_m: f64) -> f64 {
    1.0 / (12.0 * sigma_m * sigma_m)
}

/// Similarity of the windows ending at `i` and `t`, traversed in the same direction.
pub fn magnetic_weight_fwd(
    ctx: &DetectionContext,
    i: usize,
    t: usize,
    n_lc: usize,
    sigma_m: f64,
) -> Result<f64, WindowError> {
    let len = ctx.mag_history.len();
    check_window(len, i, n_lc)?;
    check_window(len, t, n_lc)?;
    Ok(log_fwd(ctx.mag_history, i, t, n_lc, inv_scale(sigma_m)).exp())
}

/// Similarity of the window `i..=i + n_lc - 1` with the yaw-flipped window
/// ending at `t`, where `t` is aligned with `i + n_lc - 1`.
pub fn magnetic_weight_bwd(
    ctx: &DetectionContext,
    i: usize,
    t: usize,
    n_lc: usize,
    sigma_m: f64,
) -> Result<f64, WindowError> {
    let len = ctx.mag_history.len();
    check_window(len, i + n_lc - 1, n_lc)?;
    check_window(len, t, n_lc)?;
    Ok(log_bwd(ctx.mag_history, i, t, n_lc, inv_scale(sigma_m)).exp())
}

/// Length scale of the position weight: mean of the position standard deviations.
pub fn position_sigma(pos_cov_now: &Matrix2<f64>) -> f64 {
    0.5 * (pos_cov_now[(0, 0)].max(0.0).sqrt() + pos_cov_now[(1, 1)].max(0.0).sqrt())
}

pub fn position_weight(p_t: Vector2<f64>, p_i: Vector2<f64>, pos_cov_now: &Matrix2<f64>) -> f64 {
    position_weight_with_sigma(p_t, p_i, position_sigma(pos_cov_now))
}

fn position_weight_with_sigma(p_t: Vector2<f64>, p_i: Vector2<f64>, sigma_wp: f64) -> f64 {
    let d2 = (p_t - p_i).norm_squared();
    if sigma_wp > 0.0 {
        (-d2 / (8.0 * sigma_wp * sigma_wp)).exp()
    } else if d2 == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// All weights for candidates `i = 0..=t - n_lag`.
///
/// Forward weights need `i >= n_lc - 1`; backward weights need the stored
/// window `i..=i + n_lc - 1` to end no later than `t - n_lag`. Candidates
/// outside those ranges get weight 0 for that direction.
pub fn weight_row(ctx: &DetectionContext, params: &SlamParams) -> WeightRow {
    let t = ctx.t();
    let sigma_wp = position_sigma(&ctx.pos_cov_now);
    let n_lc = params.n_lc;
    if t < params.n_lag || t + 1 < n_lc {
        return WeightRow::empty(t, sigma_wp);
    }
    let last = t - params.n_lag;
    let inv = inv_scale(params.sigma_m);
    let mag = ctx.mag_history;
    let p_t = ctx.pos_history[t];
    let count = last + 1;

    let mut row = WeightRow {
        t,
        w_fwd: Vec::with_capacity(count),
        w_bwd: Vec::with_capacity(count),
        w_pos: Vec::with_capacity(count),
        w_combined: Vec::with_capacity(count),
        sigma_wp,
    };
    // Current windows are reused for every candidate.
    let current: Vec<Vector3<f64>> = (0..n_lc).map(|n| mag[t - n]).collect();
    let flipped: Vec<Vector3<f64>> = current.iter().map(|m| yaw_flip(*m)).collect();
    for i in 0..=last {
        let w_fwd = if i + 1 >= n_lc {
            let s: f64 = (0..n_lc).map(|n| (mag[i - n] - current[n]).norm_squared()).sum();
            (-s * inv).exp()
        } else {
            0.0
        };
        let w_bwd = if i + n_lc - 1 <= last {
            let s: f64 = (0..n_lc).map(|n| (mag[i + n_lc - 1 - n] - flipped[n]).norm_squared()).sum();
            (-s * inv).exp()
        } else {
            0.0
        };
        let w_pos = position_weight_with_sigma(p_t, ctx.pos_history[i], sigma_wp);
        row.w_fwd.push(w_fwd);
        row.w_bwd.push(w_bwd);
        row.w_pos.push(w_pos);
        row.w_combined.push((w_fwd * w_pos).max(w_bwd * w_pos));
    }
    row
}

/// Norm of the per-component range of the `n_lc + 1` most recent readings up to `t`.
pub fn magnetic_excitation(ctx: &DetectionContext, t: usize, n_lc: usize) -> Result<f64, WindowError> {
    check_window(ctx.mag_history.len(), t, n_lc + 1)?;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for n in 0..=n_lc {
        let m = ctx.mag_history[t - n];
        lo = lo.inf(&m);
        hi = hi.sup(&m);
    }
    Ok((hi - lo).norm())
}

/// A detected loop closure before the likelihood check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Argmax index in the weight row.
    pub i: usize,
    /// Earlier pose bound to the current one.
    pub time_then: usize,
    pub direction: Direction,
    pub weight: f64,
}

/// Why the detector did or did not emit a candidate at this step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Screening {
    NoCandidates,
    BelowThreshold { max_weight: f64 },
    TooSoon { since_last: usize },
    LowExcitation { excitation: f64 },
    Accepted(Candidate),
}

impl Screening {
    pub fn candidate(self) -> Option<Candidate> {
        match self {
            Screening::Accepted(c) => Some(c),
            _ => None,
        }
    }
}

/// Applies the threshold, spacing and excitation gates to a weight row.
pub fn screen(ctx: &DetectionContext, weights: &WeightRow, params: &SlamParams) -> Screening {
    let Some((i, weight)) = weights.argmax() else {
        return Screening::NoCandidates;
    };
    if !(weight > params.gamma) {
        return Screening::BelowThreshold { max_weight: weight };
    }
    let t = weights.t;
    if let Some(last) = ctx.last_accepted_t {
        let since_last = t.saturating_sub(last);
        if since_last < params.n_dist {
            return Screening::TooSoon { since_last };
        }
    }
    let excitation = magnetic_excitation(ctx, t, params.n_lc).unwrap_or(0.0);
    if excitation < params.gamma_mag {
        return Screening::LowExcitation { excitation };
    }
    let (direction, time_then) = if weights.w_fwd[i] >= weights.w_bwd[i] {
        (Direction::Forward, i)
    } else {
        (Direction::Backward, i + params.n_lc - 1)
    };
    Screening::Accepted(Candidate { i, time_then, direction, weight })
}

/// Returns the loop-closure candidate at the current time, if every gate passes.
pub fn detect(ctx: &DetectionContext, weights: &WeightRow, params: &SlamParams) -> Option<Candidate> {
    screen(ctx, weights, params).candidate()
}
