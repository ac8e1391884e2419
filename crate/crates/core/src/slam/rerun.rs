use nalgebra::{DMatrix, DVector};

use super::history::{FilterHistory, HistoryDetail, PoseRecord};
use crate::ekf::{augment_landmark, landmark_measurement_update, time_update, NumericalError, ProcessNoise};
use crate::params::SlamParams;
use crate::types::{LoopClosureEvent, SensorSample, StateBelief, UpdateDiagnostics, BIAS, HEADING};

/// Prior at pose 0: zero mean, block-diagonal covariance, no landmarks.
pub fn init_belief(params: &SlamParams) -> StateBelief {
    let mut cov = DMatrix::zeros(4, 4);
    cov[(0, 0)] = params.p0_pos;
    cov[(1, 1)] = params.p0_pos;
    cov[(HEADING, HEADING)] = params.p0_heading;
    cov[(BIAS, BIAS)] = params.p0_bias;
    StateBelief::new(DVector::zeros(4), cov)
}

/// Time update of the current belief with `sample`, appending the new pose.
pub(crate) fn advance_history(
    history: &mut FilterHistory,
    sample: &SensorSample,
    noise: &ProcessNoise,
) -> Result<(), NumericalError> {
    let transition = time_update(&mut history.belief, sample, noise)?;
    let belief = &history.belief;
    let dense = (history.detail == HistoryDetail::Full).then(|| belief.cov.clone());
    let record = PoseRecord::new(belief.mean.clone(), dense, belief, Some(transition), Vec::new());
    history.push(record);
    Ok(())
}

/// Result of re-filtering with a set of loop closures.
#[derive(Debug, Clone, PartialEq)]
pub struct RerunOutput {
    pub history: FilterHistory,
    /// Diagnostics of the last event's update at its `time_now`.
    pub diagnostics: Option<UpdateDiagnostics>,
}

/// Filters poses `0..=t` from scratch with every event in `events`.
///
/// `samples[tau]` drives the step from pose `tau` to `tau + 1`, so only the
/// first `t` samples are used. Event `k` owns landmark `k`; all landmarks are
/// added at pose 0, and each one is updated at `time_then` and `time_now`.
/// Updates at the same pose are applied in landmark order, before the time
/// update leaving that pose.
pub fn rerun_with_loop_closure(
    samples: &[SensorSample],
    events: &[LoopClosureEvent],
    t: usize,
    params: &SlamParams,
    detail: HistoryDetail,
) -> Result<RerunOutput, NumericalError> {
    assert!(samples.len() >= t, "rerun to pose {t} needs {t} samples, got {}", samples.len());
    let noise = params.process_noise();

    let mut schedule: Vec<(usize, usize)> = Vec::with_capacity(2 * events.len());
    for (k, e) in events.iter().enumerate() {
        assert_eq!(e.landmark_index, k, "event landmark indices must follow acceptance order");
        assert!(e.time_then <= t && e.time_now <= t, "event {k} lies beyond pose {t}");
        schedule.push((e.time_then, k));
        schedule.push((e.time_now, k));
    }
    schedule.sort_unstable();

    let mut belief = init_belief(params);
    for _ in events {
        augment_landmark(&mut belief, params.p0_landmark);
    }
    let last = events.len().checked_sub(1);
    let last_time_now = events.last().map(|e| e.time_now);

    let mut records = Vec::with_capacity(t + 1);
    let mut diagnostics = None;
    let mut next = 0;
    let mut incoming = None;
    for tau in 0..=t {
        let predicted_mean = belief.mean.clone();
        let predicted_cov = (detail == HistoryDetail::Full).then(|| belief.cov.clone());
        let mut updates = Vec::new();
        while next < schedule.len() && schedule[next].0 == tau {
            let k = schedule[next].1;
            let update = landmark_measurement_update(&mut belief, k, params.sigma_lc)?;
            if Some(k) == last && Some(tau) == last_time_now {
                diagnostics = Some(update.diagnostics);
            }
            updates.push(update);
            next += 1;
        }
        records.push(PoseRecord::new(predicted_mean, predicted_cov, &belief, incoming, updates));
        if tau < t {
            incoming = Some(time_update(&mut belief, &samples[tau], &noise)?);
        }
    }

    let history = FilterHistory { records, events: events.to_vec(), belief, detail };
    Ok(RerunOutput { history, diagnostics })
}
