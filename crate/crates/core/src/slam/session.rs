use nalgebra::{Vector2, Vector3};

use super::history::{FilterHistory, HistoryDetail};
use super::rerun::{advance_history, init_belief, rerun_with_loop_closure};
use super::smoother::{rts_smooth, smoothed_pose_means, SmoothedTrajectory};
use super::SlamError;
use crate::ekf::{NumericalError, ProcessNoise};
use crate::loopclosure::{screen, weight_row, Candidate, DetectionContext, Screening};
use crate::params::SlamParams;
use crate::types::{LoopClosureEvent, SensorSample, StateBelief, WeightRow};

/// What happened when the detector looked at the current pose.
#[derive(Debug, Clone, PartialEq)]
pub enum LoopDecision {
    /// No candidate passed the weight, spacing and excitation gates.
    NoCandidate(Screening),
    Accepted {
        event: LoopClosureEvent,
        marginal_likelihood: f64,
    },
    /// The re-run was consistent enough to compute but the marginal likelihood fell below `gamma_ml`.
    Rejected {
        candidate: Candidate,
        marginal_likelihood: f64,
    },
    /// The re-run hit a numerical failure and the closure was undone.
    Failed {
        candidate: Candidate,
        error: NumericalError,
    },
}

impl LoopDecision {
    pub fn event(&self) -> Option<&LoopClosureEvent> {
        match self {
            LoopDecision::Accepted { event, .. } => Some(event),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitingSample,
    Ingested,
    Checked,
}

/// Online magnetic-field SLAM.
///
/// Each sample is processed in three stages: [`ingest`](Self::ingest) stores
/// the magnetometer reading at the current pose, [`try_close_loop`](Self::try_close_loop)
/// runs detection and, for a candidate, the re-run and likelihood gate, and
/// [`advance`](Self::advance) applies the odometry to reach the next pose.
/// [`step`](Self::step) does all three.
#[derive(Debug, Clone, PartialEq)]
pub struct SlamSession {
    params: SlamParams,
    noise: ProcessNoise,
    samples: Vec<SensorSample>,
    mags: Vec<Vector3<f64>>,
    /// Best available position estimate per pose: filtered, replaced by
    /// smoothed means after every accepted loop closure.
    positions: Vec<Vector2<f64>>,
    history: FilterHistory,
    last_accepted: Option<usize>,
    last_weights: Option<WeightRow>,
    phase: Phase,
}

impl SlamSession {
    pub fn new(params: SlamParams) -> Result<Self, SlamError> {
        Self::with_detail(params, HistoryDetail::Compact)
    }

    pub fn with_detail(params: SlamParams, detail: HistoryDetail) -> Result<Self, SlamError> {
        let params = params.validate()?;
        let belief = init_belief(&params);
        Ok(Self {
            noise: params.process_noise(),
            params,
            samples: Vec::new(),
            mags: Vec::new(),
            positions: vec![Vector2::zeros()],
            history: FilterHistory::new(belief, detail),
            last_accepted: None,
            last_weights: None,
            phase: Phase::AwaitingSample,
        })
    }

    pub fn params(&self) -> &SlamParams {
        &self.params
    }

    pub fn history(&self) -> &FilterHistory {
        &self.history
    }

    pub fn belief(&self) -> &StateBelief {
        &self.history.belief
    }

    pub fn events(&self) -> &[LoopClosureEvent] {
        &self.history.events
    }

    pub fn samples(&self) -> &[SensorSample] {
        &self.samples
    }

    /// Position estimates used by the detector.
    pub fn positions(&self) -> &[Vector2<f64>] {
        &self.positions
    }

    /// Weight row computed by the last [`try_close_loop`](Self::try_close_loop).
    pub fn last_weights(&self) -> Option<&WeightRow> {
        self.last_weights.as_ref()
    }

    /// Index of the current pose.
    pub fn t(&self) -> usize {
        self.history.t()
    }

    pub fn ingest(&mut self, sample: SensorSample) -> Result<(), SlamError> {
        if self.phase != Phase::AwaitingSample {
            return Err(SlamError::OutOfSequence("ingest called twice without advance"));
        }
        sample.validate()?;
        let expected = self.samples.len();
        if sample.index != expected {
            return Err(SlamError::OutOfOrder { expected, got: sample.index });
        }
        self.samples.push(sample);
        self.mags.push(sample.mag);
        self.phase = Phase::Ingested;
        Ok(())
    }

    /// Runs loop-closure detection at the current pose. An accepted closure
    /// replaces the history with the re-run and refreshes the position
    /// estimates with smoothed means; anything else leaves the session as it was.
    pub fn try_close_loop(&mut self) -> Result<LoopDecision, SlamError> {
        if self.phase != Phase::Ingested {
            return Err(SlamError::OutOfSequence("try_close_loop needs a freshly ingested sample"));
        }
        self.phase = Phase::Checked;
        let t = self.t();
        let ctx = DetectionContext {
            mag_history: &self.mags,
            pos_history: &self.positions,
            pos_cov_now: self.history.belief.position_cov(),
            last_accepted_t: self.last_accepted,
        };
        let row = weight_row(&ctx, &self.params);
        let screening = screen(&ctx, &row, &self.params);
        self.last_weights = Some(row);
        let candidate = match screening {
            Screening::Accepted(c) => c,
            other => return Ok(LoopDecision::NoCandidate(other)),
        };

        let event = LoopClosureEvent {
            landmark_index: self.history.events.len(),
            time_now: t,
            time_then: candidate.time_then,
            direction: candidate.direction,
            weight: candidate.weight,
        };
        let mut events = self.history.events.clone();
        events.push(event);
        let rerun = rerun_with_loop_closure(&self.samples[..t], &events, t, &self.params, self.history.detail);
        let output = match rerun {
            Ok(o) => o,
            Err(error) => return Ok(LoopDecision::Failed { candidate, error }),
        };
        let marginal_likelihood = output.diagnostics.map_or(0.0, |d| d.marginal_likelihood);
        if !(marginal_likelihood >= self.params.gamma_ml) {
            return Ok(LoopDecision::Rejected { candidate, marginal_likelihood });
        }
        self.history = output.history;
        self.last_accepted = Some(t);
        self.positions = smoothed_pose_means(&self.history).iter().map(|m| Vector2::new(m[0], m[1])).collect();
        Ok(LoopDecision::Accepted { event, marginal_likelihood })
    }

    /// Applies the odometry of the ingested sample, moving to the next pose.
    pub fn advance(&mut self) -> Result<(), SlamError> {
        if self.phase == Phase::AwaitingSample {
            return Err(SlamError::OutOfSequence("advance needs an ingested sample"));
        }
        let t = self.t();
        let sample = self.samples[t];
        advance_history(&mut self.history, &sample, &self.noise)
            .map_err(|source| SlamError::Numerical { index: sample.index, source })?;
        let p = self.history.belief.position();
        self.positions.push(p);
        self.phase = Phase::AwaitingSample;
        Ok(())
    }

    pub fn step(&mut self, sample: SensorSample) -> Result<LoopDecision, SlamError> {
        self.ingest(sample)?;
        let decision = self.try_close_loop()?;
        self.advance()?;
        Ok(decision)
    }

    /// Smoothed trajectory over every pose so far.
    pub fn smooth(&self) -> SmoothedTrajectory {
        rts_smooth(&self.history)
    }

    pub fn finish(self) -> SmoothedTrajectory {
        self.smooth()
    }
}

/// State of the estimate right after an accepted loop closure.
#[derive(Debug, Clone, Copy)]
pub struct EventSnapshot<'a> {
    pub event: &'a LoopClosureEvent,
    pub marginal_likelihood: f64,
    /// Smoothed positions for poses `0..=event.time_now`.
    pub positions: &'a [Vector2<f64>],
}

/// Runs the full algorithm over `samples` and returns the final smoothed trajectory.
pub fn run_slam(samples: &[SensorSample], params: &SlamParams) -> Result<SmoothedTrajectory, SlamError> {
    run_slam_with(samples, params, |_| {})
}

/// Like [`run_slam`], calling `on_event` after every accepted loop closure.
pub fn run_slam_with(
    samples: &[SensorSample],
    params: &SlamParams,
    mut on_event: impl FnMut(EventSnapshot<'_>),
) -> Result<SmoothedTrajectory, SlamError> {
    if samples.is_empty() {
        return Err(SlamError::Empty);
    }
    let mut session = SlamSession::new(params.clone())?;
    for sample in samples {
        session.ingest(*sample)?;
        if let LoopDecision::Accepted { event, marginal_likelihood } = session.try_close_loop()? {
            on_event(EventSnapshot { event: &event, marginal_likelihood, positions: session.positions() });
        }
        session.advance()?;
    }
    Ok(session.finish())
}
