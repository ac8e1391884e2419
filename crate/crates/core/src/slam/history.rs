use nalgebra::{DMatrix, DVector, Dyn, OMatrix, Vector2, U4};

use crate::ekf::{LandmarkUpdate, Transition};
use crate::types::{LoopClosureEvent, StateBelief, POSE_DIM};

/// How much of each filtering step is kept for smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HistoryDetail {
    /// Means, the pose rows of the filtered covariance and the update gains.
    /// Enough for the information-form smoother in O(n) per pose.
    #[default]
    Compact,
    /// Additionally the full predicted and filtered covariance at every pose.
    Full,
}

/// Dense covariances of one pose, kept only with [`HistoryDetail::Full`].
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMoments {
    pub predicted_cov: DMatrix<f64>,
    pub filtered_cov: DMatrix<f64>,
}

/// Filter output at one pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    /// Mean before the loop-closure updates at this pose.
    pub predicted_mean: DVector<f64>,
    pub filtered_mean: DVector<f64>,
    /// Rows of the filtered covariance belonging to the pose states.
    pub filtered_rows: OMatrix<f64, U4, Dyn>,
    pub filtered_trace: f64,
    /// Jacobian of the step that led to this pose; `None` at pose 0.
    pub transition: Option<Transition>,
    /// Loop-closure updates applied at this pose, in order.
    pub updates: Vec<LandmarkUpdate>,
    pub dense: Option<DenseMoments>,
}

impl PoseRecord {
    pub(crate) fn new(
        predicted_mean: DVector<f64>,
        predicted_cov: Option<DMatrix<f64>>,
        filtered: &StateBelief,
        transition: Option<Transition>,
        updates: Vec<LandmarkUpdate>,
    ) -> Self {
        let dense =
            predicted_cov.map(|predicted_cov| DenseMoments { predicted_cov, filtered_cov: filtered.cov.clone() });
        Self {
            predicted_mean,
            filtered_mean: filtered.mean.clone(),
            filtered_rows: filtered.cov.fixed_rows::<POSE_DIM>(0).into_owned(),
            filtered_trace: filtered.cov.trace(),
            transition,
            updates,
            dense,
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.filtered_mean[0], self.filtered_mean[1])
    }

    pub fn dim(&self) -> usize {
        self.filtered_mean.len()
    }
}

/// Filtered trajectory from pose 0 to the current pose, with the accepted
/// loop closures and the current belief.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterHistory {
    pub records: Vec<PoseRecord>,
    pub events: Vec<LoopClosureEvent>,
    pub belief: StateBelief,
    pub detail: HistoryDetail,
}

impl FilterHistory {
    pub fn new(belief: StateBelief, detail: HistoryDetail) -> Self {
        let dense = (detail == HistoryDetail::Full).then(|| belief.cov.clone());
        let first = PoseRecord::new(belief.mean.clone(), dense, &belief, None, Vec::new());
        Self { records: vec![first], events: Vec::new(), belief, detail }
    }

    /// Index of the current pose.
    pub fn t(&self) -> usize {
        self.records.len() - 1
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filtered_positions(&self) -> Vec<Vector2<f64>> {
        self.records.iter().map(PoseRecord::position).collect()
    }

    pub fn update_count(&self) -> usize {
        self.records.iter().map(|r| r.updates.len()).sum()
    }

    pub(crate) fn push(&mut self, record: PoseRecord) {
        self.records.push(record);
    }
}
