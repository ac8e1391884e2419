//! The SLAM loop: online filtering, loop-closure acceptance with a full
//! re-run of the filter, and smoothing.

mod history;
mod rerun;
mod session;
mod smoother;

pub use history::{DenseMoments, FilterHistory, HistoryDetail, PoseRecord};
pub use rerun::{init_belief, rerun_with_loop_closure, RerunOutput};
pub use session::{run_slam, run_slam_with, EventSnapshot, LoopDecision, SlamSession};
pub use smoother::{
    rts_smooth, rts_smooth_dense, smoothed_pose_means, LandmarkEstimate, SmoothedPose, SmoothedTrajectory,
};

use crate::ekf::NumericalError;
use crate::params::ParamError;
use crate::types::SampleError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SlamError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("sample index {got} out of order, expected {expected}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("numerical failure at sample {index}: {source}")]
    Numerical { index: usize, source: NumericalError },
    #[error("no samples to process")]
    Empty,
    #[error("{0}")]
    OutOfSequence(&'static str),
}
