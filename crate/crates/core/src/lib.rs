//! Magnetic-field SLAM: an extended Kalman filter over pose and loop-closure
//! landmarks, where loops are detected by matching windows of magnetometer
//! readings, followed by Rauch-Tung-Striebel smoothing after every accepted
//! closure.

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod ekf;
pub mod eval;
pub mod loopclosure;
pub mod params;
pub mod simworld;
pub mod slam;
pub mod types;

pub use params::{ParamError, SlamParams};
pub use types::{Direction, LoopClosureEvent, SensorSample, StateBelief, UpdateDiagnostics, WeightRow};
