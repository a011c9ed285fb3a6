//! Structureless visual-inertial bundle adjustment for monocular VIO
//! initialization.
//!
//! A window of keyframe states (pose, velocity, IMU biases) is refined
//! against IMU preintegration factors and two-view epipolar factors, with
//! no 3D landmarks in the state. A landmark-based (reprojection) variant of
//! the same problem is provided as a reference, together with a synthetic
//! data generator, file I/O and trajectory metrics.

// Negated comparisons are used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod calibration;
pub mod dataio;
pub mod error;
pub mod evaluation;
pub mod factors;
pub mod geometry;
pub mod jacobian_check;
pub mod preintegration;
pub mod simulation;
pub mod solver;
pub mod state;
pub mod window;

pub use error::{Error, Result};
