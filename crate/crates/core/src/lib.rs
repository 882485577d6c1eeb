//! Relative transformation estimation between two robots from UWB range
//! measurements and odometry.
//!
//! Two robots each carry UWB units (anchors on the host, tags on the
//! target) and log their own poses in their private odometry frames. The
//! unknown is the 4-DOF rigid map between those frames: a 3-D translation
//! plus a yaw rotation about the gravity-aligned z-axis. The estimator
//! squares and bias-corrects the range model, removes the quadratic term
//! with a block-centering projection, solves a closed-form linear least
//! squares for `[sin θ, cos θ, t]`, projects the rotation block onto
//! SO(2), and refines with a single Gauss-Newton step on the original
//! maximum-likelihood cost.
//!
//! The crate also contains the scenario side needed to exercise the
//! estimator end to end: minimum-operating-time waypoint schedules with
//! the non-coplanarity conditions that keep the linear system full rank,
//! synthetic range generation (including a speed/latency distortion
//! model), verification oracles (iterated Gauss-Newton, grid search), and
//! a Monte Carlo sweep harness with CSV/JSON artifacts.

pub mod bench;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod measurement;
pub mod report;
pub mod scenario;
pub mod streams;

pub use error::{Error, Result};
pub use geometry::{FrameTransform, RotationZ, YawAngle};
pub use measurement::MeasurementSet;
pub use scenario::{DesignParams, Pose, ScenarioConfig, UwbLayout, WaypointSchedule};
