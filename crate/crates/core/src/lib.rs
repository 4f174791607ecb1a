//! Cooperative localization of robot fleets from odometry and relative
//! position measurements.
//!
//! Five EKF variants share one step interface ([`filters::Filter`]): the
//! standard EKF, first-estimates Jacobian (FEJ), observability constrained
//! (OC), the Kalman-decomposition filter (KD) that runs in observable
//! canonical coordinates, and an ideal EKF linearized at ground truth. The
//! [`observability`] module audits which of them keep the four-dimensional
//! unobservable subspace (global translation and yaw), and [`sim`] measures
//! their consistency by Monte-Carlo simulation.

pub mod decomposition;
pub mod error;
pub mod filters;
pub mod fleet;
pub mod models;
pub mod observability;
pub mod sim;

pub use error::{Error, Result};
pub use filters::{Filter, FilterKind, FilterModel, FilterStepInput};
pub use fleet::{error_state, Angle, ErrorState, FleetBelief, FleetState, RobotPose, POSE_DIM};
pub use models::{MeasurementSet, NoiseSpec, OdometryInput, RelPosMeasurement};
pub use observability::{audit_filter_run, AuditReport, JacobianFrame, LinearizationRecord};
pub use sim::{AggregateMetrics, HelixSpec, SimConfig, TrialResult};
