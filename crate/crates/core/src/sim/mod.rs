//! Helical scenarios, noise injection and the Monte-Carlo harness.

pub mod harness;
pub mod noise;
pub mod scenario;

pub use harness::{
    dead_reckoning, draw_prior, monte_carlo, monte_carlo_with, nees, run_trial, run_trial_with,
    AggregateMetrics, DeadReckoning, FilterMetrics, FilterTrace, FilterTrialSummary, MeanCurves,
    RobotMetrics, StepView, TrialResult, CHI2_4_Q997,
};
pub use noise::{corrupt_odometry, generate_measurements, stream_id, stream_rng, StreamPurpose};
pub use scenario::{default_helices, generate_truth, HelixSpec, SimConfig, Truth, ARENA_SIZE};
