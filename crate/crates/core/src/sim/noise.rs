use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::fleet::FleetState;
use crate::models::{full_graph_pairs, predict_rel_pos, MeasurementSet, OdometryInput, RelPosMeasurement};
use crate::sim::scenario::SimConfig;

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamPurpose {
    Prior = 1,
    Odometry = 2,
    Measurement = 3,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable 64-bit id of the stream `(master_seed, trial, robot, purpose)`.
pub fn stream_id(master_seed: u64, trial: u64, robot: u64, purpose: StreamPurpose) -> u64 {
    [trial, robot, purpose as u64]
        .into_iter()
        .fold(splitmix64(master_seed), |h, v| splitmix64(h ^ splitmix64(v)))
}

/// Independent generator for one stream. Streams never share state, so the
/// draws of one do not depend on how many others exist or in which order
/// they are consumed.
pub fn stream_rng(master_seed: u64, trial: u64, robot: u64, purpose: StreamPurpose) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_id(master_seed, trial, robot, purpose))
}

#[inline]
pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sigma * z
}

/// Adds `N(0, sigma_v^2)` to each linear axis and `N(0, sigma_omega^2)` to the yaw rate.
pub fn corrupt_odometry<R: Rng + ?Sized>(
    noiseless: &OdometryInput,
    rng: &mut R,
    config: &SimConfig,
) -> OdometryInput {
    let w = Vector3::new(
        gaussian(rng, config.sigma_v),
        gaussian(rng, config.sigma_v),
        gaussian(rng, config.sigma_v),
    );
    OdometryInput {
        v: noiseless.v + w,
        omega: noiseless.omega + gaussian(rng, config.sigma_omega),
    }
}

/// Full ordered-pair graph of noisy relative positions.
pub fn generate_measurements<R: Rng + ?Sized>(
    truth: &FleetState,
    rng: &mut R,
    config: &SimConfig,
) -> MeasurementSet {
    let items = full_graph_pairs(truth.n())
        .into_iter()
        .map(|(i, j)| {
            let noise = Vector3::new(
                gaussian(rng, config.sigma_meas),
                gaussian(rng, config.sigma_meas),
                gaussian(rng, config.sigma_meas),
            );
            RelPosMeasurement {
                observer: i,
                target: j,
                value: predict_rel_pos(truth, i, j).expect("full graph pairs are valid") + noise,
            }
        })
        .collect();
    MeasurementSet::new(items, truth.n()).expect("full graph has no duplicates")
}
