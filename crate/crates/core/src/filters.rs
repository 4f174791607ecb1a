//! The filter bank. Every filter runs one propagation with the measured
//! odometry followed by a single batch update with all of the step's
//! relative measurements.
//!
//! * `Std`: Jacobians at the latest estimates.
//! * `Fej`: propagation Jacobians between first estimates (predictions),
//!   measurement Jacobians at predictions.
//! * `Oc`: Std Jacobians, with `H` projected to annihilate a propagated
//!   null-space basis.
//! * `Kd`: covariance kept in canonical coordinates with the correction
//!   deltas annihilated.
//! * `Ideal`: Jacobians at ground truth; a consistency reference.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3};

use crate::decomposition::{build_transform, invert_transform, kd_jacobians, CanonicalBelief, CanonicalLayout};
use crate::error::{Error, Result};
use crate::fleet::{check_symmetric_psd, j_gen, symmetrize, Angle, FleetBelief, FleetState, RobotPose};
use crate::models::{
    fleet_propagation_jacobians, predict_measurements, propagate_fleet, stacked_h, MeasurementSet,
    NoiseSpec, OdometryInput,
};
use crate::observability::{expected_nullspace, JacobianFrame, LinearizationRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    Std,
    Fej,
    Oc,
    Kd,
    Ideal,
}

impl FilterKind {
    pub const ALL: [FilterKind; 5] = [
        FilterKind::Std,
        FilterKind::Fej,
        FilterKind::Oc,
        FilterKind::Kd,
        FilterKind::Ideal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Std => "STD",
            FilterKind::Fej => "FEJ",
            FilterKind::Oc => "OC",
            FilterKind::Kd => "KD",
            FilterKind::Ideal => "IDEAL",
        }
    }

    /// Coordinates of the Jacobians the filter reports.
    pub fn frame(self) -> JacobianFrame {
        match self {
            FilterKind::Kd => JacobianFrame::Canonical,
            _ => JacobianFrame::Original,
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "STD" => Ok(FilterKind::Std),
            "FEJ" => Ok(FilterKind::Fej),
            "OC" => Ok(FilterKind::Oc),
            "KD" => Ok(FilterKind::Kd),
            "IDEAL" => Ok(FilterKind::Ideal),
            other => Err(Error::InvalidConfig(format!("unknown filter kind {other:?}"))),
        }
    }
}

/// Exteroceptive and proprioceptive input of one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterStepInput {
    /// Measured (noise-corrupted) odometry, one per robot.
    pub odometry: Vec<OdometryInput>,
    pub measurements: MeasurementSet,
    pub dt: f64,
    /// Ground truth at the end of the step; required by `Ideal` only.
    pub truth: Option<FleetState>,
}

/// Mean and covariance in original coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub mean: FleetState,
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FejState {
    pub ekf: EkfState,
    /// Predictions from the previous step (the prior mean before the first step).
    pub first_estimates: FleetState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcState {
    pub ekf: EkfState,
    /// Propagated unobservable basis, `4n x 4`.
    pub nullspace: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdealState {
    pub ekf: EkfState,
    pub prev_truth: Option<FleetState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdFilterState {
    pub mean: FleetState,
    pub canonical: CanonicalBelief,
    /// `T` built from `mean`.
    pub last_transform: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterState {
    Std(EkfState),
    Fej(FejState),
    Oc(OcState),
    Kd(KdFilterState),
    Ideal(IdealState),
}

/// Noise model and update options shared by all filter kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterModel {
    pub noise: NoiseSpec,
    q_fleet: DMatrix<f64>,
    /// Chi-square threshold on the stacked innovation; `None` disables gating.
    pub innovation_gate: Option<f64>,
}

impl FilterModel {
    pub fn new(noise: NoiseSpec) -> Self {
        let q_fleet = noise.q_fleet();
        Self {
            noise,
            q_fleet,
            innovation_gate: None,
        }
    }

    pub fn with_innovation_gate(mut self, threshold: f64) -> Self {
        self.innovation_gate = Some(threshold);
        self
    }

    pub fn q_fleet(&self) -> &DMatrix<f64> {
        &self.q_fleet
    }
}

/// Result of a linear Kalman update.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanUpdate {
    pub gain: DMatrix<f64>,
    pub correction: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// `K = P H^T (H P H^T + R)^{-1}`, `dx = K r`, `P+ = (I - K H) P`, symmetrized.
///
/// Returns `None` when the gate rejects the innovation.
pub fn kalman_update(
    covariance: &DMatrix<f64>,
    h: &DMatrix<f64>,
    r: &DMatrix<f64>,
    innovation: &DVector<f64>,
    gate: Option<f64>,
) -> Result<Option<KalmanUpdate>> {
    let hp = h * covariance;
    let s = &hp * h.transpose() + r;
    let chol = s.cholesky().ok_or(Error::SingularInnovation)?;
    if let Some(threshold) = gate {
        let nis = innovation.dot(&chol.solve(innovation));
        if nis > threshold {
            return Ok(None);
        }
    }
    let gain = chol.solve(&hp).transpose();
    let correction = &gain * innovation;
    let mut cov = covariance - &gain * hp;
    symmetrize(&mut cov);
    if correction.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kalman update"));
    }
    Ok(Some(KalmanUpdate {
        gain,
        correction,
        covariance: cov,
    }))
}

fn check_input(n: usize, input: &FilterStepInput) -> Result<()> {
    if !(input.dt > 0.0) {
        return Err(Error::NonPositiveDt(input.dt));
    }
    if input.odometry.len() != n {
        return Err(Error::FleetSizeMismatch {
            expected: n,
            actual: input.odometry.len(),
        });
    }
    Ok(())
}

fn propagate_cov(p: &DMatrix<f64>, f: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = f * p * f.transpose() + g * q * g.transpose();
    symmetrize(&mut out);
    out
}

/// Shared propagate/update flow given the Jacobians to use.
struct EkfJacobians {
    f: DMatrix<f64>,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
}

fn ekf_flow(
    state: &EkfState,
    predicted: FleetState,
    jac: &EkfJacobians,
    model: &FilterModel,
    measurements: &MeasurementSet,
) -> Result<EkfState> {
    let p_pred = propagate_cov(&state.covariance, &jac.f, &jac.g, model.q_fleet());
    if measurements.is_empty() {
        return Ok(EkfState {
            mean: predicted,
            covariance: p_pred,
        });
    }
    let innovation = measurements.values() - predict_measurements(&predicted, measurements)?;
    let r = model.noise.r_stacked(measurements.len());
    match kalman_update(&p_pred, &jac.h, &r, &innovation, model.innovation_gate)? {
        Some(up) => Ok(EkfState {
            mean: predicted.boxplus(&up.correction)?,
            covariance: up.covariance,
        }),
        None => Ok(EkfState {
            mean: predicted,
            covariance: p_pred,
        }),
    }
}

/// Standard EKF step; returns the Jacobians it used.
pub fn std_ekf_step(
    state: &mut EkfState,
    model: &FilterModel,
    input: &FilterStepInput,
    step: u64,
) -> Result<LinearizationRecord> {
    check_input(state.mean.n(), input)?;
    let predicted = propagate_fleet(&state.mean, &input.odometry, input.dt)?;
    let (f, g) = fleet_propagation_jacobians(&state.mean, &predicted, input.dt);
    let h = stacked_h(&predicted, &input.measurements)?;
    let jac = EkfJacobians { f, g, h };
    let next = ekf_flow(state, predicted.clone(), &jac, model, &input.measurements)?;
    *state = next;
    Ok(LinearizationRecord {
        step,
        f: jac.f,
        h: jac.h,
        mean: predicted,
    })
}

/// First-estimates-Jacobian step.
pub fn fej_ekf_step(
    state: &mut FejState,
    model: &FilterModel,
    input: &FilterStepInput,
    step: u64,
) -> Result<LinearizationRecord> {
    check_input(state.ekf.mean.n(), input)?;
    let predicted = propagate_fleet(&state.ekf.mean, &input.odometry, input.dt)?;
    let (f, _) = fleet_propagation_jacobians(&state.first_estimates, &predicted, input.dt);
    let (_, g) = fleet_propagation_jacobians(&state.ekf.mean, &predicted, input.dt);
    let h = stacked_h(&predicted, &input.measurements)?;
    let jac = EkfJacobians { f, g, h };
    let next = ekf_flow(&state.ekf, predicted.clone(), &jac, model, &input.measurements)?;
    state.ekf = next;
    state.first_estimates = predicted.clone();
    Ok(LinearizationRecord {
        step,
        f: jac.f,
        h: jac.h,
        mean: predicted,
    })
}

/// `H (I - N (N^T N)^{-1} N^T)`: the closest matrix to `H` that annihilates `N`.
pub fn project_out_nullspace(h: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ntn = n.transpose() * n;
    let chol = ntn.cholesky().ok_or(Error::Singular("null-space Gram matrix"))?;
    let hn = h * n;
    let coeff = chol.solve(&hn.transpose()).transpose();
    Ok(h - coeff * n.transpose())
}

/// Observability-constrained step.
pub fn oc_ekf_step(
    state: &mut OcState,
    model: &FilterModel,
    input: &FilterStepInput,
    step: u64,
) -> Result<LinearizationRecord> {
    check_input(state.ekf.mean.n(), input)?;
    let predicted = propagate_fleet(&state.ekf.mean, &input.odometry, input.dt)?;
    let (f, g) = fleet_propagation_jacobians(&state.ekf.mean, &predicted, input.dt);
    let nullspace = &f * &state.nullspace;
    let raw_h = stacked_h(&predicted, &input.measurements)?;
    let h = if raw_h.nrows() == 0 {
        raw_h
    } else {
        project_out_nullspace(&raw_h, &nullspace)?
    };
    let jac = EkfJacobians { f, g, h };
    let next = ekf_flow(&state.ekf, predicted.clone(), &jac, model, &input.measurements)?;
    state.ekf = next;
    state.nullspace = nullspace;
    Ok(LinearizationRecord {
        step,
        f: jac.f,
        h: jac.h,
        mean: predicted,
    })
}

/// Step with every Jacobian evaluated at ground truth.
pub fn ideal_ekf_step(
    state: &mut IdealState,
    model: &FilterModel,
    input: &FilterStepInput,
    step: u64,
) -> Result<LinearizationRecord> {
    check_input(state.ekf.mean.n(), input)?;
    let truth = input.truth.as_ref().ok_or(Error::MissingTruth)?;
    let prev_truth = state.prev_truth.as_ref().ok_or(Error::MissingTruth)?;
    if truth.n() != state.ekf.mean.n() {
        return Err(Error::FleetSizeMismatch {
            expected: state.ekf.mean.n(),
            actual: truth.n(),
        });
    }
    let predicted = propagate_fleet(&state.ekf.mean, &input.odometry, input.dt)?;
    let (f, g) = fleet_propagation_jacobians(prev_truth, truth, input.dt);
    let h = stacked_h(truth, &input.measurements)?;
    let jac = EkfJacobians { f, g, h };
    let next = ekf_flow(&state.ekf, predicted, &jac, model, &input.measurements)?;
    state.ekf = next;
    state.prev_truth = Some(truth.clone());
    Ok(LinearizationRecord {
        step,
        f: jac.f,
        h: jac.h,
        mean: truth.clone(),
    })
}

/// Maps the canonical correction back to original coordinates by solving
/// `x = x_pred + T(x)^{-1} z` with the transform taken at the updated mean.
///
/// Yaw: `psi_1 += z^psi_n`, `psi_i += z^psi_{i-1} + z^psi_n`. Position:
/// `p_1 = p_1 + z^p_n`, `p_i = Xi (p_i + z^p_n - z^p_{i-1} - z^psi_n J p_1')`
/// with `Xi = (I - z^psi_n J)^{-1}` and `p_1'` the updated anchor position.
/// Applying `Xi` to the anchor as well would rotate the whole fleet about the
/// world origin, a translation the covariance does not carry.
pub fn kd_recover_mean(predicted: &FleetState, z: &DVector<f64>) -> Result<FleetState> {
    let layout = CanonicalLayout::new(predicted.n())?;
    if z.len() != layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "canonical correction length {} vs {}",
            z.len(),
            layout.dim()
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("canonical correction"));
    }
    let gyaw = z[layout.global_yaw()];
    let gpos = z.fixed_rows::<3>(layout.global_pos()).into_owned();
    // det(I - a J) = 1 + a^2 > 0
    let xi = (Matrix3::identity() - j_gen() * gyaw)
        .try_inverse()
        .ok_or(Error::Singular("Xi"))?;
    let anchor = predicted.position(0) + gpos;
    let lever = j_gen() * anchor * gyaw;
    let poses = (0..layout.n())
        .map(|i| {
            let pose = predicted.pose(i);
            if i == 0 {
                return RobotPose {
                    position: anchor,
                    yaw: Angle::from_finite(pose.yaw.radians() + gyaw),
                };
            }
            let dp = gpos - z.fixed_rows::<3>(layout.rel_pos(i)) - lever;
            RobotPose {
                position: xi * (pose.position + dp),
                yaw: Angle::from_finite(pose.yaw.radians() + z[layout.rel_yaw(i)] + gyaw),
            }
        })
        .collect();
    FleetState::new(poses)
}

/// Kalman-decomposition step in canonical coordinates.
pub fn kd_ekf_step(
    state: &mut KdFilterState,
    model: &FilterModel,
    input: &FilterStepInput,
    step: u64,
) -> Result<LinearizationRecord> {
    check_input(state.mean.n(), input)?;
    let predicted = propagate_fleet(&state.mean, &input.odometry, input.dt)?;
    let jac = kd_jacobians(&state.mean, &predicted, &input.measurements, input.dt)?;
    let p_pred = propagate_cov(&state.canonical.covariance, &jac.f, &jac.g, model.q_fleet());

    let (mean, covariance) = if input.measurements.is_empty() {
        (predicted.clone(), p_pred)
    } else {
        let innovation =
            input.measurements.values() - predict_measurements(&predicted, &input.measurements)?;
        let r = model.noise.r_stacked(input.measurements.len());
        match kalman_update(&p_pred, &jac.h, &r, &innovation, model.innovation_gate)? {
            Some(up) => (kd_recover_mean(&predicted, &up.correction)?, up.covariance),
            None => (predicted.clone(), p_pred),
        }
    };
    let transform = build_transform(&mean)?;
    state.mean = mean;
    state.canonical.covariance = covariance;
    state.last_transform = transform;
    Ok(LinearizationRecord {
        step,
        f: jac.f,
        h: jac.h,
        mean: predicted,
    })
}

/// A filter instance of any kind. Steps are strictly sequential per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    kind: FilterKind,
    model: FilterModel,
    state: FilterState,
    steps_taken: u64,
}

impl Filter {
    /// Initializes from a prior. `Ideal` additionally needs
    /// [`Filter::with_initial_truth`] before its first step.
    pub fn init(kind: FilterKind, prior: &FleetBelief, model: FilterModel) -> Result<Self> {
        check_symmetric_psd(&prior.covariance)?;
        if prior.covariance.nrows() != prior.mean.dim() {
            return Err(Error::DimensionMismatch("prior covariance".into()));
        }
        if model.noise.n() != prior.mean.n() {
            return Err(Error::FleetSizeMismatch {
                expected: prior.mean.n(),
                actual: model.noise.n(),
            });
        }
        let ekf = EkfState {
            mean: prior.mean.clone(),
            covariance: prior.covariance.clone(),
        };
        let state = match kind {
            FilterKind::Std => FilterState::Std(ekf),
            FilterKind::Fej => FilterState::Fej(FejState {
                first_estimates: prior.mean.clone(),
                ekf,
            }),
            FilterKind::Oc => FilterState::Oc(OcState {
                nullspace: expected_nullspace(&prior.mean),
                ekf,
            }),
            FilterKind::Ideal => FilterState::Ideal(IdealState {
                ekf,
                prev_truth: None,
            }),
            FilterKind::Kd => {
                let t = build_transform(&prior.mean)?;
                let mut p = &t * &prior.covariance * t.transpose();
                symmetrize(&mut p);
                FilterState::Kd(KdFilterState {
                    mean: prior.mean.clone(),
                    canonical: CanonicalBelief {
                        layout: CanonicalLayout::new(prior.mean.n())?,
                        covariance: p,
                    },
                    last_transform: t,
                })
            }
        };
        Ok(Self {
            kind,
            model,
            state,
            steps_taken: 0,
        })
    }

    /// Supplies ground truth at the prior's time; used by `Ideal` only.
    pub fn with_initial_truth(mut self, truth: FleetState) -> Self {
        if let FilterState::Ideal(s) = &mut self.state {
            s.prev_truth = Some(truth);
        }
        self
    }

    pub fn kind(&self) -> FilterKind {
        self.kind
    }

    pub fn state(&self) -> &FilterState {
        &self.state
    }

    pub fn model(&self) -> &FilterModel {
        &self.model
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    pub fn mean(&self) -> &FleetState {
        match &self.state {
            FilterState::Std(s) => &s.mean,
            FilterState::Fej(s) => &s.ekf.mean,
            FilterState::Oc(s) => &s.ekf.mean,
            FilterState::Ideal(s) => &s.ekf.mean,
            FilterState::Kd(s) => &s.mean,
        }
    }

    /// Advances one step; on error the state is left unchanged.
    pub fn step(&mut self, input: &FilterStepInput) -> Result<LinearizationRecord> {
        let k = self.steps_taken + 1;
        let model = &self.model;
        let record = match &mut self.state {
            FilterState::Std(s) => std_ekf_step(s, model, input, k)?,
            FilterState::Fej(s) => fej_ekf_step(s, model, input, k)?,
            FilterState::Oc(s) => oc_ekf_step(s, model, input, k)?,
            FilterState::Kd(s) => kd_ekf_step(s, model, input, k)?,
            FilterState::Ideal(s) => ideal_ekf_step(s, model, input, k)?,
        };
        self.steps_taken = k;
        Ok(record)
    }

    /// Mean and symmetrized covariance in original coordinates.
    pub fn reported_belief(&self) -> Result<FleetBelief> {
        let (mean, mut cov) = match &self.state {
            FilterState::Std(s) => (s.mean.clone(), s.covariance.clone()),
            FilterState::Fej(s) => (s.ekf.mean.clone(), s.ekf.covariance.clone()),
            FilterState::Oc(s) => (s.ekf.mean.clone(), s.ekf.covariance.clone()),
            FilterState::Ideal(s) => (s.ekf.mean.clone(), s.ekf.covariance.clone()),
            FilterState::Kd(s) => {
                let inv = invert_transform(&s.mean)?;
                (s.mean.clone(), &inv * &s.canonical.covariance * inv.transpose())
            }
        };
        symmetrize(&mut cov);
        Ok(FleetBelief {
            mean,
            covariance: cov,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{full_graph_pairs, predict_rel_pos, RelPosMeasurement};
    use nalgebra::Vector3;

    fn fleet(raw: &[[f64; 4]]) -> FleetState {
        FleetState::new(
            raw.iter()
                .map(|r| RobotPose::from_xyz_yaw(r[0], r[1], r[2], r[3]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn prior3() -> FleetBelief {
        let mean = fleet(&[[1.0, 2.0, 3.0, 0.3], [4.0, 0.5, 2.0, 1.0], [2.0, -3.0, 5.0, -2.0]]);
        let cov = DMatrix::from_diagonal(&DVector::from_fn(12, |i, _| if i % 4 == 3 { 0.01 } else { 0.09 }));
        FleetBelief::new(mean, cov).unwrap()
    }

    fn model(n: usize) -> FilterModel {
        FilterModel::new(NoiseSpec::uniform(n, 0.3, 0.08, 0.1))
    }

    fn measurements_of(truth: &FleetState, offset: f64) -> MeasurementSet {
        let items = full_graph_pairs(truth.n())
            .into_iter()
            .enumerate()
            .map(|(k, (i, j))| RelPosMeasurement {
                observer: i,
                target: j,
                value: predict_rel_pos(truth, i, j).unwrap() + Vector3::repeat(offset * (k as f64 - 2.5)),
            })
            .collect();
        MeasurementSet::new(items, truth.n()).unwrap()
    }

    fn odometry(n: usize) -> Vec<OdometryInput> {
        (0..n)
            .map(|i| OdometryInput::new(Vector3::new(0.5 + 0.1 * i as f64, -0.2, 0.05), 0.1 * i as f64 - 0.1).unwrap())
            .collect()
    }

    #[test]
    fn kind_round_trip() {
        for k in FilterKind::ALL {
            assert_eq!(k.as_str().parse::<FilterKind>().unwrap(), k);
        }
        assert!("EKF".parse::<FilterKind>().is_err());
    }

    #[test]
    fn init_stores_prior() {
        let prior = prior3();
        for kind in [FilterKind::Std, FilterKind::Fej, FilterKind::Oc, FilterKind::Ideal] {
            let f = Filter::init(kind, &prior, model(3)).unwrap();
            assert_eq!(f.reported_belief().unwrap(), prior);
        }
        let kd = Filter::init(FilterKind::Kd, &prior, model(3)).unwrap();
        let back = kd.reported_belief().unwrap();
        assert!((back.covariance - &prior.covariance).amax() < 1e-10);
    }

    #[test]
    fn kd_init_examples() {
        let zero = FleetBelief::new(fleet(&[[0.0; 4], [0.0; 4]]), DMatrix::zeros(8, 8)).unwrap();
        let f = Filter::init(FilterKind::Kd, &zero, model(2)).unwrap();
        let FilterState::Kd(s) = f.state() else { panic!() };
        assert_eq!(s.canonical.covariance, DMatrix::zeros(8, 8));

        let ident = FleetBelief::new(fleet(&[[0.0; 4], [0.0; 4]]), DMatrix::identity(8, 8)).unwrap();
        let f = Filter::init(FilterKind::Kd, &ident, model(2)).unwrap();
        let FilterState::Kd(s) = f.state() else { panic!() };
        // T0 T0^T worked out by hand from the zero-estimate transform.
        #[rustfmt::skip]
        let expected = DMatrix::from_row_slice(8, 8, &[
            2., 0., 0., 0., 0., 1., 0., 0.,
            0., 2., 0., 0., 0., 0., 1., 0.,
            0., 0., 2., 0., 0., 0., 0., 1.,
            0., 0., 0., 2., -1., 0., 0., 0.,
            0., 0., 0., -1., 1., 0., 0., 0.,
            1., 0., 0., 0., 0., 1., 0., 0.,
            0., 1., 0., 0., 0., 0., 1., 0.,
            0., 0., 1., 0., 0., 0., 0., 1.,
        ]);
        assert!((&s.canonical.covariance - expected).amax() < 1e-15);
    }

    #[test]
    fn init_rejects_non_psd() {
        let mut prior = prior3();
        prior.covariance[(0, 0)] = -1.0;
        assert!(matches!(Filter::init(FilterKind::Std, &prior, model(3)), Err(Error::NotPsd(_))));
    }

    #[test]
    fn empty_update_grows_covariance() {
        let prior = prior3();
        for kind in [FilterKind::Std, FilterKind::Fej, FilterKind::Oc, FilterKind::Kd] {
            let mut f = Filter::init(kind, &prior, model(3)).unwrap();
            let input = FilterStepInput {
                odometry: odometry(3),
                measurements: MeasurementSet::empty(),
                dt: 0.1,
                truth: None,
            };
            let before = f.reported_belief().unwrap().covariance.trace();
            let rec = f.step(&input).unwrap();
            assert_eq!(rec.h.nrows(), 0);
            let after = f.reported_belief().unwrap();
            assert!(after.covariance.trace() >= before, "{kind}");
            let expected_mean = propagate_fleet(&prior.mean, &input.odometry, 0.1).unwrap();
            assert_eq!(after.mean, expected_mean);
        }
    }

    #[test]
    fn zero_noise_fixed_point() {
        let prior = prior3();
        let truth = prior.mean.clone();
        let noise = NoiseSpec {
            q_blocks: vec![nalgebra::Matrix4::zeros(); 3],
            r_block: Matrix3::identity() * 1e-12,
        };
        for kind in FilterKind::ALL {
            let mut f = Filter::init(kind, &prior, FilterModel::new(noise.clone()))
                .unwrap()
                .with_initial_truth(truth.clone());
            let input = FilterStepInput {
                odometry: vec![OdometryInput::zero(); 3],
                measurements: measurements_of(&truth, 0.0),
                dt: 0.1,
                truth: Some(truth.clone()),
            };
            for _ in 0..3 {
                f.step(&input).unwrap();
            }
            let e = crate::fleet::error_state(&truth, f.mean()).unwrap();
            assert!(e.0.amax() < 1e-12, "{kind}: {}", e.0.amax());
        }
    }

    #[test]
    fn fej_first_step_matches_std() {
        let prior = prior3();
        let input = FilterStepInput {
            odometry: odometry(3),
            measurements: measurements_of(&prior.mean, 0.01),
            dt: 0.1,
            truth: None,
        };
        let mut a = Filter::init(FilterKind::Std, &prior, model(3)).unwrap();
        let mut b = Filter::init(FilterKind::Fej, &prior, model(3)).unwrap();
        let ra = a.step(&input).unwrap();
        let rb = b.step(&input).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.reported_belief().unwrap(), b.reported_belief().unwrap());
    }

    #[test]
    fn fej_second_step_differs_by_correction() {
        let prior = prior3();
        let input = FilterStepInput {
            odometry: odometry(3),
            measurements: measurements_of(&prior.mean, 0.02),
            dt: 0.1,
            truth: None,
        };
        let mut a = Filter::init(FilterKind::Std, &prior, model(3)).unwrap();
        let mut b = Filter::init(FilterKind::Fej, &prior, model(3)).unwrap();
        let r1 = a.step(&input).unwrap();
        b.step(&input).unwrap();
        let updated = a.mean().clone();
        let fa = a.step(&input).unwrap().f;
        let fb = b.step(&input).unwrap().f;
        for i in 0..3 {
            let correction = updated.position(i) - r1.mean.position(i);
            let diff = fb.fixed_view::<3, 1>(4 * i, 4 * i + 3) - fa.fixed_view::<3, 1>(4 * i, 4 * i + 3);
            assert!((diff - j_gen() * correction).amax() < 1e-12);
        }
    }

    #[test]
    fn oc_projection_annihilates_nullspace() {
        let prior = prior3();
        let mut f = Filter::init(FilterKind::Oc, &prior, model(3)).unwrap();
        let input = FilterStepInput {
            odometry: odometry(3),
            measurements: measurements_of(&prior.mean, 0.02),
            dt: 0.1,
            truth: None,
        };
        for _ in 0..5 {
            let rec = f.step(&input).unwrap();
            let FilterState::Oc(s) = f.state() else { panic!() };
            assert!((&rec.h * &s.nullspace).amax() < 1e-10);
        }

        let x = prior.mean;
        let n = expected_nullspace(&x);
        let h = stacked_h(&x, &measurements_of(&x, 0.0)).unwrap();
        let projected = project_out_nullspace(&h, &n).unwrap();
        assert!((projected - h).amax() < 1e-12);
    }

    #[test]
    fn ideal_requires_truth() {
        let prior = prior3();
        let input = FilterStepInput {
            odometry: odometry(3),
            measurements: MeasurementSet::empty(),
            dt: 0.1,
            truth: None,
        };
        let mut f = Filter::init(FilterKind::Ideal, &prior, model(3)).unwrap();
        assert_eq!(f.step(&input), Err(Error::MissingTruth));
        let mut f = f.with_initial_truth(prior.mean.clone());
        assert_eq!(f.step(&input), Err(Error::MissingTruth));
        assert_eq!(f.steps_taken(), 0);
    }

    #[test]
    fn ideal_with_truth_at_estimate_matches_std() {
        let prior = prior3();
        let odo = vec![OdometryInput::zero(); 3];
        let input = FilterStepInput {
            odometry: odo,
            measurements: measurements_of(&prior.mean, 0.0),
            dt: 0.1,
            truth: Some(prior.mean.clone()),
        };
        let mut a = Filter::init(FilterKind::Std, &prior, model(3)).unwrap();
        let mut b = Filter::init(FilterKind::Ideal, &prior, model(3))
            .unwrap()
            .with_initial_truth(prior.mean.clone());
        a.step(&input).unwrap();
        b.step(&input).unwrap();
        let (pa, pb) = (a.reported_belief().unwrap(), b.reported_belief().unwrap());
        assert!((pa.covariance - pb.covariance).amax() < 1e-15);
    }

    #[test]
    fn kd_xi_identity_without_global_yaw() {
        let x = prior3().mean;
        let mut z = DVector::zeros(12);
        z.fixed_rows_mut::<3>(9).copy_from(&Vector3::new(0.1, -0.2, 0.3));
        z[0] = 0.05;
        let out = kd_recover_mean(&x, &z).unwrap();
        assert!((out.position(0) - x.position(0) - Vector3::new(0.1, -0.2, 0.3)).amax() < 1e-15);
        assert!(
            (out.position(1) - x.position(1) - Vector3::new(0.05, -0.2, 0.3)).amax() < 1e-15
        );
    }

    #[test]
    fn kd_recovery_solves_implicit_transform_equation() {
        let x = prior3().mean;
        let z = DVector::from_fn(12, |r, _| 0.03 * (r as f64 + 1.0).sin());
        let out = kd_recover_mean(&x, &z).unwrap();
        let t = build_transform(&out).unwrap();
        let dx = out.to_vector() - x.to_vector();
        assert!((t * dx - &z).amax() < 1e-12);

        // shifting the world origin shifts the result and nothing else
        let shift = DVector::from_fn(12, |r, _| [7.0, -3.0, 2.5, 0.0][r % 4]);
        let moved = kd_recover_mean(&x.boxplus(&shift).unwrap(), &z).unwrap();
        assert!((moved.to_vector() - shift - out.to_vector()).amax() < 1e-12);
    }

    #[test]
    fn kd_gain_blocks_unobservable_when_decoupled() {
        let x = prior3().mean;
        let set = measurements_of(&x, 0.0);
        let jac = kd_jacobians(&x, &x, &set, 0.1).unwrap();
        let mut p = DMatrix::from_fn(12, 12, |r, c| if r == c { 1.0 } else { 0.1 / (1.0 + (r as f64 - c as f64).abs()) });
        p.view_mut((0, 8), (8, 4)).fill(0.0);
        p.view_mut((8, 0), (4, 8)).fill(0.0);
        let r = model(3).noise.r_stacked(set.len());
        let up = kalman_update(&p, &jac.h, &r, &DVector::from_element(18, 0.1), None)
            .unwrap()
            .unwrap();
        assert!(up.gain.rows(8, 4).amax() < 1e-14);
    }

    #[test]
    fn gate_rejects_outliers() {
        let prior = prior3();
        let input = FilterStepInput {
            odometry: vec![OdometryInput::zero(); 3],
            measurements: measurements_of(&prior.mean, 50.0),
            dt: 0.1,
            truth: None,
        };
        let mut f = Filter::init(FilterKind::Std, &prior, model(3).with_innovation_gate(100.0)).unwrap();
        f.step(&input).unwrap();
        assert_eq!(f.mean(), &prior.mean);
    }
}
