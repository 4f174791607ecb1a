//! 2.5D motion model, relative-position measurement model and their Jacobians.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::fleet::{j_times, rot_z, Angle, FleetState, RobotPose, POSE_DIM};

/// Body-frame linear velocity and yaw rate of one robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdometryInput {
    /// m/s, body frame.
    pub v: Vector3<f64>,
    /// rad/s.
    pub omega: f64,
}

impl OdometryInput {
    pub fn new(v: Vector3<f64>, omega: f64) -> Result<Self> {
        if v.iter().any(|c| !c.is_finite()) || !omega.is_finite() {
            return Err(Error::NonFinite("odometry"));
        }
        Ok(Self { v, omega })
    }

    pub fn zero() -> Self {
        Self {
            v: Vector3::zeros(),
            omega: 0.0,
        }
    }
}

/// Odometry covariances per robot and the shared relative-position covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub q_blocks: Vec<Matrix4<f64>>,
    pub r_block: Matrix3<f64>,
}

impl NoiseSpec {
    /// Isotropic noise shared by all robots.
    pub fn uniform(n: usize, sigma_v: f64, sigma_omega: f64, sigma_meas: f64) -> Self {
        let sv = sigma_v * sigma_v;
        let q = Matrix4::from_diagonal(&Vector4::new(sv, sv, sv, sigma_omega * sigma_omega));
        Self {
            q_blocks: vec![q; n],
            r_block: Matrix3::identity() * (sigma_meas * sigma_meas),
        }
    }

    pub fn n(&self) -> usize {
        self.q_blocks.len()
    }

    /// Block-diagonal fleet odometry covariance, `4n x 4n`.
    pub fn q_fleet(&self) -> DMatrix<f64> {
        let n = self.q_blocks.len();
        let mut q = DMatrix::zeros(POSE_DIM * n, POSE_DIM * n);
        for (i, b) in self.q_blocks.iter().enumerate() {
            q.fixed_view_mut::<4, 4>(POSE_DIM * i, POSE_DIM * i)
                .copy_from(b);
        }
        q
    }

    /// Block-diagonal measurement covariance for `m` stacked measurements.
    pub fn r_stacked(&self, m: usize) -> DMatrix<f64> {
        let mut r = DMatrix::zeros(3 * m, 3 * m);
        for k in 0..m {
            r.fixed_view_mut::<3, 3>(3 * k, 3 * k)
                .copy_from(&self.r_block);
        }
        r
    }
}

/// Position of `target` expressed in the body frame of `observer`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPosMeasurement {
    pub observer: usize,
    pub target: usize,
    pub value: Vector3<f64>,
}

/// One step's relative measurements, in stacking order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasurementSet {
    items: Vec<RelPosMeasurement>,
}

impl MeasurementSet {
    /// Validates indices against a fleet of `n` and rejects duplicate pairs.
    pub fn new(items: Vec<RelPosMeasurement>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n * n];
        for m in &items {
            for idx in [m.observer, m.target] {
                if idx >= n {
                    return Err(Error::IndexOutOfRange { index: idx, n });
                }
            }
            if m.observer == m.target {
                return Err(Error::SelfMeasurement(m.observer));
            }
            let slot = &mut seen[m.observer * n + m.target];
            if *slot {
                return Err(Error::DuplicatePair {
                    observer: m.observer,
                    target: m.target,
                });
            }
            *slot = true;
        }
        Ok(Self { items })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[RelPosMeasurement] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Stacked measurement vector `y`.
    pub fn values(&self) -> DVector<f64> {
        let mut y = DVector::zeros(3 * self.items.len());
        for (k, m) in self.items.iter().enumerate() {
            y.fixed_rows_mut::<3>(3 * k).copy_from(&m.value);
        }
        y
    }
}

/// Every ordered pair `(i, j)`, `i != j`, observer-major.
pub fn full_graph_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect()
}

/// Discrete motion step: `p' = p + C(psi)(v + nu) dt`, `psi' = psi + (omega + w) dt`.
pub fn propagate_pose(
    pose: &RobotPose,
    u: &OdometryInput,
    noise: &Vector4<f64>,
    dt: f64,
) -> Result<RobotPose> {
    if !(dt > 0.0) {
        return Err(Error::NonPositiveDt(dt));
    }
    let v = u.v + noise.fixed_rows::<3>(0);
    let position = pose.position + rot_z(pose.yaw) * v * dt;
    let yaw = pose.yaw.radians() + (u.omega + noise[3]) * dt;
    if !yaw.is_finite() || position.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("propagated pose"));
    }
    Ok(RobotPose {
        position,
        yaw: Angle::from_finite(yaw),
    })
}

/// Noiseless propagation of every robot.
pub fn propagate_fleet(state: &FleetState, odometry: &[OdometryInput], dt: f64) -> Result<FleetState> {
    if odometry.len() != state.n() {
        return Err(Error::FleetSizeMismatch {
            expected: state.n(),
            actual: odometry.len(),
        });
    }
    let zero = Vector4::zeros();
    let poses = state
        .poses()
        .iter()
        .zip(odometry)
        .map(|(p, u)| propagate_pose(p, u, &zero, dt))
        .collect::<Result<Vec<_>>>()?;
    FleetState::new(poses)
}

/// State and noise Jacobians of one robot's motion step.
///
/// `F = [[I, J(p_pred - p_prev)], [0, 1]]`, `G = blkdiag(C(psi_prev) dt, dt)`.
pub fn motion_jacobians(
    prev_estimate: &RobotPose,
    predicted: &RobotPose,
    dt: f64,
) -> (Matrix4<f64>, Matrix4<f64>) {
    let mut f = Matrix4::identity();
    f.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&j_times(&(predicted.position - prev_estimate.position)));
    let mut g = Matrix4::zeros();
    g.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(rot_z(prev_estimate.yaw) * dt));
    g[(3, 3)] = dt;
    (f, g)
}

fn check_pair(state: &FleetState, i: usize, j: usize) -> Result<()> {
    state.check_index(i)?;
    state.check_index(j)?;
    if i == j {
        return Err(Error::SelfMeasurement(i));
    }
    Ok(())
}

/// Noiseless relative position `C^T(psi_i) (p_j - p_i)`.
pub fn predict_rel_pos(state: &FleetState, i: usize, j: usize) -> Result<Vector3<f64>> {
    check_pair(state, i, j)?;
    Ok(rel_pos_unchecked(state, i, j))
}

#[inline]
fn rel_pos_unchecked(state: &FleetState, i: usize, j: usize) -> Vector3<f64> {
    rot_z(state.yaw(i)).transpose() * (state.position(j) - state.position(i))
}

/// Stacked `h(x)` in the order of `set`.
pub fn predict_measurements(state: &FleetState, set: &MeasurementSet) -> Result<DVector<f64>> {
    let mut h = DVector::zeros(3 * set.len());
    for (k, m) in set.items().iter().enumerate() {
        h.fixed_rows_mut::<3>(3 * k)
            .copy_from(&predict_rel_pos(state, m.observer, m.target)?);
    }
    Ok(h)
}

/// Writes `-C^T(psi_i) H_r` for pair `(i, j)` into three rows of `out`.
fn write_pair_jacobian(
    out: &mut DMatrix<f64>,
    row: usize,
    estimate: &FleetState,
    i: usize,
    j: usize,
) {
    let gamma = -rot_z(estimate.yaw(i)).transpose();
    let lever = j_times(&(estimate.position(j) - estimate.position(i)));
    let ci = POSE_DIM * i;
    let cj = POSE_DIM * j;
    // H_r^(i) = [I, J(p_j - p_i)], H_r^(j) = [-I, 0]
    out.fixed_view_mut::<3, 3>(row, ci).copy_from(&gamma);
    out.fixed_view_mut::<3, 1>(row, ci + 3)
        .copy_from(&(gamma * lever));
    out.fixed_view_mut::<3, 3>(row, cj).copy_from(&(-gamma));
}

/// `H_ij` (3 x 4n) evaluated at `estimate`.
pub fn measurement_jacobian(estimate: &FleetState, i: usize, j: usize) -> Result<DMatrix<f64>> {
    check_pair(estimate, i, j)?;
    let mut h = DMatrix::zeros(3, estimate.dim());
    write_pair_jacobian(&mut h, 0, estimate, i, j);
    Ok(h)
}

/// Block-diagonal assembly of per-robot `(F_i, G_i)`.
pub fn stack_fleet_propagation(per_robot: &[(Matrix4<f64>, Matrix4<f64>)]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = POSE_DIM * per_robot.len();
    let mut f = DMatrix::zeros(d, d);
    let mut g = DMatrix::zeros(d, d);
    for (i, (fi, gi)) in per_robot.iter().enumerate() {
        let b = POSE_DIM * i;
        f.fixed_view_mut::<4, 4>(b, b).copy_from(fi);
        g.fixed_view_mut::<4, 4>(b, b).copy_from(gi);
    }
    (f, g)
}

/// Fleet `F`, `G` for a propagation from `prev` to `predicted`.
pub fn fleet_propagation_jacobians(
    prev: &FleetState,
    predicted: &FleetState,
    dt: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let blocks: Vec<_> = prev
        .poses()
        .iter()
        .zip(predicted.poses())
        .map(|(a, b)| motion_jacobians(a, b, dt))
        .collect();
    stack_fleet_propagation(&blocks)
}

/// Stacked `H = Gamma H_r` (3m x 4n) and `Gamma` (3m x 3m).
pub fn stack_measurement_jacobian(
    estimate: &FleetState,
    set: &MeasurementSet,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if set.is_empty() {
        return Err(Error::EmptyMeasurementSet);
    }
    let h = stacked_h(estimate, set)?;
    let m = set.len();
    let mut gamma = DMatrix::zeros(3 * m, 3 * m);
    for (k, item) in set.items().iter().enumerate() {
        gamma
            .fixed_view_mut::<3, 3>(3 * k, 3 * k)
            .copy_from(&(-rot_z(estimate.yaw(item.observer)).transpose()));
    }
    Ok((h, gamma))
}

/// Stacked `H` only; an empty set gives a `0 x 4n` matrix.
pub(crate) fn stacked_h(estimate: &FleetState, set: &MeasurementSet) -> Result<DMatrix<f64>> {
    let mut h = DMatrix::zeros(3 * set.len(), estimate.dim());
    for (k, m) in set.items().iter().enumerate() {
        check_pair(estimate, m.observer, m.target)?;
        write_pair_jacobian(&mut h, 3 * k, estimate, m.observer, m.target);
    }
    Ok(h)
}
