//! Value types for robot fleets and planar-rotation geometry.
//!
//! Per-robot state layout is `[p_x, p_y, p_z, psi]`; fleet vectors are
//! robot-major, so robot `i` occupies indices `4i..4i+4`.

use std::f64::consts::PI;
use std::ops::{Add, Neg, Sub};

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Dimension of a single robot's state.
pub const POSE_DIM: usize = 4;

const TWO_PI: f64 = 2.0 * PI;

/// Wraps a finite angle into `(-pi, pi]` without validation.
#[inline]
pub(crate) fn wrap(raw: f64) -> f64 {
    let r = raw.rem_euclid(TWO_PI);
    if r > PI {
        r - TWO_PI
    } else {
        r
    }
}

/// A yaw angle in radians, always held in `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct Angle(f64);

impl Angle {
    pub const ZERO: Angle = Angle(0.0);

    pub fn new(raw: f64) -> Result<Self> {
        wrap_angle(raw)
    }

    #[inline]
    pub fn radians(self) -> f64 {
        self.0
    }

    /// Builds an angle from a value the caller knows is finite.
    #[inline]
    pub(crate) fn from_finite(raw: f64) -> Self {
        debug_assert!(raw.is_finite());
        Angle(wrap(raw))
    }
}

impl Add for Angle {
    type Output = Angle;
    fn add(self, rhs: Angle) -> Angle {
        Angle(wrap(self.0 + rhs.0))
    }
}

impl Sub for Angle {
    type Output = Angle;
    fn sub(self, rhs: Angle) -> Angle {
        Angle(wrap(self.0 - rhs.0))
    }
}

impl Neg for Angle {
    type Output = Angle;
    fn neg(self) -> Angle {
        Angle(wrap(-self.0))
    }
}

/// Wraps a raw angle into `(-pi, pi]`.
pub fn wrap_angle(raw: f64) -> Result<Angle> {
    if !raw.is_finite() {
        return Err(Error::NonFinite("angle"));
    }
    Ok(Angle(wrap(raw)))
}

/// Elementary rotation about the z axis.
#[inline]
pub fn rot_z(psi: Angle) -> Matrix3<f64> {
    rot_z_raw(psi.0)
}

#[inline]
pub(crate) fn rot_z_raw(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Generator of planar rotations: `dC/dpsi = J C(psi)`.
#[inline]
pub fn j_gen() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
}

/// `J v` without forming the matrix.
#[inline]
pub(crate) fn j_times(v: &Vector3<f64>) -> Vector3<f64> {
    Vector3::new(-v.y, v.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPose {
    /// Position in the global frame, meters.
    pub position: Vector3<f64>,
    pub yaw: Angle,
}

impl RobotPose {
    pub fn new(position: Vector3<f64>, yaw: Angle) -> Result<Self> {
        if position.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("position"));
        }
        Ok(Self { position, yaw })
    }

    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self> {
        Self::new(Vector3::new(x, y, z), wrap_angle(yaw)?)
    }
}

/// Poses of all robots, in a fixed index order.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetState {
    poses: Vec<RobotPose>,
}

impl FleetState {
    pub fn new(poses: Vec<RobotPose>) -> Result<Self> {
        if poses.len() < 2 {
            return Err(Error::FleetTooSmall(poses.len()));
        }
        Ok(Self { poses })
    }

    /// Reads a robot-major `[p, psi]` vector of length `4n`.
    pub fn from_vector(v: &DVector<f64>) -> Result<Self> {
        if !v.len().is_multiple_of(POSE_DIM) {
            return Err(Error::DimensionMismatch(format!(
                "state vector length {} is not a multiple of 4",
                v.len()
            )));
        }
        let poses = (0..v.len() / POSE_DIM)
            .map(|i| {
                let b = POSE_DIM * i;
                RobotPose::from_xyz_yaw(v[b], v[b + 1], v[b + 2], v[b + 3])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(poses)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.poses.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        POSE_DIM * self.poses.len()
    }

    #[inline]
    pub fn poses(&self) -> &[RobotPose] {
        &self.poses
    }

    #[inline]
    pub fn pose(&self, i: usize) -> &RobotPose {
        &self.poses[i]
    }

    #[inline]
    pub fn position(&self, i: usize) -> &Vector3<f64> {
        &self.poses[i].position
    }

    #[inline]
    pub fn yaw(&self, i: usize) -> Angle {
        self.poses[i].yaw
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dim());
        for (i, p) in self.poses.iter().enumerate() {
            v.fixed_rows_mut::<3>(POSE_DIM * i).copy_from(&p.position);
            v[POSE_DIM * i + 3] = p.yaw.radians();
        }
        v
    }

    pub(crate) fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            Err(Error::IndexOutOfRange { index: i, n: self.n() })
        } else {
            Ok(())
        }
    }

    /// Applies an additive correction `[dp, dpsi]` per robot, wrapping yaw.
    pub fn boxplus(&self, delta: &DVector<f64>) -> Result<Self> {
        if delta.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "correction length {} vs state dimension {}",
                delta.len(),
                self.dim()
            )));
        }
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite("state correction"));
        }
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let b = POSE_DIM * i;
                RobotPose {
                    position: p.position + delta.fixed_rows::<3>(b),
                    yaw: Angle::from_finite(p.yaw.radians() + delta[b + 3]),
                }
            })
            .collect();
        Ok(Self { poses })
    }
}

/// Error-state vector `x - x_hat`, robot-major `[p~, psi~]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorState(pub DVector<f64>);

impl ErrorState {
    pub fn robot(&self, i: usize) -> nalgebra::Vector4<f64> {
        self.0.fixed_rows::<4>(POSE_DIM * i).into_owned()
    }

    pub fn n(&self) -> usize {
        self.0.len() / POSE_DIM
    }
}

/// Per robot: `p - p_hat` and the wrapped yaw difference.
pub fn error_state(truth: &FleetState, estimate: &FleetState) -> Result<ErrorState> {
    if truth.n() != estimate.n() {
        return Err(Error::FleetSizeMismatch {
            expected: truth.n(),
            actual: estimate.n(),
        });
    }
    let mut v = DVector::zeros(truth.dim());
    for (i, (t, e)) in truth.poses.iter().zip(&estimate.poses).enumerate() {
        v.fixed_rows_mut::<3>(POSE_DIM * i)
            .copy_from(&(t.position - e.position));
        v[POSE_DIM * i + 3] = (t.yaw - e.yaw).radians();
    }
    Ok(ErrorState(v))
}

/// Mean fleet state with its joint covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetBelief {
    pub mean: FleetState,
    pub covariance: DMatrix<f64>,
}

impl FleetBelief {
    pub fn new(mean: FleetState, covariance: DMatrix<f64>) -> Result<Self> {
        let d = mean.dim();
        if covariance.nrows() != d || covariance.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, expected {d}x{d}",
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        check_symmetric_psd(&covariance)?;
        Ok(Self { mean, covariance })
    }

    /// The 4x4 marginal covariance block of one robot.
    pub fn marginal(&self, i: usize) -> Matrix4<f64> {
        self.covariance
            .fixed_view::<4, 4>(POSE_DIM * i, POSE_DIM * i)
            .into_owned()
    }
}

/// `(P + P^T) / 2` in place.
pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let avg = 0.5 * (p[(r, c)] + p[(c, r)]);
            p[(r, c)] = avg;
            p[(c, r)] = avg;
        }
    }
}

/// Largest `|P_rc - P_cr|` relative to the largest `|P_rc|`.
pub fn relative_asymmetry(p: &DMatrix<f64>) -> f64 {
    let scale = p.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (p - p.transpose()).amax() / scale
}

/// Smallest eigenvalue over largest absolute eigenvalue of the symmetric part.
pub fn min_eigen_ratio(p: &DMatrix<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let max = eig.amax();
    if max == 0.0 {
        return 0.0;
    }
    eig.min() / max
}

/// Symmetric within 1e-9 relative and min eigenvalue >= -1e-9 max eigenvalue.
pub fn check_symmetric_psd(p: &DMatrix<f64>) -> Result<()> {
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let asym = relative_asymmetry(p);
    if asym > 1e-9 {
        return Err(Error::NotPsd(format!("relative asymmetry {asym:e}")));
    }
    let ratio = min_eigen_ratio(p);
    if ratio < -1e-9 {
        return Err(Error::NotPsd(format!("min/max eigenvalue ratio {ratio:e}")));
    }
    Ok(())
}
