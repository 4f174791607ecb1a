//! Kalman observable decomposition of the linearized fleet system.
//!
//! The transform `T` maps the original error state `x~` to canonical
//! coordinates `z~`. Robot 0 is the anchor. For each robot `r >= 1` there is
//! an observable block `[z^p (3), z^psi (1)]` holding its position and yaw
//! relative to the anchor. The last four coordinates are unobservable: the
//! global yaw (anchor yaw error) followed by the global position (anchor
//! position error).

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::fleet::{j_times, rot_z, FleetState, POSE_DIM};
use crate::models::{fleet_propagation_jacobians, MeasurementSet};

/// Index arithmetic for the canonical coordinate ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CanonicalLayout {
    n: usize,
}

impl CanonicalLayout {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::FleetTooSmall(n));
        }
        Ok(Self { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        POSE_DIM * self.n
    }

    /// First column of robot `r`'s relative position block, `r >= 1`.
    #[inline]
    pub fn rel_pos(&self, r: usize) -> usize {
        debug_assert!(r >= 1 && r < self.n);
        POSE_DIM * (r - 1)
    }

    /// Column of robot `r`'s relative yaw, `r >= 1`.
    #[inline]
    pub fn rel_yaw(&self, r: usize) -> usize {
        POSE_DIM * (r - 1) + 3
    }

    /// Column of the global yaw coordinate.
    #[inline]
    pub fn global_yaw(&self) -> usize {
        POSE_DIM * (self.n - 1)
    }

    /// First column of the global position block.
    #[inline]
    pub fn global_pos(&self) -> usize {
        POSE_DIM * (self.n - 1) + 1
    }

    /// Number of observable coordinates.
    #[inline]
    pub fn observable_dim(&self) -> usize {
        POSE_DIM * (self.n - 1)
    }
}

/// Canonical-coordinate covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalBelief {
    pub layout: CanonicalLayout,
    pub covariance: DMatrix<f64>,
}

/// Builds `T` at `estimate`.
pub fn build_transform(estimate: &FleetState) -> Result<DMatrix<f64>> {
    let layout = CanonicalLayout::new(estimate.n())?;
    let d = layout.dim();
    let mut t = DMatrix::zeros(d, d);
    let p0 = estimate.position(0);
    let eye = Matrix3::identity();
    for r in 1..layout.n() {
        let row = layout.rel_pos(r);
        t.fixed_view_mut::<3, 3>(row, 0).copy_from(&eye);
        t.fixed_view_mut::<3, 1>(row, 3)
            .copy_from(&j_times(&(estimate.position(r) - p0)));
        t.fixed_view_mut::<3, 3>(row, POSE_DIM * r).copy_from(&(-eye));
        let yrow = layout.rel_yaw(r);
        t[(yrow, 3)] = -1.0;
        t[(yrow, POSE_DIM * r + 3)] = 1.0;
    }
    t[(layout.global_yaw(), 3)] = 1.0;
    t.fixed_view_mut::<3, 3>(layout.global_pos(), 0).copy_from(&eye);
    Ok(t)
}

/// Closed-form `T^{-1}` at `estimate`.
///
/// Anchor errors are read from the last four coordinates; every other robot is
/// reconstructed from the anchor and its relative block.
pub fn invert_transform(estimate: &FleetState) -> Result<DMatrix<f64>> {
    let layout = CanonicalLayout::new(estimate.n())?;
    let d = layout.dim();
    let mut inv = DMatrix::zeros(d, d);
    let p0 = estimate.position(0);
    let eye = Matrix3::identity();
    let gy = layout.global_yaw();
    let gp = layout.global_pos();
    inv.fixed_view_mut::<3, 3>(0, gp).copy_from(&eye);
    inv[(3, gy)] = 1.0;
    for r in 1..layout.n() {
        let row = POSE_DIM * r;
        inv.fixed_view_mut::<3, 3>(row, gp).copy_from(&eye);
        inv.fixed_view_mut::<3, 1>(row, gy)
            .copy_from(&j_times(&(estimate.position(r) - p0)));
        inv.fixed_view_mut::<3, 3>(row, layout.rel_pos(r))
            .copy_from(&(-eye));
        inv[(row + 3, layout.rel_yaw(r))] = 1.0;
        inv[(row + 3, gy)] = 1.0;
    }
    Ok(inv)
}

/// `T^{-1} z` without forming the matrix.
pub fn to_original(estimate: &FleetState, z: &DVector<f64>) -> Result<DVector<f64>> {
    let layout = CanonicalLayout::new(estimate.n())?;
    if z.len() != layout.dim() {
        return Err(Error::DimensionMismatch(format!(
            "canonical vector length {} vs {}",
            z.len(),
            layout.dim()
        )));
    }
    let gyaw = z[layout.global_yaw()];
    let gpos: Vector3<f64> = z.fixed_rows::<3>(layout.global_pos()).into_owned();
    let p0 = estimate.position(0);
    let mut x = DVector::zeros(layout.dim());
    x.fixed_rows_mut::<3>(0).copy_from(&gpos);
    x[3] = gyaw;
    for r in 1..layout.n() {
        let b = POSE_DIM * r;
        let p = gpos + j_times(&(estimate.position(r) - p0)) * gyaw
            - z.fixed_rows::<3>(layout.rel_pos(r));
        x.fixed_rows_mut::<3>(b).copy_from(&p);
        x[b + 3] = z[layout.rel_yaw(r)] + gyaw;
    }
    Ok(x)
}

/// Position-correction differences between robots for one update.
///
/// `delta(i, j) = J((p_i^pred - p_i^upd) - (p_j^pred - p_j^upd))`, a column
/// that multiplies the global-yaw coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionDeltas {
    n: usize,
    deltas: Vec<Vector3<f64>>,
}

impl CorrectionDeltas {
    pub fn zero(n: usize) -> Self {
        Self {
            n,
            deltas: vec![Vector3::zeros(); n * n],
        }
    }

    pub fn from_estimates(predicted: &FleetState, updated: &FleetState) -> Result<Self> {
        if predicted.n() != updated.n() {
            return Err(Error::FleetSizeMismatch {
                expected: predicted.n(),
                actual: updated.n(),
            });
        }
        let n = predicted.n();
        let corrections: Vec<Vector3<f64>> = (0..n)
            .map(|i| predicted.position(i) - updated.position(i))
            .collect();
        let mut deltas = Vec::with_capacity(n * n);
        for ci in &corrections {
            for cj in &corrections {
                deltas.push(j_times(&(ci - cj)));
            }
        }
        let out = Self { n, deltas };
        debug_assert!(out.is_antisymmetric(1e-12));
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Vector3<f64> {
        self.deltas[i * self.n + j]
    }

    pub fn is_zero(&self) -> bool {
        self.deltas.iter().all(|d| *d == Vector3::zeros())
    }

    pub fn is_antisymmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            self.get(i, i).amax() <= tol
                && (0..self.n).all(|j| (self.get(i, j) + self.get(j, i)).amax() <= tol)
        })
    }
}

/// `Delta_ij` for a single pair.
pub fn correction_delta(
    predicted: &FleetState,
    updated: &FleetState,
    i: usize,
    j: usize,
) -> Result<Vector3<f64>> {
    predicted.check_index(i)?;
    predicted.check_index(j)?;
    let ci = predicted.position(i) - updated.position(i);
    let cj = predicted.position(j) - updated.position(j);
    Ok(j_times(&(ci - cj)))
}

/// Canonical propagation Jacobian assembled block by block.
///
/// `displacements[i] = p_i^pred(k) - p_i^upd(k-1)`. With all deltas zero this
/// equals `T(pred) F T(prev)^{-1}`; non-zero deltas reproduce `T_k` evaluated
/// at the updated mean instead.
pub fn canonical_propagation_jacobian(
    displacements: &[Vector3<f64>],
    deltas: &CorrectionDeltas,
) -> Result<DMatrix<f64>> {
    let layout = CanonicalLayout::new(displacements.len())?;
    if deltas.n() != layout.n() {
        return Err(Error::FleetSizeMismatch {
            expected: layout.n(),
            actual: deltas.n(),
        });
    }
    let mut f = DMatrix::identity(layout.dim(), layout.dim());
    let gy = layout.global_yaw();
    for r in 1..layout.n() {
        let row = layout.rel_pos(r);
        f.fixed_view_mut::<3, 1>(row, layout.rel_yaw(r))
            .copy_from(&(-j_times(&displacements[r])));
        f.fixed_view_mut::<3, 1>(row, gy)
            .copy_from(&deltas.get(0, r));
    }
    f.fixed_view_mut::<3, 1>(layout.global_pos(), gy)
        .copy_from(&j_times(&displacements[0]));
    Ok(f)
}

/// Canonical measurement Jacobian `Gamma [ ... ]` assembled block by block.
///
/// `estimate` is the predicted mean; the row of pair `(i, j)` carries
/// `Delta_ji` in the global-yaw column and zeros in the global-position columns.
pub fn canonical_measurement_jacobian(
    estimate: &FleetState,
    set: &MeasurementSet,
    deltas: &CorrectionDeltas,
) -> Result<DMatrix<f64>> {
    if set.is_empty() {
        return Err(Error::EmptyMeasurementSet);
    }
    canonical_h(estimate, set, deltas)
}

fn canonical_h(
    estimate: &FleetState,
    set: &MeasurementSet,
    deltas: &CorrectionDeltas,
) -> Result<DMatrix<f64>> {
    let layout = CanonicalLayout::new(estimate.n())?;
    if deltas.n() != layout.n() {
        return Err(Error::FleetSizeMismatch {
            expected: layout.n(),
            actual: deltas.n(),
        });
    }
    let mut h = DMatrix::zeros(3 * set.len(), layout.dim());
    let gy = layout.global_yaw();
    for (k, m) in set.items().iter().enumerate() {
        let (i, j) = (m.observer, m.target);
        estimate.check_index(i)?;
        estimate.check_index(j)?;
        if i == j {
            return Err(Error::SelfMeasurement(i));
        }
        let gamma = -rot_z(estimate.yaw(i)).transpose();
        let row = 3 * k;
        if i >= 1 {
            h.fixed_view_mut::<3, 3>(row, layout.rel_pos(i))
                .copy_from(&(-gamma));
            let lever = j_times(&(estimate.position(j) - estimate.position(i)));
            h.fixed_view_mut::<3, 1>(row, layout.rel_yaw(i))
                .copy_from(&(gamma * lever));
        }
        if j >= 1 {
            h.fixed_view_mut::<3, 3>(row, layout.rel_pos(j))
                .copy_from(&gamma);
        }
        h.fixed_view_mut::<3, 1>(row, gy)
            .copy_from(&(gamma * deltas.get(j, i)));
    }
    Ok(h)
}

/// Annihilated canonical Jacobians used by the KD filter.
#[derive(Debug, Clone, PartialEq)]
pub struct KdJacobians {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    /// `3m x 4n`; zero rows when the step has no measurements.
    pub h: DMatrix<f64>,
}

/// `F-bar`, `G-bar`, `H-bar` for a propagation from `prev` to `predicted`.
pub fn kd_jacobians(
    prev: &FleetState,
    predicted: &FleetState,
    set: &MeasurementSet,
    dt: f64,
) -> Result<KdJacobians> {
    if prev.n() != predicted.n() {
        return Err(Error::FleetSizeMismatch {
            expected: prev.n(),
            actual: predicted.n(),
        });
    }
    let n = prev.n();
    let displacements: Vec<Vector3<f64>> = (0..n)
        .map(|i| predicted.position(i) - prev.position(i))
        .collect();
    let zero = CorrectionDeltas::zero(n);
    let f = canonical_propagation_jacobian(&displacements, &zero)?;
    let (_, g_orig) = fleet_propagation_jacobians(prev, predicted, dt);
    let g = build_transform(predicted)? * g_orig;
    let h = canonical_h(predicted, set, &zero)?;
    Ok(KdJacobians { f, g, h })
}
