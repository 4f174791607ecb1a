//! Numerical observability analysis: stacked observability matrices, SVD
//! null-space dimension, and comparison against the analytic unobservable
//! directions (global yaw plus 3D translation).

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::fleet::{j_times, FleetState, POSE_DIM};

/// Default sliding-window length (number of propagation steps).
pub const DEFAULT_WINDOW: usize = 5;
/// Default rank tolerance relative to the largest singular value.
pub const DEFAULT_TOL_RATIO: f64 = 1e-8;

/// `F_seq` holds `l` transition matrices, `H_seq` the `l + 1` measurement
/// Jacobians of the interval.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianWindow {
    pub f_seq: Vec<DMatrix<f64>>,
    pub h_seq: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NullspaceReport {
    pub dimension: usize,
    /// Orthonormal columns spanning the numerical null space.
    pub basis: DMatrix<f64>,
    /// `max |O N_expected|`, when an expected basis was supplied.
    pub residual: Option<f64>,
    /// Descending.
    pub singular_values: Vec<f64>,
}

/// `[H_k; H_{k+1} F_k; ...; H_{k+l} F_{k+l-1} ... F_k]`.
pub fn observability_matrix(window: &JacobianWindow) -> Result<DMatrix<f64>> {
    let Some(first) = window.h_seq.first() else {
        return Err(Error::EmptyMatrix);
    };
    if window.h_seq.len() != window.f_seq.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} measurement Jacobians for {} transitions",
            window.h_seq.len(),
            window.f_seq.len()
        )));
    }
    let d = first.ncols();
    for f in &window.f_seq {
        if f.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "transition is {:?}, expected {d}x{d}",
                f.shape()
            )));
        }
    }
    if let Some(h) = window.h_seq.iter().find(|h| h.ncols() != d) {
        return Err(Error::DimensionMismatch(format!(
            "measurement Jacobian has {} columns, expected {d}",
            h.ncols()
        )));
    }
    let rows: usize = window.h_seq.iter().map(|h| h.nrows()).sum();
    let mut o = DMatrix::zeros(rows, d);
    let mut phi = DMatrix::identity(d, d);
    let mut row = 0;
    for (k, h) in window.h_seq.iter().enumerate() {
        if k > 0 {
            phi = &window.f_seq[k - 1] * phi;
        }
        o.rows_mut(row, h.nrows()).copy_from(&(h * &phi));
        row += h.nrows();
    }
    Ok(o)
}

/// Counts singular values below `tol_ratio * sigma_max`.
pub fn nullspace_dim(o: &DMatrix<f64>, tol_ratio: f64) -> Result<NullspaceReport> {
    nullspace_report(o, tol_ratio, None)
}

/// As [`nullspace_dim`], also reporting `max |O N_expected|`.
pub fn nullspace_report(
    o: &DMatrix<f64>,
    tol_ratio: f64,
    expected: Option<&DMatrix<f64>>,
) -> Result<NullspaceReport> {
    if o.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    if !(tol_ratio > 0.0 && tol_ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance ratio {tol_ratio} outside (0, 1)"
        )));
    }
    let cols = o.ncols();
    // Pad to square so the SVD yields a complete right-singular basis.
    let padded = if o.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, o.nrows()).copy_from(o);
        p
    } else {
        o.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::Singular("svd"))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let null_idx: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| svd.singular_values[i] < tol_ratio * sigma_max || sigma_max == 0.0)
        .collect();
    let mut basis = DMatrix::zeros(cols, null_idx.len());
    for (c, &i) in null_idx.iter().enumerate() {
        basis.set_column(c, &v_t.row(i).transpose());
    }
    let residual = match expected {
        Some(n) if n.nrows() == cols => Some((o * n).amax()),
        Some(n) => {
            return Err(Error::DimensionMismatch(format!(
                "expected null space has {} rows, matrix has {cols} columns",
                n.nrows()
            )))
        }
        None => None,
    };
    Ok(NullspaceReport {
        dimension: null_idx.len(),
        basis,
        residual,
        singular_values,
    })
}

/// Analytic unobservable directions at `state`, `4n x 4`.
///
/// Column 0 is the global yaw direction (counterclockwise rotation of the
/// whole fleet about the origin); columns 1..4 are global translation.
pub fn expected_nullspace(state: &FleetState) -> DMatrix<f64> {
    let mut n = DMatrix::zeros(state.dim(), 4);
    for i in 0..state.n() {
        let b = POSE_DIM * i;
        n.fixed_view_mut::<3, 1>(b, 0)
            .copy_from(&j_times(state.position(i)));
        n[(b + 3, 0)] = 1.0;
        n.fixed_view_mut::<3, 3>(b, 1)
            .copy_from(&Matrix3::identity());
    }
    n
}

/// The unobservable directions in canonical coordinates: the last four unit
/// vectors.
pub fn canonical_nullspace(n: usize) -> DMatrix<f64> {
    let d = POSE_DIM * n;
    let mut m = DMatrix::zeros(d, 4);
    for k in 0..4 {
        m[(d - 4 + k, k)] = 1.0;
    }
    m
}

/// Coordinates in which a filter's Jacobians are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianFrame {
    Original,
    Canonical,
}

/// Jacobians one filter step actually used.
///
/// `f` propagates from step `step - 1` into `step`; `h` linearizes the
/// measurements of `step` (zero rows when none arrived); `mean` is the
/// linearization point of `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationRecord {
    pub step: u64,
    pub f: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub mean: FleetState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowReport {
    pub start_step: u64,
    pub report: NullspaceReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub windows: Vec<WindowReport>,
    /// First window start whose null-space dimension is below four.
    pub first_drop: Option<u64>,
}

/// Sliding-window null-space audit of a logged filter run.
///
/// A window starting at record `s` stacks `H_s, H_{s+1} F_s, ...` over
/// `window + 1` records; windows whose stacked matrix has no rows are skipped.
pub fn audit_filter_run(
    records: &[LinearizationRecord],
    frame: JacobianFrame,
    window: usize,
    tol_ratio: f64,
) -> Result<AuditReport> {
    let mut windows = Vec::new();
    if records.len() > window {
        for s in 0..records.len() - window {
            let slice = &records[s..=s + window];
            let w = JacobianWindow {
                f_seq: slice[1..].iter().map(|r| r.f.clone()).collect(),
                h_seq: slice.iter().map(|r| r.h.clone()).collect(),
            };
            let o = observability_matrix(&w)?;
            if o.nrows() == 0 {
                continue;
            }
            let expected = match frame {
                JacobianFrame::Original => expected_nullspace(&slice[0].mean),
                JacobianFrame::Canonical => canonical_nullspace(slice[0].mean.n()),
            };
            let report = nullspace_report(&o, tol_ratio, Some(&expected))?;
            windows.push(WindowReport {
                start_step: slice[0].step,
                report,
            });
        }
    }
    let first_drop = windows
        .iter()
        .find(|w| w.report.dimension < 4)
        .map(|w| w.start_step);
    Ok(AuditReport {
        windows,
        first_drop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{rot_z_raw, RobotPose};
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn fleet(raw: &[[f64; 4]]) -> FleetState {
        FleetState::new(
            raw.iter()
                .map(|r| RobotPose::from_xyz_yaw(r[0], r[1], r[2], r[3]).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn matrix_shapes() {
        let h = DMatrix::from_fn(3, 8, |r, c| (r + 2 * c) as f64);
        let w = JacobianWindow { f_seq: vec![], h_seq: vec![h.clone()] };
        assert_eq!(observability_matrix(&w).unwrap(), h);

        let h2 = DMatrix::from_fn(6, 8, |r, c| (r * c) as f64 - 3.0);
        let w = JacobianWindow {
            f_seq: vec![DMatrix::identity(8, 8)],
            h_seq: vec![h.clone(), h2.clone()],
        };
        let o = observability_matrix(&w).unwrap();
        assert_eq!(o.nrows(), 9);
        assert_eq!(o.rows(0, 3), h);
        assert_eq!(o.rows(3, 6), h2);

        let bad = JacobianWindow { f_seq: vec![DMatrix::identity(7, 7)], h_seq: vec![h.clone(), h] };
        assert!(observability_matrix(&bad).is_err());
        assert!(observability_matrix(&JacobianWindow { f_seq: vec![], h_seq: vec![] }).is_err());
    }

    #[test]
    fn nullspace_examples() {
        assert_eq!(nullspace_dim(&DMatrix::zeros(3, 8), 1e-8).unwrap().dimension, 8);
        assert_eq!(nullspace_dim(&DMatrix::identity(8, 8), 1e-8).unwrap().dimension, 0);
        assert!(nullspace_dim(&DMatrix::zeros(0, 0), 1e-8).is_err());

        let mut m = DMatrix::zeros(2, 4);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = 2.0;
        let r = nullspace_dim(&m, 1e-8).unwrap();
        assert_eq!(r.dimension, 2);
        assert!((&m * &r.basis).amax() < 1e-12);
        assert_eq!(r.singular_values[0], 2.0);
    }

    #[test]
    fn expected_nullspace_structure() {
        let zero = fleet(&[[0.0; 4], [0.0; 4]]);
        let n = expected_nullspace(&zero);
        assert_eq!(n.column(0).iter().copied().collect::<Vec<_>>(), vec![0., 0., 0., 1., 0., 0., 0., 1.]);
        for i in 0..2 {
            assert_eq!(n.view((4 * i, 1), (3, 3)), Matrix3::identity());
            assert!(n.view((4 * i + 3, 1), (1, 3)).iter().all(|v| *v == 0.0));
        }
        let x = fleet(&[[1.0, 2.0, 3.0, 0.3], [-4.0, 0.5, 2.0, 1.0]]);
        let nx = expected_nullspace(&x);
        assert_eq!(nullspace_dim(&nx.transpose(), 1e-8).unwrap().dimension, 4);
        assert_eq!(nx.columns(1, 3), n.columns(1, 3));
    }

    proptest! {
        #[test]
        fn yaw_column_is_rotation_orbit_derivative(
            coords in proptest::collection::vec(-20.0f64..20.0, 12)
        ) {
            let raw: Vec<[f64; 4]> = coords.chunks(4).map(|c| [c[0], c[1], c[2], c[3] / 10.0]).collect();
            let x = fleet(&raw);
            let h = 1e-6;
            let orbit = |theta: f64| -> DVector<f64> {
                let c = rot_z_raw(theta);
                let mut v = x.to_vector();
                for i in 0..x.n() {
                    let p = c * x.position(i);
                    v.fixed_rows_mut::<3>(4 * i).copy_from(&p);
                    v[4 * i + 3] += theta;
                }
                v
            };
            let fd = (orbit(h) - orbit(-h)) / (2.0 * h);
            let n = expected_nullspace(&x);
            prop_assert!((fd - n.column(0)).amax() < 1e-7);
        }

        #[test]
        fn rank_invariant_under_left_orthogonal_factor(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut gen = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
            // 10x8 of rank 5
            let a = gen(10, 5);
            let b = gen(5, 8);
            let o = &a * &b;
            let base = nullspace_dim(&o, 1e-8).unwrap().dimension;
            let q = gen(10, 10).qr().q();
            prop_assert_eq!(nullspace_dim(&(&q * &o), 1e-8).unwrap().dimension, base);
            let mut perm = o.clone();
            perm.swap_rows(0, 9);
            perm.swap_rows(2, 5);
            prop_assert_eq!(nullspace_dim(&perm, 1e-8).unwrap().dimension, base);
            prop_assert_eq!(base, 3);
        }
    }
}
