//! Rotation representations: matrices, unit quaternions, Z-Y-X Euler angles.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality tolerance for accepting a matrix as a rotation.
pub const ROTATION_TOL: f64 = 1e-6;

/// Unit quaternion with scalar part `w`, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    /// Normalizes the components and flips the sign so that `w >= 0`.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n == 0.0 {
            return Err(Error::arg("quaternion must have finite non-zero norm"));
        }
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(Self {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        })
    }

    pub fn dot(&self, other: &Quaternion) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn to_rotation(&self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = *self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    ortho <= tol && (r.determinant() - 1.0).abs() <= tol && r.iter().all(|v| v.is_finite())
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if is_rotation(r, ROTATION_TOL) {
        Ok(())
    } else {
        Err(Error::arg("matrix is not a rotation (R^T R != I or det != 1)"))
    }
}

/// Closest rotation in Frobenius norm (polar decomposition via SVD).
///
/// Returns `None` when the input is not finite.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        // Reflect across the direction of the smallest singular value.
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))?;
        let mut u2 = u;
        u2.column_mut(imin).neg_mut();
        r = u2 * v_t;
    }
    Some(r)
}

/// Shepperd's method; the result has `w >= 0`.
pub fn rotation_to_quaternion(r: &Matrix3<f64>) -> Result<Quaternion> {
    check_rotation(r)?;
    let trace = r.trace();
    let (w, x, y, z);
    if trace > r[(0, 0)] && trace > r[(1, 1)] && trace > r[(2, 2)] {
        let s = (1.0 + trace).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    Quaternion::new(w, x, y, z)
}

/// Intrinsic Z-Y-X angles `(yaw, pitch, roll)` with `R = Rz(yaw) Ry(pitch) Rx(roll)`.
///
/// Near gimbal lock (`|R31| > 1 - 1e-9`) roll is pinned to zero.
pub fn rotation_to_euler(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    check_rotation(r)?;
    Ok(euler_unchecked(r))
}

pub(crate) fn euler_unchecked(r: &Matrix3<f64>) -> Vector3<f64> {
    let r31 = r[(2, 0)];
    if r31.abs() > 1.0 - 1e-9 {
        let pitch = if r31 < 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        };
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        Vector3::new(yaw, pitch, 0.0)
    } else {
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        let pitch = (-r31).asin();
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        Vector3::new(yaw, pitch, roll)
    }
}

pub fn euler_to_rotation(e: &Vector3<f64>) -> Matrix3<f64> {
    let (sy, cy) = e.x.sin_cos();
    let (sp, cp) = e.y.sin_cos();
    let (sr, cr) = e.z.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Angle between two orientations, `arccos(2 (q1.q2)^2 - 1)`, in `[0, pi]`.
///
/// Evaluated as `4 atan2(|a - s b|, |a + s b|)` with `s = sign(a.b)`, which is
/// the same quantity without the `acos` cancellation near identical inputs.
pub fn quaternion_distance(a: &Quaternion, b: &Quaternion) -> f64 {
    let s = if a.dot(b) < 0.0 { -1.0 } else { 1.0 };
    let diff = ((a.w - s * b.w).powi(2)
        + (a.x - s * b.x).powi(2)
        + (a.y - s * b.y).powi(2)
        + (a.z - s * b.z).powi(2))
    .sqrt();
    let sum = ((a.w + s * b.w).powi(2)
        + (a.x + s * b.x).powi(2)
        + (a.y + s * b.y).powi(2)
        + (a.z + s * b.z).powi(2))
    .sqrt();
    (4.0 * diff.atan2(sum)).min(std::f64::consts::PI)
}
