//! Quaternion and pose algebra: composition, inversion, the error-state
//! minus operator, retraction for optimizer updates, and the Mahalanobis
//! norm used to weight residuals.
//!
//! Conventions, fixed once here and relied on everywhere else:
//! - Hamilton quaternions, scalar-first storage `(w, x, y, z)`.
//! - Double cover canonicalized to `w >= 0` on construction, so the
//!   rotation angle of any [`UnitQuat`] lies in `[0, pi]`.
//! - Orientation updates are local perturbations on the right
//!   (`q * exp(delta)`); translation updates are additive in the world
//!   frame. This keeps position-measurement Jacobians identity blocks.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: residual {residual}, covariance {covariance}x{covariance}")]
    DimensionMismatch { residual: usize, covariance: usize },
}

/// Unit quaternion, Hamilton convention, scalar first, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuat {
    pub fn identity() -> Self {
        UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Normalizes and canonicalizes the sign so `w >= 0`.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        assert!(n > 0.0, "cannot normalize a zero quaternion");
        let s = if w < 0.0 { -1.0 / n } else { 1.0 / n };
        UnitQuat { w: w * s, x: x * s, y: y * s, z: z * s }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        assert!(n > 0.0, "axis must be nonzero");
        Self::exp(&(axis * (angle / n)))
    }

    /// Exponential map: rotation vector (axis * angle, radians) to quaternion.
    pub fn exp(rotvec: &Vector3<f64>) -> Self {
        let theta = rotvec.norm();
        if theta < 1e-12 {
            let half = rotvec * 0.5;
            Self::new(1.0, half.x, half.y, half.z)
        } else {
            let half = 0.5 * theta;
            let k = half.sin() / theta;
            Self::new(half.cos(), rotvec.x * k, rotvec.y * k, rotvec.z * k)
        }
    }

    /// Logarithm map: rotation vector with norm <= pi.
    ///
    /// At the angle-pi singularity (w == 0) the axis sign is ambiguous; we
    /// pick the sign that makes the largest-magnitude component positive.
    pub fn log(&self) -> Vector3<f64> {
        let v = Vector3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s < 1e-12 {
            return v * 2.0; // w ~ 1
        }
        if self.w < 1e-14 {
            // angle pi: deterministic axis sign
            let mut axis = v / s;
            let mut k = 0;
            for i in 1..3 {
                if axis[i].abs() > axis[k].abs() {
                    k = i;
                }
            }
            if axis[k] < 0.0 {
                axis = -axis;
            }
            let angle = 2.0 * s.atan2(self.w);
            return axis * angle;
        }
        let angle = 2.0 * s.atan2(self.w);
        v * (angle / s)
    }

    /// Hamilton product `self * rhs`.
    pub fn compose(&self, rhs: &UnitQuat) -> UnitQuat {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        UnitQuat::new(
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        )
    }

    pub fn inverse(&self) -> UnitQuat {
        // conjugate; already unit, and w is nonnegative already
        UnitQuat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Rotates a vector: `q v q^-1`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let qv = Vector3::new(self.x, self.y, self.z);
        let t = 2.0 * qv.cross(v);
        v + self.w * t + qv.cross(&t)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
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

    /// Shepperd's method; input must be a proper rotation (det +1).
    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> UnitQuat {
        let tr = m.trace();
        if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            UnitQuat::new(
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            )
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            UnitQuat::new(
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            )
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            UnitQuat::new(
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            )
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            UnitQuat::new(
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            )
        }
    }

    pub fn dot(&self, other: &UnitQuat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Geodesic angle to another rotation, `2 acos(|<a, b>|)`.
    pub fn angle_to(&self, other: &UnitQuat) -> f64 {
        2.0 * self.dot(other).abs().min(1.0).acos()
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    /// Heading: rotation of the body x axis about world z, in radians.
    pub fn yaw(&self) -> f64 {
        let fwd = self.rotate(&Vector3::x());
        fwd.y.atan2(fwd.x)
    }
}

/// World-frame position plus orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuat,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { position: Vector3::zeros(), orientation: UnitQuat::identity() }
    }

    pub fn new(position: Vector3<f64>, orientation: UnitQuat) -> Self {
        Pose { position, orientation }
    }

    /// Rigid composition `self * rhs` (apply `rhs` in `self`'s frame).
    pub fn compose(&self, rhs: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation.rotate(&rhs.position),
            orientation: self.orientation.compose(&rhs.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let qi = self.orientation.inverse();
        Pose { position: -qi.rotate(&self.position), orientation: qi }
    }

    /// Applies this pose as a rigid transform to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.orientation.rotate(p) + self.position
    }
}

/// Minimal 6-dof increment: world-frame translation, body-frame rotation vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent6 {
    pub translation: Vector3<f64>,
    pub rotation: Vector3<f64>,
}

impl Tangent6 {
    pub fn zero() -> Self {
        Tangent6 { translation: Vector3::zeros(), rotation: Vector3::zeros() }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Tangent6 {
            translation: Vector3::new(v[0], v[1], v[2]),
            rotation: Vector3::new(v[3], v[4], v[5]),
        }
    }
}

/// Error-state minus: rotation-vector logarithm of `b^-1 * a`, norm <= pi.
pub fn quat_boxminus(a: &UnitQuat, b: &UnitQuat) -> Vector3<f64> {
    b.inverse().compose(a).log()
}

/// Optimizer retraction: additive world translation, right-multiplied rotation.
pub fn pose_boxplus(x: &Pose, d: &Tangent6) -> Pose {
    Pose {
        position: x.position + d.translation,
        orientation: x.orientation.compose(&UnitQuat::exp(&d.rotation)),
    }
}

/// Pose of `b` expressed in `a`'s frame: `(q_a^-1 (p_b - p_a), q_a^-1 * q_b)`.
pub fn relative_pose(a: &Pose, b: &Pose) -> Pose {
    let qi = a.orientation.inverse();
    Pose {
        position: qi.rotate(&(b.position - a.position)),
        orientation: qi.compose(&b.orientation),
    }
}

/// Squared Mahalanobis norm `r^T Omega^-1 r`.
///
/// Fails on a non-SPD covariance; no silent regularization.
pub fn mahalanobis_sq(r: &DVector<f64>, omega: &DMatrix<f64>) -> Result<f64, ManifoldError> {
    if omega.nrows() != omega.ncols() || omega.nrows() != r.len() {
        return Err(ManifoldError::DimensionMismatch {
            residual: r.len(),
            covariance: omega.nrows(),
        });
    }
    let chol = omega
        .clone()
        .cholesky()
        .ok_or(ManifoldError::NotPositiveDefinite)?;
    let solved = chol.solve(r);
    Ok(r.dot(&solved))
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
