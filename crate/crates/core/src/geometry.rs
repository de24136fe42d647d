//! Rotation and unit-vector primitives shared by all other modules.
//!
//! Conventions used throughout the crate:
//! - rotations are world-to-camera, `x_cam = R * (x_world - c)`;
//! - quaternions are kept unit-norm and serialized in `w, x, y, z` order.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("cannot normalize a near-zero vector (norm = {0:.3e})")]
    ZeroVector(f64),
}

/// A direction in 3-space with unit Euclidean norm, normalized on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector(Vector3<f64>);

impl UnitVector {
    pub fn new(v: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = v.norm();
        if n < 1e-12 {
            return Err(GeometryError::ZeroVector(n));
        }
        Ok(Self(v / n))
    }

    pub fn from_components(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        Self::new(Vector3::new(x, y, z))
    }

    /// Unit basis vectors.
    pub fn x_axis() -> Self {
        Self(Vector3::x())
    }
    pub fn y_axis() -> Self {
        Self(Vector3::y())
    }
    pub fn z_axis() -> Self {
        Self(Vector3::z())
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Vector3<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn cross(&self, other: &UnitVector) -> Vector3<f64> {
        self.0.cross(&other.0)
    }
}

impl std::ops::Neg for UnitVector {
    type Output = UnitVector;
    fn neg(self) -> UnitVector {
        UnitVector(-self.0)
    }
}

/// Angle between two unit directions, in degrees, in `[0, 180]`.
pub fn angle_between_deg(u: &UnitVector, v: &UnitVector) -> f64 {
    u.dot(v).clamp(-1.0, 1.0).acos().to_degrees()
}

/// An element of SO(3), stored as a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    /// Build from quaternion components in `w, x, y, z` order. The quaternion
    /// is normalized; near-zero input is rejected.
    pub fn from_quaternion_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if n < 1e-12 {
            return Err(GeometryError::ZeroVector(n));
        }
        Ok(Self(UnitQuaternion::from_quaternion(q)))
    }

    /// Quaternion components in `w, x, y, z` order (the serialization order).
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn from_axis_angle(axis: &UnitVector, angle_rad: f64) -> Self {
        Self(UnitQuaternion::from_axis_angle(
            &Unit::new_unchecked(*axis.as_vector()),
            angle_rad,
        ))
    }

    /// Build from an (assumed orthonormal, det +1) rotation matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self(UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(*m),
        ))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn rotate_unit(&self, u: &UnitVector) -> UnitVector {
        // rotating a unit vector by a unit quaternion stays unit to machine
        // precision; renormalize anyway to hold the 1e-12 invariant
        UnitVector::new(self.0 * u.as_vector()).expect("rotation preserves norm")
    }

    /// Rotation vector (axis scaled by angle in radians); the log map.
    pub fn scaled_axis(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    /// Exponential map from a rotation vector.
    pub fn from_scaled_axis(v: &Vector3<f64>) -> Self {
        Self(UnitQuaternion::from_scaled_axis(*v))
    }

    pub fn angle_rad(&self) -> f64 {
        self.0.angle()
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        // renormalize after composition so long chains keep the unit invariant
        let q = self.0.into_inner() * rhs.0.into_inner();
        Rotation(UnitQuaternion::from_quaternion(q))
    }
}

/// Minimal-angle rotation taking `u` to `v` (`R u = v`).
///
/// For antipodal inputs the axis is the coordinate axis most orthogonal to
/// `u` (ties broken in x, y, z order), projected to be exactly perpendicular,
/// and the angle is 180 degrees.
pub fn rotation_between(u: &UnitVector, v: &UnitVector) -> Rotation {
    let d = u.dot(v);
    if d < -1.0 + 1e-9 {
        let axis = fallback_axis(u);
        return Rotation::from_axis_angle(&axis, std::f64::consts::PI);
    }
    let c = u.cross(v);
    let n = c.norm();
    if n < 1e-15 {
        return Rotation::identity();
    }
    let axis = UnitVector::new(c / n).expect("nonzero cross product");
    Rotation::from_axis_angle(&axis, n.atan2(d))
}

fn fallback_axis(u: &UnitVector) -> UnitVector {
    let candidates = [Vector3::x(), Vector3::y(), Vector3::z()];
    let mut best = candidates[0];
    let mut best_dot = f64::INFINITY;
    for e in candidates {
        let a = e.dot(u.as_vector()).abs();
        if a < best_dot {
            best_dot = a;
            best = e;
        }
    }
    let perp = best - u.as_vector() * best.dot(u.as_vector());
    UnitVector::new(perp).expect("fallback axis is never parallel to u")
}

/// Geodesic distance between two rotations, in degrees, in `[0, 180]`.
///
/// Measured on the relative rotation `Ra * Rb^T` through its quaternion with
/// `2 atan2(|vec|, |w|)`, which stays accurate near 0 and 180 degrees where
/// the acos forms lose half the digits. The direct `2 acos(|q_a . q_b|)`
/// form is kept as an independent test oracle.
pub fn geodesic_angle(ra: &Rotation, rb: &Rotation) -> f64 {
    let rel = (*ra * rb.inverse()).quaternion_wxyz();
    let vec_norm = (rel[1] * rel[1] + rel[2] * rel[2] + rel[3] * rel[3]).sqrt();
    (2.0 * vec_norm.atan2(rel[0].abs())).to_degrees()
}
