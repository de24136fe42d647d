//! Per-(track, camera-pair) triangle machinery: baseline direction,
//! middle-point ratios, the rotation trick, and the coefficient matrices
//! that make a triangulated point linear in the two camera centers.
//!
//! All quantities are evaluated directly in the world frame: global rays are
//! `m = R^T * bearing` and the baseline direction is `c_ij = -R_j^T * t_ij`.
//! Ray lengths are per-unit-baseline ratios, so coefficients are invariant to
//! the (unknown) baseline scale.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{rotation_between, Rotation, UnitVector};

/// Minimum triangulation angle accepted for a (track, pair) triangle. Bounds
/// the conditioning of the middle-point ratio solve.
pub const MIN_TRIANGULATION_ANGLE_DEG: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PairwiseError {
    #[error("observation rays are near-parallel (|m_i x m_j| = {0:.3e})")]
    DegenerateRays(f64),
    #[error("middle-point solution has non-positive ray length (s_i = {0:.3e}, s_j = {1:.3e})")]
    NegativeDepth(f64, f64),
}

/// One camera's view of a scene point: the bearing is the unit direction
/// toward the point, expressed in that camera's own frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera_id: usize,
    pub bearing: UnitVector,
}

impl Observation {
    pub fn new(camera_id: usize, bearing: UnitVector) -> Self {
        Self { camera_id, bearing }
    }
}

/// The known coefficient matrices of one (track, camera-pair) triangle.
///
/// `a_i = s_i * R(theta_i)` and `a_j = s_j * R(theta_j)` where each `R(theta)`
/// rotates the baseline direction onto a view ray and `s_i, s_j` are the
/// per-unit-baseline ray lengths, so `a_i * c_ij = s_i * m_i` and
/// `-a_j * c_ij = s_j * m_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleCoefficients {
    pub cam_i: usize,
    pub cam_j: usize,
    pub a_i: Matrix3<f64>,
    pub a_j: Matrix3<f64>,
    /// Unit direction from `c_i` toward `c_j` in world coordinates.
    pub c_ij: UnitVector,
    pub s_i: f64,
    pub s_j: f64,
}

/// World-frame unit direction from `c_i` toward `c_j`, recovered from the
/// pairwise translation direction: `c_ij = -R_j^T * t_ij`.
pub fn baseline_direction(r_j: &Rotation, t_ij: &UnitVector) -> UnitVector {
    let v = -(r_j.inverse().rotate(t_ij.as_vector()));
    UnitVector::new(v).expect("rotation preserves unit norm")
}

/// Solve the per-unit-baseline ray lengths `(s_i, s_j)` of the middle-point
/// construction, in the frame where `c_i` is the origin and `c_j = c_ij`.
///
/// The defining condition is that `(s_i m_i - c_ij - s_j m_j)` is parallel to
/// the common perpendicular `m_i x m_j`; the three dependent scalar equations
/// are solved as a rank-2 least-squares problem.
pub fn middle_point_ratios(
    c_ij: &UnitVector,
    m_i: &UnitVector,
    m_j: &UnitVector,
) -> Result<(f64, f64), PairwiseError> {
    let n = m_i.cross(m_j);
    let nn = n.norm();
    if nn < MIN_TRIANGULATION_ANGLE_DEG.to_radians().sin() {
        return Err(PairwiseError::DegenerateRays(nn));
    }

    // s_i (m_i x n) - s_j (m_j x n) = c_ij x n, solved by normal equations
    let col_i = m_i.as_vector().cross(&n);
    let col_j = -m_j.as_vector().cross(&n);
    let rhs = c_ij.as_vector().cross(&n);

    let g11 = col_i.dot(&col_i);
    let g12 = col_i.dot(&col_j);
    let g22 = col_j.dot(&col_j);
    let b1 = col_i.dot(&rhs);
    let b2 = col_j.dot(&rhs);
    let det = g11 * g22 - g12 * g12;

    let s_i = (g22 * b1 - g12 * b2) / det;
    let s_j = (g11 * b2 - g12 * b1) / det;
    if s_i <= 0.0 || s_j <= 0.0 {
        return Err(PairwiseError::NegativeDepth(s_i, s_j));
    }
    Ok((s_i, s_j))
}

/// Build the triangle coefficients for one track observed in two cameras with
/// a known relative geometry.
pub fn triangle_coefficients(
    r_i: &Rotation,
    r_j: &Rotation,
    t_ij: &UnitVector,
    obs_i: &Observation,
    obs_j: &Observation,
) -> Result<TriangleCoefficients, PairwiseError> {
    let m_i = r_i.inverse().rotate_unit(&obs_i.bearing);
    let m_j = r_j.inverse().rotate_unit(&obs_j.bearing);
    let c_ij = baseline_direction(r_j, t_ij);

    let (s_i, s_j) = middle_point_ratios(&c_ij, &m_i, &m_j)?;

    let rot_i = rotation_between(&c_ij, &m_i);
    let rot_j = rotation_between(&(-c_ij), &m_j);

    Ok(TriangleCoefficients {
        cam_i: obs_i.camera_id,
        cam_j: obs_j.camera_id,
        a_i: rot_i.matrix() * s_i,
        a_j: rot_j.matrix() * s_j,
        c_ij,
        s_i,
        s_j,
    })
}

/// Evaluate the triangle's scene point from the two camera centers:
/// the midpoint of the common perpendicular segment of the two view rays,
/// `p = ((a_j - a_i)(c_i - c_j) + c_i + c_j) / 2`.
pub fn triangle_point(
    tc: &TriangleCoefficients,
    c_i: &Vector3<f64>,
    c_j: &Vector3<f64>,
) -> Vector3<f64> {
    0.5 * ((tc.a_j - tc.a_i) * (c_i - c_j) + c_i + c_j)
}
