//! Alignment of estimated camera centers to ground truth with a closed-form
//! similarity transform, plus the reported error statistics.
//!
//! The solve fixes only centroid, scale and sign by convention, so comparing
//! against ground truth requires removing a full similarity first.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{geodesic_angle, rotation_between, Rotation, UnitVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvaluateError {
    #[error("alignment needs at least 3 corresponding points, got {0}")]
    TooFewPoints(usize),
    #[error("point lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// A fitted similarity `x -> scale * R * x + t` with per-camera errors after
/// applying it.
#[derive(Debug, Clone)]
pub struct AlignmentResult {
    pub scale: f64,
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub per_camera_error: Vec<f64>,
    pub median_error: f64,
    pub mean_error: f64,
    /// True when the point sets were (near-)collinear and the free rotation
    /// about the common axis was resolved to the minimal-angle choice.
    pub degenerate: bool,
}

/// Flat error summary; `median` of an even count is the mean of the two
/// middle values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    pub count: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub fn error_stats(result: &AlignmentResult) -> ErrorStats {
    let errors = &result.per_camera_error;
    ErrorStats {
        median: median(errors),
        mean: errors.iter().sum::<f64>() / errors.len() as f64,
        max: errors.iter().cloned().fold(0.0, f64::max),
        count: errors.len(),
    }
}

/// Largest pairwise distance; the scene diameter when fed camera centers.
pub fn max_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max((p - q).norm());
        }
    }
    best
}

/// Among `Rot(axis, phi) * r0`, pick the rotation with the smallest angle.
/// Closed form via the quaternion w component.
fn minimal_angle_about_axis(r0: &Rotation, axis: &UnitVector) -> Rotation {
    let [w0, x, y, z] = r0.quaternion_wxyz();
    let d = axis.as_vector().dot(&Vector3::new(x, y, z));
    let half = (-d).atan2(w0);
    Rotation::from_axis_angle(axis, 2.0 * half) * *r0
}

/// Closed-form least-squares similarity minimizing
/// `sum_i || s R est_i + t - gt_i ||^2`, with the collinear-degenerate free
/// axis resolved to the minimal-angle rotation.
pub fn similarity_align(
    est: &[Vector3<f64>],
    gt: &[Vector3<f64>],
) -> Result<AlignmentResult, EvaluateError> {
    if est.len() != gt.len() {
        return Err(EvaluateError::LengthMismatch(est.len(), gt.len()));
    }
    let n = est.len();
    if n < 3 {
        return Err(EvaluateError::TooFewPoints(n));
    }
    let nf = n as f64;

    let mu_e: Vector3<f64> = est.iter().sum::<Vector3<f64>>() / nf;
    let mu_g: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / nf;

    // cross covariance of gt against est, and est variance
    let mut sigma = Matrix3::<f64>::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.iter().zip(gt.iter()) {
        let de = e - mu_e;
        let dg = g - mu_g;
        sigma += dg * de.transpose() / nf;
        var_e += de.norm_squared() / nf;
    }

    let svd = sigma.svd(true, true);
    let u = svd.u.expect("3x3 svd computes u");
    let v_t = svd.v_t.expect("3x3 svd computes v_t");
    let d = svd.singular_values;

    let mut degenerate = false;
    let (rotation, trace_ds) = if d[0] <= 1e-12 * var_e.max(1e-300) {
        // coincident point sets: nothing constrains the rotation
        degenerate = true;
        (Rotation::identity(), 0.0)
    } else if d[1] <= 1e-9 * d[0] {
        // both sets collinear: map the est line direction onto the gt line
        // direction, then take the minimal-angle member of the free family
        degenerate = true;
        let axis_gt = UnitVector::new(u.column(0).into_owned()).expect("unit singular vector");
        let axis_est = UnitVector::new(v_t.row(0).transpose()).expect("unit singular vector");
        let base = rotation_between(&axis_est, &axis_gt);
        (minimal_angle_about_axis(&base, &axis_gt), d[0])
    } else {
        let mut s = Vector3::new(1.0, 1.0, 1.0);
        if (u * v_t).determinant() < 0.0 {
            s[2] = -1.0;
        }
        let r = u * Matrix3::from_diagonal(&s) * v_t;
        (Rotation::from_matrix(&r), d.dot(&s))
    };

    let scale = if var_e > 1e-300 && trace_ds > 0.0 {
        trace_ds / var_e
    } else {
        1.0
    };
    let translation = mu_g - rotation.rotate(&mu_e) * scale;

    let per_camera_error: Vec<f64> = est
        .iter()
        .zip(gt.iter())
        .map(|(e, g)| (rotation.rotate(e) * scale + translation - g).norm())
        .collect();

    let mean_error = per_camera_error.iter().sum::<f64>() / nf;
    let median_error = median(&per_camera_error);

    Ok(AlignmentResult {
        scale,
        rotation,
        translation,
        per_camera_error,
        median_error,
        mean_error,
        degenerate,
    })
}

/// Rotation angle of the fitted alignment, degrees.
pub fn alignment_rotation_angle_deg(result: &AlignmentResult) -> f64 {
    geodesic_angle(&result.rotation, &Rotation::identity())
}
