//! Trajectory and depth accuracy against ground truth.
//!
//! Monocular odometry recovers the scene only up to a similarity, so
//! estimates are aligned to ground truth with a least-squares similarity
//! (Umeyama) before errors are measured.

use densesplat_core::odometry::{PointStatus, TrackedPoint};
use densesplat_core::Se3Pose;
use nalgebra::{Matrix3, Vector3};

use crate::{Error, Result};

/// `x ↦ s·R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Least-squares similarity taking `from` onto `to`.
pub fn umeyama(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Result<Similarity> {
    if from.len() != to.len() || from.len() < 2 {
        return Err(Error::Config("alignment needs two equally long point lists of length >= 2".into()));
    }
    let n = from.len() as f64;
    let mu_f = from.iter().sum::<Vector3<f64>>() / n;
    let mu_t = to.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_f = 0.0;
    for (f, t) in from.iter().zip(to) {
        let (df, dt) = (f - mu_f, t - mu_t);
        cov += dt * df.transpose();
        var_f += df.norm_squared();
    }
    cov /= n;
    var_f /= n;
    if !(var_f > 0.0) {
        return Err(Error::Config("cannot align a degenerate trajectory".into()));
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.expect("computed"), svd.v_t.expect("computed"));
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let d = svd.singular_values;
    let trace = d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)];
    let scale = trace / var_f;
    let translation = mu_t - rotation * mu_f * scale;
    Ok(Similarity { scale, rotation, translation })
}

/// Total length of the camera-centre polyline.
pub fn path_length(poses: &[Se3Pose]) -> f64 {
    poses.windows(2).map(|w| (w[1].center() - w[0].center()).norm()).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryError {
    /// RMS of aligned camera-centre errors.
    pub ate_rmse: f64,
    pub path_length: f64,
    pub alignment: Similarity,
}

impl TrajectoryError {
    pub fn relative(&self) -> f64 {
        self.ate_rmse / self.path_length
    }
}

/// Absolute trajectory error after similarity alignment of the estimate.
pub fn trajectory_error(estimate: &[Se3Pose], truth: &[Se3Pose]) -> Result<TrajectoryError> {
    let e: Vec<_> = estimate.iter().map(|p| p.center()).collect();
    let g: Vec<_> = truth.iter().map(|p| p.center()).collect();
    let alignment = umeyama(&e, &g)?;
    let sq: f64 = e.iter().zip(&g).map(|(a, b)| (alignment.apply(a) - b).norm_squared()).sum();
    Ok(TrajectoryError {
        ate_rmse: (sq / e.len() as f64).sqrt(),
        path_length: path_length(truth),
        alignment,
    })
}

/// Fraction of points with `status` whose scaled depth is within `tolerance`
/// (relative) of the ground-truth depth at their host pixel.
pub fn depth_accuracy(
    points: &[TrackedPoint],
    status: PointStatus,
    scale: f64,
    depth_of: impl Fn(usize, f64, f64) -> Option<f64>,
    tolerance: f64,
) -> (usize, usize) {
    let mut good = 0;
    let mut total = 0;
    for p in points.iter().filter(|p| p.status == status) {
        let Some(gt) = depth_of(p.host, p.u, p.v) else { continue };
        total += 1;
        let est = scale / p.inverse_depth;
        if ((est - gt) / gt).abs() <= tolerance {
            good += 1;
        }
    }
    (good, total)
}
