//! Rigid transforms and the pinhole camera model.

use core::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};

use crate::math;
use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tangent vector of SE(3): translational part first, rotational part (radians) last.
pub type Twist = Vector6<f64>;

const SMALL_ANGLE: f64 = 1e-8;

/// Rigid transform. Used as camera-to-world throughout the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Se3Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Default for Se3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Pose {
    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vec3::zeros() }
    }

    /// Builds a pose from a (not necessarily normalised) quaternion `w, x, y, z`.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64, translation: Vec3) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !(n.is_finite() && n > 0.0) || !translation.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("pose components must be finite with a non-zero quaternion"));
        }
        Ok(Self { rotation: UnitQuaternion::new_unchecked(q / n), translation })
    }

    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
        let mut q = UnitQuaternion::from_rotation_matrix(&rot);
        q.renormalize();
        Self { rotation: q, translation }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Quaternion components as `[w, x, y, z]`.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.transform_vector(p) + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation.transform_vector(v)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Se3Pose) -> Se3Pose {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        Se3Pose { rotation, translation: self.rotation.transform_vector(&other.translation) + self.translation }
    }

    pub fn inverse(&self) -> Se3Pose {
        let rotation = self.rotation.inverse();
        Se3Pose { rotation, translation: -rotation.transform_vector(&self.translation) }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        let v = math::sqrt(q.i * q.i + q.j * q.j + q.k * q.k);
        2.0 * math::atan2(v, q.w.abs())
    }

    /// Camera centre in world coordinates when the pose is camera-to-world.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// Logarithm map, inverse of [`se3_exp`].
    pub fn log(&self) -> Twist {
        let q = self.rotation.quaternion();
        let (w, vec) = if q.w < 0.0 { (-q.w, -q.vector()) } else { (q.w, q.vector().into_owned()) };
        let s = vec.norm();
        let theta = 2.0 * math::atan2(s, w);
        let omega = if s < 1e-300 { Vec3::zeros() } else { vec * (theta / s) };
        let wx = skew(&omega);
        let v_inv = if theta < SMALL_ANGLE {
            Matrix3::identity() - wx * 0.5 + wx * wx / 12.0
        } else {
            let coef = (1.0 - theta * math::sin(theta) / (2.0 * (1.0 - math::cos(theta)))) / (theta * theta);
            Matrix3::identity() - wx * 0.5 + wx * wx * coef
        };
        let v = v_inv * self.translation;
        Twist::new(v.x, v.y, v.z, omega.x, omega.y, omega.z)
    }
}

impl Mul for Se3Pose {
    type Output = Se3Pose;

    fn mul(self, rhs: Se3Pose) -> Se3Pose {
        self.compose(&rhs)
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map of a twist `(v, ω)`.
pub fn se3_exp(twist: &Twist) -> Result<Se3Pose> {
    if !twist.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid("twist components must be finite"));
    }
    let v = Vec3::new(twist[0], twist[1], twist[2]);
    let omega = Vec3::new(twist[3], twist[4], twist[5]);
    let theta_sq = omega.norm_squared();
    let theta = math::sqrt(theta_sq);
    let wx = skew(&omega);

    let (q, vmat) = if theta < SMALL_ANGLE {
        let q = Quaternion::new(1.0, 0.5 * omega.x, 0.5 * omega.y, 0.5 * omega.z);
        (q, Matrix3::identity() + wx * 0.5 + wx * wx / 6.0)
    } else {
        let half = 0.5 * theta;
        let s = math::sin(half) / theta;
        let q = Quaternion::new(math::cos(half), s * omega.x, s * omega.y, s * omega.z);
        let a = (1.0 - math::cos(theta)) / theta_sq;
        let b = (theta - math::sin(theta)) / (theta_sq * theta);
        (q, Matrix3::identity() + wx * a + wx * wx * b)
    };
    let n = q.norm();
    Ok(Se3Pose { rotation: UnitQuaternion::new_unchecked(q / n), translation: vmat * v })
}

/// Ideal pinhole camera. Pixel centres sit on integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive and finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera dimensions must be positive"));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 || self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        Ok(())
    }

    /// Camera for pyramid level `level` (each level halves the resolution).
    pub fn at_level(&self, level: usize) -> PinholeCamera {
        let s = (1usize << level) as f64;
        PinholeCamera {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx + 0.5) / s - 0.5,
            cy: (self.cy + 0.5) / s - 0.5,
            width: self.width >> level,
            height: self.height >> level,
        }
    }

    /// Normalised viewing ray `((u-cx)/fx, (v-cy)/fy, 1)`.
    pub fn ray(&self, u: f64, v: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a camera-frame point.
pub fn project(point: &Vec3, camera: &PinholeCamera) -> Result<Projection> {
    if !(point.z > 1e-9) {
        return Err(Error::BehindCamera { depth: point.z });
    }
    Ok(Projection {
        u: camera.fx * point.x / point.z + camera.cx,
        v: camera.fy * point.y / point.z + camera.cy,
        depth: point.z,
    })
}

/// Lifts a pixel with inverse depth into world coordinates using a camera-to-world pose.
pub fn backproject(u: f64, v: f64, inverse_depth: f64, camera: &PinholeCamera, pose: &Se3Pose) -> Result<Vec3> {
    if !(inverse_depth > 0.0) || !inverse_depth.is_finite() {
        return Err(Error::InvalidDepth(inverse_depth));
    }
    let p = camera.ray(u, v) / inverse_depth;
    Ok(pose.transform_point(&p))
}
