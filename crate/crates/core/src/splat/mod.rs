//! Differentiable Gaussian splatting.
//!
//! A scene is a list of anisotropic 3D Gaussians with flat colours. Rendering
//! projects each one to a 2D Gaussian (first-order perspective), sorts them by
//! view depth and alpha-blends front to back over 16×16 pixel tiles. The
//! backward pass recomputes the blend in reverse and returns analytic
//! gradients for every stored parameter.

use alloc::vec::Vec;

use nalgebra::Matrix3;

use crate::geometry::Vec3;
use crate::image::Rgb;
use crate::math;
use crate::{Error, Result};

mod adam;
mod init;
mod loss;
mod project;
mod render;
mod train;

pub use adam::{Adam, AdamConfig};
pub use init::{init_from_point_cloud, SCALE_CLAMP};
pub use loss::{l1, loss_and_gradient, psnr, ssim};
pub use project::{project_gaussian, ProjectedGaussian, COVARIANCE_FLOOR, NEAR_PLANE};
pub use render::{
    render, render_backward, GaussianGradient, Rendered, ALPHA_MAX, ALPHA_MIN, TILE_SIZE, TRANSMITTANCE_MIN,
};
pub use train::{
    densify_and_prune, train_step, DensifyReport, GradientStats, OptimizerState, StepOutcome, TrainConfig, Trainer,
};

/// Number of optimised scalars per Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3d {
    pub position: Vec3,
    /// Per-axis standard deviation, natural log.
    pub log_scale: Vec3,
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Rgb,
}

impl Gaussian3d {
    pub fn isotropic(position: Vec3, scale: f64, opacity: f64, color: Rgb) -> Self {
        let s = math::ln(scale);
        Self {
            position,
            log_scale: Vec3::new(s, s, s),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: math::logit(opacity),
            color,
        }
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(math::exp)
    }

    pub fn max_scale(&self) -> f64 {
        math::exp(self.log_scale.max())
    }

    pub fn opacity(&self) -> f64 {
        math::sigmoid(self.opacity_logit)
    }

    /// Rotation matrix of the normalised quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quaternion_matrix(&normalized(&self.rotation))
    }

    /// World-space covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale());
        m * m.transpose()
    }

    pub fn normalize_rotation(&mut self) {
        self.rotation = normalized(&self.rotation);
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::invalid("gaussian parameters must be finite"));
        }
        let n = math::sqrt(self.rotation.iter().map(|c| c * c).sum());
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("gaussian rotation must be a unit quaternion"));
        }
        if self.scale().iter().any(|&s| !(s > 1e-7 && s < 1e3)) {
            return Err(Error::invalid("gaussian scales must lie in (1e-7, 1e3)"));
        }
        Ok(())
    }

    /// Flat parameter vector: position, log-scale, rotation, opacity logit, colour.
    pub fn params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(self.position.as_slice());
        p[3..6].copy_from_slice(self.log_scale.as_slice());
        p[6..10].copy_from_slice(&self.rotation);
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn set_params(&mut self, p: &[f64; PARAMS_PER_GAUSSIAN]) {
        self.position = Vec3::new(p[0], p[1], p[2]);
        self.log_scale = Vec3::new(p[3], p[4], p[5]);
        self.rotation.copy_from_slice(&p[6..10]);
        self.opacity_logit = p[10];
        self.color.copy_from_slice(&p[11..14]);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplatScene {
    pub gaussians: Vec<Gaussian3d>,
    pub background: Rgb,
}

impl SplatScene {
    pub fn new(gaussians: Vec<Gaussian3d>, background: Rgb) -> Self {
        Self { gaussians, background }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

pub(crate) fn normalized(q: &[f64; 4]) -> [f64; 4] {
    let n = math::sqrt(q.iter().map(|c| c * c).sum());
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub(crate) fn quaternion_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = *q;
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
