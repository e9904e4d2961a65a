//! Direct photometric tracking.
//!
//! The residual for a point hosted in frame `i` and observed in frame `j` is
//!
//! ```text
//! r = (I_j[p_j] - b_j) - (s_j a_j) / (s_i a_i) * (I_i[p_i] - b_i)
//! ```
//!
//! with `s` the (known) exposure and `a`, `b` the affine brightness of each
//! frame. `a` is stored as its logarithm so it stays positive. Poses are
//! camera-to-world; relative motion is parametrised as a left perturbation of
//! the host-to-target transform.

mod bootstrap;
mod depth;
mod pipeline;
mod residual;
mod tracker;
#[cfg(test)]
mod testscene;

use alloc::sync::Arc;

use crate::geometry::Se3Pose;
use crate::image::{build_pyramid, ImagePyramid, IntensityImage, Rgb, RgbImage};
use crate::math;
use crate::{Error, Result};

pub use bootstrap::{bootstrap_window, BootstrapResult};
pub use depth::{refine_inverse_depth, search_inverse_depth, DepthOutcome, DepthRefinement};
pub use pipeline::{run_odometry, FrameInput, OdometryResult};
pub use residual::{
    gain_ratio, photometric_residual, residual_jacobian, warp_point, IntensityField, ResidualJacobian, Warp,
};
pub use tracker::{track_frame, AcceptedStep, TrackResult};

/// Valid inverse-depth range for tracked points.
pub const MIN_INVERSE_DEPTH: f64 = 1e-4;
pub const MAX_INVERSE_DEPTH: f64 = 1e4;

/// Affine brightness transfer `a·I + b`, with `a` held as `ln a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineBrightness {
    pub log_a: f64,
    pub b: f64,
}

impl Default for AffineBrightness {
    fn default() -> Self {
        Self { log_a: 0.0, b: 0.0 }
    }
}

impl AffineBrightness {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::invalid("affine gain must be positive"));
        }
        if !(b.is_finite() && b.abs() < 1.0) {
            return Err(Error::invalid("affine offset must satisfy |b| < 1"));
        }
        Ok(Self { log_a: math::ln(a), b })
    }

    pub fn a(&self) -> f64 {
        math::exp(self.log_a)
    }
}

/// One image of the sequence together with its photometric and pose state.
#[derive(Debug, Clone)]
pub struct PhotometricFrame {
    pub id: usize,
    pyramid: ImagePyramid,
    color: Option<Arc<RgbImage>>,
    exposure: f64,
    affine: AffineBrightness,
    pub pose: Se3Pose,
}

impl PhotometricFrame {
    pub fn new(id: usize, pyramid: ImagePyramid, exposure: f64) -> Result<Self> {
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::invalid("exposure must be positive"));
        }
        Ok(Self {
            id,
            pyramid,
            color: None,
            exposure,
            affine: AffineBrightness::default(),
            pose: Se3Pose::identity(),
        })
    }

    /// Convenience constructor that builds the pyramid from a grayscale image.
    pub fn from_image(id: usize, image: &IntensityImage, levels: usize, exposure: f64) -> Result<Self> {
        Self::new(id, build_pyramid(image, levels)?, exposure)
    }

    pub fn with_color(mut self, color: Arc<RgbImage>) -> Self {
        self.color = Some(color);
        self
    }

    pub fn with_pose(mut self, pose: Se3Pose) -> Self {
        self.pose = pose;
        self
    }

    pub fn with_affine(mut self, affine: AffineBrightness) -> Result<Self> {
        self.set_affine(affine)?;
        Ok(self)
    }

    pub fn pyramid(&self) -> &ImagePyramid {
        &self.pyramid
    }

    pub fn image(&self) -> &IntensityImage {
        self.pyramid.finest()
    }

    pub fn color(&self) -> Option<&RgbImage> {
        self.color.as_deref()
    }

    pub fn exposure(&self) -> f64 {
        self.exposure
    }

    pub fn affine(&self) -> AffineBrightness {
        self.affine
    }

    pub fn set_affine(&mut self, affine: AffineBrightness) -> Result<()> {
        if !(affine.log_a.is_finite() && affine.b.is_finite() && affine.b.abs() < 1.0) {
            return Err(Error::invalid("affine parameters out of range"));
        }
        self.affine = affine;
        Ok(())
    }

    /// Colour at a pixel, falling back to the grayscale value.
    pub fn color_at(&self, u: f64, v: f64) -> Rgb {
        match &self.color {
            Some(c) => c.sample_clamped(u, v),
            None => {
                let img = self.image();
                let u = u.clamp(0.0, (img.width() - 1) as f64);
                let v = v.clamp(0.0, (img.height() - 1) as f64);
                let g = crate::image::bilinear_sample(img, u, v).unwrap_or(0.0);
                [g, g, g]
            }
        }
    }
}

/// Role of a tracked point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointStatus {
    /// High-gradient pixel that constrains the camera pose.
    PoseTracking,
    /// Extra pixel whose depth is optimised but which never enters pose tracking.
    PositionOnly,
    /// Gradient-less region filler with a neighbour-averaged depth.
    GradientFill,
}

impl PointStatus {
    /// Numeric tag used by the point-cloud file format.
    pub fn code(self) -> u8 {
        match self {
            PointStatus::PoseTracking => 0,
            PointStatus::PositionOnly => 1,
            PointStatus::GradientFill => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PointStatus::PoseTracking),
            1 => Some(PointStatus::PositionOnly),
            2 => Some(PointStatus::GradientFill),
            _ => None,
        }
    }
}

/// A host-frame pixel with inverse depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedPoint {
    pub host: usize,
    pub u: f64,
    pub v: f64,
    pub inverse_depth: f64,
    pub status: PointStatus,
    pub color: Rgb,
}

/// Robust photometric energy of a residual set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotometricEnergy {
    pub total: f64,
    pub residual_count: usize,
    pub huber_threshold: f64,
}

/// Huber cost of a residual: `r²/2` inside the threshold, linear outside.
#[inline]
pub fn huber(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        0.5 * r * r
    } else {
        k * (a - 0.5 * k)
    }
}

/// IRLS weight matching [`huber`].
#[inline]
pub fn huber_weight(r: f64, k: f64) -> f64 {
    let a = r.abs();
    if a <= k {
        1.0
    } else {
        k / a
    }
}

/// Tracking and refinement settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OdometryConfig {
    pub pyramid_levels: usize,
    pub huber_threshold: f64,
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub min_tracking_points: usize,
    pub keyframe_interval: usize,
    pub window_keyframes: usize,
    pub initial_inverse_depth: f64,
    /// Number of joint pose/depth passes used to initialise the first keyframe's depths.
    pub bootstrap_iterations: usize,
    /// Weight of the pull towards the mean inverse depth during bootstrap.
    pub bootstrap_depth_prior: f64,
    /// Points whose final RMS residual exceeds this are dropped from the cloud.
    pub outlier_rms: f64,
    /// Per-residual weight of a quadratic pull of the tracked `log a` towards
    /// the reference. Exposure is known, so the gain should barely move; without
    /// the pull, interpolation blur in the target reads as lost contrast and
    /// leaks into `b`.
    pub affine_gain_prior: f64,
    /// Keep extra and fill points (dense cloud) instead of tracking points only.
    pub dense: bool,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 4,
            huber_threshold: 0.03,
            max_iterations: 30,
            initial_damping: 0.01,
            min_tracking_points: 50,
            keyframe_interval: 5,
            window_keyframes: 3,
            initial_inverse_depth: 0.5,
            bootstrap_iterations: 40,
            bootstrap_depth_prior: 1e-3,
            outlier_rms: 0.03,
            affine_gain_prior: 3.0,
            dense: true,
        }
    }
}

impl OdometryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=crate::image::MAX_PYRAMID_LEVELS).contains(&self.pyramid_levels) {
            return Err(Error::invalid("odometry.pyramid_levels must be within 1..=6"));
        }
        if !(self.huber_threshold > 0.0) || self.max_iterations == 0 || !(self.initial_damping > 0.0) {
            return Err(Error::invalid("odometry solver settings must be positive"));
        }
        if self.keyframe_interval == 0 || self.window_keyframes == 0 {
            return Err(Error::invalid("odometry keyframe settings must be positive"));
        }
        if !(self.initial_inverse_depth > MIN_INVERSE_DEPTH && self.initial_inverse_depth < MAX_INVERSE_DEPTH) {
            return Err(Error::invalid("odometry.initial_inverse_depth out of range"));
        }
        if !(self.bootstrap_depth_prior >= 0.0) || !(self.outlier_rms > 0.0) || !(self.affine_gain_prior >= 0.0) {
            return Err(Error::invalid("odometry bootstrap/outlier settings must be non-negative"));
        }
        Ok(())
    }
}

/// Energies before and after a step, summed over the residuals that exist in
/// `current`; one missing from `trial` keeps its current value, so leaving the
/// image neither helps nor hurts.
pub(crate) fn compare(current: &[Option<f64>], trial: &[Option<f64>]) -> (f64, f64) {
    let mut before = 0.0;
    let mut after = 0.0;
    for (c, t) in current.iter().zip(trial) {
        if let Some(c) = c {
            before += c;
            after += t.unwrap_or(*c);
        }
    }
    (before, after)
}
