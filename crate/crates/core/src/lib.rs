//! Direct photometric odometry feeding a differentiable Gaussian splatting
//! trainer.
//!
//! The crate is `no_std` and only needs `alloc`. Everything in here is a pure
//! function over immutable inputs (or a single-owner optimiser state); file
//! formats, the experiment harness and the command line live in the
//! `densesplat` companion crate.
//!
//! Module map:
//!
//! * [`geometry`] – SE(3) poses and the pinhole camera.
//! * [`image`] – intensity/colour images, bilinear sampling, gradients, pyramids.
//! * [`odometry`] – photometric residual, frame tracking, inverse-depth refinement
//!   and the keyframe-based odometry front end.
//! * [`selection`] – tracking / extra / gradient-less fill pixel selection.
//! * [`splat`] – projection, tiled rasterisation, analytic backward pass,
//!   Adam training, densification and metrics.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod error;
pub mod geometry;
pub mod image;
pub(crate) mod math;
pub mod odometry;
pub mod selection;
pub mod splat;

pub use error::{Error, Result};
pub use geometry::{backproject, project, se3_exp, PinholeCamera, Projection, Se3Pose, Twist, Vec3};
pub use image::{bilinear_sample, build_pyramid, image_gradient, ImagePyramid, IntensityImage, Rgb, RgbImage};
