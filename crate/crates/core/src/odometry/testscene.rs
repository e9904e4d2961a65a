//! Analytic box room used by the odometry tests: exact depth, smooth texture.

use alloc::vec::Vec;

use crate::geometry::{PinholeCamera, Se3Pose, Vec3};
use crate::image::IntensityImage;

const HALF: [f64; 3] = [2.0, 1.5, 2.5];

pub struct Render {
    pub image: IntensityImage,
    /// z-depth per pixel, row major.
    pub depth: Vec<f64>,
}

pub fn camera(w: usize, h: usize) -> PinholeCamera {
    let f = 0.6 * w as f64;
    PinholeCamera::new(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
}

fn texture(p: &Vec3) -> f64 {
    let s = |a: f64| libm::sin(a);
    0.5 + 0.12 * s(3.1 * p.x + 1.7 * p.y + 0.9 * p.z)
        + 0.1 * s(2.3 * p.y - 3.7 * p.z + 0.4)
        + 0.08 * s(4.9 * p.z + 2.9 * p.x - 1.1)
        + 0.06 * s(6.1 * p.x - 5.3 * p.y + 4.7 * p.z)
        + 0.05 * s(13.0 * p.x + 9.0 * p.y - 11.0 * p.z)
        + 0.04 * s(-17.0 * p.x + 14.0 * p.y + 19.0 * p.z)
}

/// Distance along `dir` from `origin` (inside the box) to the first wall.
fn hit(origin: &Vec3, dir: &Vec3) -> f64 {
    let mut t = f64::INFINITY;
    for k in 0..3 {
        if dir[k].abs() > 1e-12 {
            let wall = if dir[k] > 0.0 { HALF[k] } else { -HALF[k] };
            t = t.min((wall - origin[k]) / dir[k]);
        }
    }
    t
}

pub fn render(camera: &PinholeCamera, pose: &Se3Pose, brightness: f64) -> Render {
    let rot = pose.rotation_matrix();
    let origin = *pose.translation();
    let mut depth = Vec::with_capacity(camera.width * camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let ray = camera.ray(x as f64, y as f64);
            depth.push(hit(&origin, &(rot * ray)));
        }
    }
    let image = IntensityImage::from_fn(camera.width, camera.height, |x, y| {
        let ray = rot * camera.ray(x as f64, y as f64);
        let t = hit(&origin, &ray);
        texture(&(origin + ray * t)) + brightness
    });
    Render { image, depth }
}

/// Pose looking roughly down +z from near the back wall.
pub fn base_pose() -> Se3Pose {
    Se3Pose::from_quaternion(1.0, 0.0, 0.0, 0.0, Vec3::new(0.1, -0.05, -1.0)).unwrap()
}
