use nalgebra::{Matrix3, Vector6};

use super::{AffineBrightness, PhotometricFrame, TrackedPoint};
use crate::geometry::{PinholeCamera, Se3Pose, Vec3};
use crate::image::{bilinear_sample, image_gradient, IntensityImage};
use crate::{Error, Result};

/// Something that can be sampled like an intensity image.
///
/// The bilinear image is the production implementation; tests plug in smooth
/// analytic fields to check Jacobians exactly.
pub trait IntensityField {
    fn intensity(&self, u: f64, v: f64) -> Option<f64>;
    fn gradient(&self, u: f64, v: f64) -> Option<(f64, f64)>;
    /// Whether `(u, v)` lies at least `margin` pixels inside the field.
    fn contains(&self, u: f64, v: f64, margin: f64) -> bool;
}

impl IntensityField for IntensityImage {
    fn intensity(&self, u: f64, v: f64) -> Option<f64> {
        bilinear_sample(self, u, v).ok()
    }

    fn gradient(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        image_gradient(self, u, v).ok()
    }

    fn contains(&self, u: f64, v: f64, margin: f64) -> bool {
        u >= margin && v >= margin && u <= self.width() as f64 - 1.0 - margin && v <= self.height() as f64 - 1.0 - margin
    }
}

/// Location of a host point in the target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub u: f64,
    pub v: f64,
    pub inverse_depth: f64,
}

/// `(s_j a_j) / (s_i a_i)`.
#[inline]
pub fn gain_ratio(host_exposure: f64, host: &AffineBrightness, target_exposure: f64, target: &AffineBrightness) -> f64 {
    (target_exposure / host_exposure) * crate::math::exp(target.log_a - host.log_a)
}

/// Scaled target-frame point `ρ·X_t = R·ray + ρ·t`.
#[inline]
pub(crate) fn scaled_point(rotation: &Matrix3<f64>, translation: &Vec3, ray: &Vec3, inverse_depth: f64) -> Vec3 {
    rotation * ray + translation * inverse_depth
}

/// Reprojects a host point into the target frame.
pub fn warp_point(
    point: &TrackedPoint,
    host: &PhotometricFrame,
    target: &PhotometricFrame,
    camera: &PinholeCamera,
) -> Result<Warp> {
    if !(point.inverse_depth > 0.0) {
        return Err(Error::InvalidDepth(point.inverse_depth));
    }
    let relative = target.pose.inverse().compose(&host.pose);
    let p = scaled_point(&relative.rotation_matrix(), relative.translation(), &camera.ray(point.u, point.v), point.inverse_depth);
    if !(p.z > 1e-9) {
        return Err(Error::NotVisible);
    }
    let u = camera.fx * p.x / p.z + camera.cx;
    let v = camera.fy * p.y / p.z + camera.cy;
    if !target.image().contains(u, v, 0.0) {
        return Err(Error::NotVisible);
    }
    Ok(Warp { u, v, inverse_depth: point.inverse_depth / p.z })
}

/// Photometric residual of one point between its host and a target frame.
pub fn photometric_residual(
    point: &TrackedPoint,
    host: &PhotometricFrame,
    target: &PhotometricFrame,
    camera: &PinholeCamera,
) -> Result<f64> {
    let w = warp_point(point, host, target, camera)?;
    let host_intensity = bilinear_sample(host.image(), point.u, point.v).map_err(|_| Error::NotVisible)?;
    let target_intensity = bilinear_sample(target.image(), w.u, w.v).map_err(|_| Error::NotVisible)?;
    let (ha, ta) = (host.affine(), target.affine());
    let g = gain_ratio(host.exposure(), &ha, target.exposure(), &ta);
    Ok((target_intensity - ta.b) - g * (host_intensity - ha.b))
}

/// Residual with its derivatives w.r.t. a left twist on the host-to-target
/// transform, the target's `ln a`, the target's `b`, and the point's inverse depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualJacobian {
    pub residual: f64,
    pub u: f64,
    pub v: f64,
    pub twist: Vector6<f64>,
    pub log_a: f64,
    pub b: f64,
    pub inverse_depth: f64,
}

/// Everything about the target frame the residual needs, at one pyramid level.
pub(crate) struct TargetView<'a, F: IntensityField> {
    pub field: &'a F,
    pub camera: PinholeCamera,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub gain: f64,
    pub host_b: f64,
    pub target_b: f64,
}

impl<'a, F: IntensityField> TargetView<'a, F> {
    pub fn new(field: &'a F, camera: PinholeCamera, relative: &Se3Pose, gain: f64, host_b: f64, target_b: f64) -> Self {
        Self { field, camera, rotation: relative.rotation_matrix(), translation: *relative.translation(), gain, host_b, target_b }
    }

    /// Residual only; `None` when the point leaves the one-pixel interior.
    #[inline]
    /// Pixel position of the warped point, if it lies in front of the camera.
    pub fn project(&self, ray: &Vec3, inverse_depth: f64) -> Option<(f64, f64)> {
        let p = scaled_point(&self.rotation, &self.translation, ray, inverse_depth);
        if !(p.z > 1e-9) {
            return None;
        }
        Some((self.camera.fx * p.x / p.z + self.camera.cx, self.camera.fy * p.y / p.z + self.camera.cy))
    }

    pub fn residual(&self, ray: &Vec3, inverse_depth: f64, host_intensity: f64) -> Option<f64> {
        let p = scaled_point(&self.rotation, &self.translation, ray, inverse_depth);
        if !(p.z > 1e-9) {
            return None;
        }
        let u = self.camera.fx * p.x / p.z + self.camera.cx;
        let v = self.camera.fy * p.y / p.z + self.camera.cy;
        if !self.field.contains(u, v, 1.0) {
            return None;
        }
        let it = self.field.intensity(u, v)?;
        Some((it - self.target_b) - self.gain * (host_intensity - self.host_b))
    }

    #[inline]
    pub fn jacobian(&self, ray: &Vec3, inverse_depth: f64, host_intensity: f64) -> Option<ResidualJacobian> {
        let p = scaled_point(&self.rotation, &self.translation, ray, inverse_depth);
        if !(p.z > 1e-9) {
            return None;
        }
        let cam = &self.camera;
        let iz = 1.0 / p.z;
        let u = cam.fx * p.x * iz + cam.cx;
        let v = cam.fy * p.y * iz + cam.cy;
        if !self.field.contains(u, v, 1.0) {
            return None;
        }
        let it = self.field.intensity(u, v)?;
        let (gx, gy) = self.field.gradient(u, v)?;
        let host_term = host_intensity - self.host_b;
        let residual = (it - self.target_b) - self.gain * host_term;

        // dr/dP for the scaled point P.
        let dr_dp = Vec3::new(gx * cam.fx * iz, gy * cam.fy * iz, -(gx * cam.fx * p.x + gy * cam.fy * p.y) * iz * iz);
        // Left perturbation: dP/dv = ρ I, dP/dω = -[P]x.
        let rot = p.cross(&dr_dp);
        let twist = Vector6::new(
            inverse_depth * dr_dp.x,
            inverse_depth * dr_dp.y,
            inverse_depth * dr_dp.z,
            rot.x,
            rot.y,
            rot.z,
        );
        Some(ResidualJacobian {
            residual,
            u,
            v,
            twist,
            log_a: -self.gain * host_term,
            b: -1.0,
            inverse_depth: dr_dp.dot(&self.translation),
        })
    }
}

/// Residual and analytic Jacobian for a point observed in `target`.
///
/// `relative` maps host-camera coordinates into target-camera coordinates.
#[allow(clippy::too_many_arguments)]
pub fn residual_jacobian<F: IntensityField>(
    ray: &Vec3,
    inverse_depth: f64,
    host_intensity: f64,
    relative: &Se3Pose,
    camera: &PinholeCamera,
    target: &F,
    gain: f64,
    host_b: f64,
    target_b: f64,
) -> Option<ResidualJacobian> {
    TargetView::new(target, *camera, relative, gain, host_b, target_b).jacobian(ray, inverse_depth, host_intensity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use crate::odometry::PointStatus;

    fn textured(w: usize, h: usize) -> IntensityImage {
        IntensityImage::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.5 + 0.2 * libm::sin(0.31 * x + 0.1 * y) + 0.15 * libm::cos(0.23 * y - 0.05 * x)
        })
    }

    fn frame(id: usize, img: &IntensityImage) -> PhotometricFrame {
        PhotometricFrame::from_image(id, img, 1, 1.0).unwrap()
    }

    fn point(u: f64, v: f64, idepth: f64) -> TrackedPoint {
        TrackedPoint { host: 0, u, v, inverse_depth: idepth, status: PointStatus::PoseTracking, color: [0.0; 3] }
    }

    fn cam() -> PinholeCamera {
        PinholeCamera::new(80.0, 80.0, 31.5, 23.5, 64, 48).unwrap()
    }

    #[test]
    fn identity_warp_is_fixed_point() {
        let img = textured(64, 48);
        let (h, t) = (frame(0, &img), frame(1, &img));
        let w = warp_point(&point(20.0, 17.0, 0.7), &h, &t, &cam()).unwrap();
        assert!((w.u - 20.0).abs() < 1e-12 && (w.v - 17.0).abs() < 1e-12);
        assert!((w.inverse_depth - 0.7).abs() < 1e-15);
    }

    #[test]
    fn forward_motion_keeps_principal_point() {
        let img = textured(64, 48);
        let h = frame(0, &img);
        let t = frame(1, &img).with_pose(se3_exp(&Twist::new(0.0, 0.0, 0.3, 0.0, 0.0, 0.0)).unwrap());
        let c = cam();
        let w = warp_point(&point(c.cx, c.cy, 0.5), &h, &t, &c).unwrap();
        assert!((w.u - c.cx).abs() < 1e-12 && (w.v - c.cy).abs() < 1e-12);
        assert!((1.0 / w.inverse_depth - 1.7).abs() < 1e-12);
    }

    #[test]
    fn warp_reports_invisible_points() {
        let img = textured(64, 48);
        let h = frame(0, &img);
        let t = frame(1, &img).with_pose(se3_exp(&Twist::new(5.0, 0.0, 0.0, 0.0, 0.0, 0.0)).unwrap());
        assert_eq!(warp_point(&point(10.0, 10.0, 1.0), &h, &t, &cam()), Err(Error::NotVisible));
        let behind = frame(1, &img).with_pose(se3_exp(&Twist::new(0.0, 0.0, 3.0, 0.0, 0.0, 0.0)).unwrap());
        assert_eq!(warp_point(&point(31.5, 23.5, 1.0), &h, &behind, &cam()), Err(Error::NotVisible));
    }

    #[test]
    fn residual_examples() {
        let img = textured(64, 48);
        let c = cam();
        let p = point(12.0, 30.0, 0.4);
        let (h, t) = (frame(0, &img), frame(1, &img));
        assert!(photometric_residual(&p, &h, &t, &c).unwrap().abs() < 1e-12);

        let t = frame(1, &img).with_affine(AffineBrightness { log_a: 0.0, b: 0.07 }).unwrap();
        assert!((photometric_residual(&p, &h, &t, &c).unwrap() + 0.07).abs() < 1e-12);

        // Doubled target intensities cancelled by a gain ratio of 2.
        let half = img.map(|v| 0.5 * v);
        let h = frame(0, &half);
        let t = PhotometricFrame::from_image(1, &img, 1, 2.0).unwrap();
        assert!(photometric_residual(&p, &h, &t, &c).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gain_ratio_depends_only_on_ratio() {
        let hi = AffineBrightness { log_a: 0.3, b: 0.0 };
        let tj = AffineBrightness { log_a: -0.1, b: 0.0 };
        let g1 = gain_ratio(0.5, &hi, 0.8, &tj);
        let c = 3.7f64;
        let hi2 = AffineBrightness { log_a: 0.3 + libm::log(c), b: 0.0 };
        let tj2 = AffineBrightness { log_a: -0.1 + libm::log(c), b: 0.0 };
        assert!((g1 - gain_ratio(0.5, &hi2, 0.8, &tj2)).abs() < 1e-12);
        let img = textured(64, 48);
        let h = PhotometricFrame::from_image(0, &img, 1, 0.5).unwrap();
        let t = PhotometricFrame::from_image(1, &img, 1, 0.5).unwrap();
        let h2 = PhotometricFrame::from_image(0, &img, 1, 0.5 * 2.5).unwrap();
        let t2 = PhotometricFrame::from_image(1, &img, 1, 0.5 * 2.5).unwrap();
        let p = point(30.0, 20.0, 1.0);
        let r1 = photometric_residual(&p, &h, &t, &cam()).unwrap();
        let r2 = photometric_residual(&p, &h2, &t2, &cam()).unwrap();
        assert!((r1 - r2).abs() < 1e-15);
    }

    /// Smooth analytic field with exact gradient.
    struct Waves;

    impl IntensityField for Waves {
        fn intensity(&self, u: f64, v: f64) -> Option<f64> {
            Some(0.5 + 0.2 * libm::sin(0.21 * u + 0.07 * v) + 0.1 * libm::cos(0.13 * v - 0.04 * u))
        }

        fn gradient(&self, u: f64, v: f64) -> Option<(f64, f64)> {
            let a = libm::cos(0.21 * u + 0.07 * v);
            let b = libm::sin(0.13 * v - 0.04 * u);
            Some((0.2 * 0.21 * a + 0.1 * 0.04 * b, 0.2 * 0.07 * a - 0.1 * 0.13 * b))
        }

        fn contains(&self, _: f64, _: f64, _: f64) -> bool {
            true
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let c = cam();
        let h = 1e-6;
        for _ in 0..100 {
            let tw = Twist::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
                rng.gen_range(-0.1..0.1),
            );
            let rel = se3_exp(&tw).unwrap();
            let ray = c.ray(rng.gen_range(0.0..64.0), rng.gen_range(0.0..48.0));
            let rho = rng.gen_range(0.2..2.0);
            let hi = rng.gen_range(0.2..0.8);
            let (log_a, b, hb) = (rng.gen_range(-0.3..0.3), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            let eval = |rel: &Se3Pose, rho: f64, log_a: f64, b: f64| {
                TargetView::new(&Waves, c, rel, libm::exp(log_a), hb, b).residual(&ray, rho, hi).unwrap()
            };
            let j = TargetView::new(&Waves, c, &rel, libm::exp(log_a), hb, b).jacobian(&ray, rho, hi).unwrap();
            let close = |analytic: f64, numeric: f64| (analytic - numeric).abs() <= 1e-3 * numeric.abs().max(1e-3);
            for k in 0..6 {
                let mut d = Twist::zeros();
                d[k] = h;
                let plus = eval(&se3_exp(&d).unwrap().compose(&rel), rho, log_a, b);
                let minus = eval(&se3_exp(&-d).unwrap().compose(&rel), rho, log_a, b);
                let numeric = (plus - minus) / (2.0 * h);
                assert!(close(j.twist[k], numeric), "twist {k}: {} vs {numeric}", j.twist[k]);
            }
            let numeric = (eval(&rel, rho + h, log_a, b) - eval(&rel, rho - h, log_a, b)) / (2.0 * h);
            assert!(close(j.inverse_depth, numeric));
            let numeric = (eval(&rel, rho, log_a + h, b) - eval(&rel, rho, log_a - h, b)) / (2.0 * h);
            assert!(close(j.log_a, numeric));
            let numeric = (eval(&rel, rho, log_a, b + h) - eval(&rel, rho, log_a, b - h)) / (2.0 * h);
            assert!(close(j.b, numeric));
        }
    }
}
