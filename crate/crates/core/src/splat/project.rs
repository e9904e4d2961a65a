//! Perspective projection of 3D Gaussians (first-order / EWA) and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3};

use super::{normalized, quaternion_matrix, Gaussian3d};
use crate::geometry::{PinholeCamera, Se3Pose, Vec3};
use crate::image::Rgb;

/// Gaussians whose centre is not beyond this view depth are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Added to both diagonal entries of every projected covariance (px²).
pub const COVARIANCE_FLOOR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: Rgb,
    pub opacity: f64,
}

impl ProjectedGaussian {
    /// Inverse covariance as `[a, b, c]` for `[[a, b], [b, c]]`.
    pub fn conic(&self) -> [f64; 3] {
        let [p, q, r] = [self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]];
        let det = p * r - q * q;
        [r / det, -q / det, p / det]
    }
}

/// World-to-camera transform of a camera-to-world pose.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View {
    pub rot: Matrix3<f64>,
    pub trans: Vec3,
}

impl View {
    pub fn new(pose: &Se3Pose) -> Self {
        let inv = pose.inverse();
        Self { rot: inv.rotation_matrix(), trans: *inv.translation() }
    }
}

fn jacobian(camera: &PinholeCamera, p: &Vec3) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz * iz,
    )
}

/// Projects `g` into the camera at `pose` (camera-to-world). `None` when the
/// centre is not in front of the near plane.
pub fn project_gaussian(g: &Gaussian3d, camera: &PinholeCamera, pose: &Se3Pose) -> Option<ProjectedGaussian> {
    project_in(g, camera, &View::new(pose))
}

pub(crate) fn project_in(g: &Gaussian3d, camera: &PinholeCamera, view: &View) -> Option<ProjectedGaussian> {
    let p = view.rot * g.position + view.trans;
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let t = jacobian(camera, &p) * view.rot;
    let cov = t * g.covariance() * t.transpose() + Matrix2::identity() * COVARIANCE_FLOOR;
    Some(ProjectedGaussian {
        mean2d: [camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy],
        cov2d: cov,
        depth: p.z,
        color: g.color,
        opacity: g.opacity(),
    })
}

/// Converts a gradient on the conic `[a, b, c]` into one on the covariance
/// entries `[p, q, r]` of `[[p, q], [q, r]]` (`q` counted once).
pub(crate) fn conic_to_cov_grad(cov: &Matrix2<f64>, d_conic: [f64; 3]) -> [f64; 3] {
    let [p, q, r] = [cov[(0, 0)], cov[(0, 1)], cov[(1, 1)]];
    let det = p * r - q * q;
    let d2 = det * det;
    let [ga, gb, gc] = d_conic;
    [
        (-r * r * ga + q * r * gb - q * q * gc) / d2,
        (2.0 * q * r * ga - (p * r + q * q) * gb + 2.0 * p * q * gc) / d2,
        (-q * q * ga + p * q * gb - p * p * gc) / d2,
    ]
}

pub(crate) struct ParamGrad {
    pub position: Vec3,
    pub log_scale: Vec3,
    pub rotation: [f64; 4],
}

/// Pulls gradients on the projected mean (pixels) and covariance entries
/// back to the Gaussian's position, log-scale and raw quaternion.
pub(crate) fn project_backward(
    g: &Gaussian3d,
    camera: &PinholeCamera,
    view: &View,
    d_mean: [f64; 2],
    d_cov: [f64; 3],
) -> ParamGrad {
    let p = view.rot * g.position + view.trans;
    let j = jacobian(camera, &p);
    let t = j * view.rot;
    let q = normalized(&g.rotation);
    let r = quaternion_matrix(&q);
    let s = g.scale();
    let m = r * Matrix3::from_diagonal(&s);
    let sigma = m * m.transpose();

    let g2 = Matrix2::new(d_cov[0], 0.5 * d_cov[1], 0.5 * d_cov[1], d_cov[2]);
    let g3 = t.transpose() * g2 * t;
    let d_t = 2.0 * g2 * t * sigma;
    let d_j = d_t * view.rot.transpose();

    let (fx, fy) = (camera.fx, camera.fy);
    let iz = 1.0 / p.z;
    let iz2 = iz * iz;
    let mut d_p = Vec3::new(
        d_j[(0, 2)] * -fx * iz2,
        d_j[(1, 2)] * -fy * iz2,
        -d_j[(0, 0)] * fx * iz2 + d_j[(0, 2)] * 2.0 * fx * p.x * iz2 * iz - d_j[(1, 1)] * fy * iz2
            + d_j[(1, 2)] * 2.0 * fy * p.y * iz2 * iz,
    );
    d_p.x += d_mean[0] * fx * iz;
    d_p.y += d_mean[1] * fy * iz;
    d_p.z -= d_mean[0] * fx * p.x * iz2 + d_mean[1] * fy * p.y * iz2;

    let d_m = 2.0 * g3 * m;
    let mut d_log_scale = Vec3::zeros();
    let mut d_r = Matrix3::zeros();
    for col in 0..3 {
        let mut acc = 0.0;
        for row in 0..3 {
            acc += d_m[(row, col)] * r[(row, col)];
            d_r[(row, col)] = d_m[(row, col)] * s[col];
        }
        d_log_scale[col] = acc * s[col];
    }

    ParamGrad {
        position: view.rot.transpose() * d_p,
        log_scale: d_log_scale,
        rotation: quaternion_backward(&g.rotation, &q, &d_r),
    }
}

/// Gradient on the raw (unnormalised) quaternion from one on the rotation matrix.
fn quaternion_backward(raw: &[f64; 4], q: &[f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = *q;
    let gm = |i: usize, j: usize| g[(i, j)];
    let dq = [
        2.0 * (-z * gm(0, 1) + y * gm(0, 2) + z * gm(1, 0) - x * gm(1, 2) - y * gm(2, 0) + x * gm(2, 1)),
        2.0 * (y * gm(0, 1) + z * gm(0, 2) + y * gm(1, 0) - 2.0 * x * gm(1, 1) - w * gm(1, 2) + z * gm(2, 0)
            + w * gm(2, 1)
            - 2.0 * x * gm(2, 2)),
        2.0 * (-2.0 * y * gm(0, 0) + x * gm(0, 1) + w * gm(0, 2) + x * gm(1, 0) + z * gm(1, 2) - w * gm(2, 0)
            + z * gm(2, 1)
            - 2.0 * y * gm(2, 2)),
        2.0 * (-2.0 * z * gm(0, 0) - w * gm(0, 1) + x * gm(0, 2) + w * gm(1, 0) - 2.0 * z * gm(1, 1)
            + y * gm(1, 2)
            + x * gm(2, 0)
            + y * gm(2, 1)),
    ];
    let n = crate::math::sqrt(raw.iter().map(|c| c * c).sum());
    let dot: f64 = (0..4).map(|i| q[i] * dq[i]).sum();
    [(dq[0] - q[0] * dot) / n, (dq[1] - q[1] * dot) / n, (dq[2] - q[2] * dot) / n, (dq[3] - q[3] * dot) / n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn camera() -> PinholeCamera {
        PinholeCamera::new(100.0, 120.0, 31.5, 31.5, 64, 64).unwrap()
    }

    #[test]
    fn axis_aligned_isotropic_case() {
        let cam = camera();
        let d = 4.0;
        let sigma = 0.1;
        let g = Gaussian3d::isotropic(Vec3::new(0.0, 0.0, d), sigma, 0.5, [0.2; 3]);
        let p = project_gaussian(&g, &cam, &Se3Pose::identity()).unwrap();
        assert_eq!(p.mean2d, [cam.cx, cam.cy]);
        assert!((p.depth - d).abs() < 1e-12);
        let ex = (cam.fx * sigma / d).powi(2) + COVARIANCE_FLOOR;
        let ey = (cam.fy * sigma / d).powi(2) + COVARIANCE_FLOOR;
        assert!((p.cov2d[(0, 0)] - ex).abs() < 1e-12);
        assert!((p.cov2d[(1, 1)] - ey).abs() < 1e-12);
        assert!(p.cov2d[(0, 1)].abs() < 1e-12);
    }

    #[test]
    fn doubling_depth_halves_the_footprint() {
        let cam = camera();
        let near = Gaussian3d::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.2, 0.5, [0.2; 3]);
        let far = Gaussian3d::isotropic(Vec3::new(0.0, 0.0, 4.0), 0.2, 0.5, [0.2; 3]);
        let pose = Se3Pose::identity();
        let a = project_gaussian(&near, &cam, &pose).unwrap().cov2d;
        let b = project_gaussian(&far, &cam, &pose).unwrap().cov2d;
        let sa = (a[(0, 0)] - COVARIANCE_FLOOR).sqrt();
        let sb = (b[(0, 0)] - COVARIANCE_FLOOR).sqrt();
        assert!((sa / sb - 2.0).abs() < 1e-12);
    }

    #[test]
    fn near_plane_culls() {
        let cam = camera();
        let g = Gaussian3d::isotropic(Vec3::new(0.0, 0.0, 0.005), 0.1, 0.5, [0.2; 3]);
        assert!(project_gaussian(&g, &cam, &Se3Pose::identity()).is_none());
        let g = Gaussian3d::isotropic(Vec3::new(0.0, 0.0, -1.0), 0.1, 0.5, [0.2; 3]);
        assert!(project_gaussian(&g, &cam, &Se3Pose::identity()).is_none());
    }

    #[test]
    fn covariance_floor_keeps_eigenvalues_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = camera();
        for _ in 0..200 {
            let mut g = Gaussian3d::isotropic(Vec3::new(0.0, 0.0, 3.0), 1e-5, 0.5, [0.0; 3]);
            g.log_scale = Vec3::new(rng.gen_range(-12.0..-1.0), rng.gen_range(-12.0..-1.0), rng.gen_range(-12.0..-1.0));
            g.rotation = normalized(&[rng.gen(), rng.gen(), rng.gen(), rng.gen()]);
            let c = project_gaussian(&g, &cam, &Se3Pose::identity()).unwrap().cov2d;
            let ev = c.symmetric_eigenvalues();
            assert!(ev.min() >= COVARIANCE_FLOOR - 1e-12);
        }
    }

    fn random_case(rng: &mut ChaCha8Rng) -> (Gaussian3d, Se3Pose) {
        let mut g = Gaussian3d::isotropic(
            Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
            0.1,
            rng.gen_range(0.1..0.9),
            [0.3; 3],
        );
        g.log_scale = Vec3::new(rng.gen_range(-3.0..-1.0), rng.gen_range(-3.0..-1.0), rng.gen_range(-3.0..-1.0));
        g.rotation = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.2..1.0)];
        let pose = Se3Pose::from_quaternion(
            1.0,
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            rng.gen_range(-0.1..0.1),
            Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), -3.0),
        )
        .unwrap();
        (g, pose)
    }

    fn scalar_objective(g: &Gaussian3d, cam: &PinholeCamera, view: &View, w: &[f64; 5]) -> f64 {
        let p = project_in(g, cam, view).unwrap();
        w[0] * p.mean2d[0] + w[1] * p.mean2d[1] + w[2] * p.cov2d[(0, 0)] + w[3] * p.cov2d[(0, 1)] + w[4] * p.cov2d[(1, 1)]
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cam = camera();
        for _ in 0..20 {
            let (g, pose) = random_case(&mut rng);
            let view = View::new(&pose);
            let w: [f64; 5] = core::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let grad = project_backward(&g, &cam, &view, [w[0], w[1]], [w[2], w[3], w[4]]);
            let mut analytic = [0.0; 10];
            analytic[0..3].copy_from_slice(grad.position.as_slice());
            analytic[3..6].copy_from_slice(grad.log_scale.as_slice());
            analytic[6..10].copy_from_slice(&grad.rotation);
            let base = g.params();
            for (k, a) in analytic.iter().enumerate() {
                let h = 1e-6;
                let eval = |d: f64| {
                    let mut p = base;
                    p[k] += d;
                    let mut gg = g.clone();
                    gg.set_params(&p);
                    scalar_objective(&gg, &cam, &view, &w)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!((a - fd).abs() <= 1e-5 * fd.abs().max(1.0), "param {k}: analytic {a} fd {fd}");
            }
        }
    }

    #[test]
    fn conic_gradient_matches_central_differences() {
        let cov = Matrix2::new(3.0, 0.7, 0.7, 2.0);
        let w = [0.3, -1.2, 0.8];
        let f = |c: &Matrix2<f64>| {
            let p = ProjectedGaussian { mean2d: [0.0; 2], cov2d: *c, depth: 1.0, color: [0.0; 3], opacity: 0.5 };
            let k = p.conic();
            w[0] * k[0] + w[1] * k[1] + w[2] * k[2]
        };
        let g = conic_to_cov_grad(&cov, w);
        let h = 1e-6;
        let bump = |i: usize, d: f64| {
            let mut c = cov;
            match i {
                0 => c[(0, 0)] += d,
                1 => {
                    c[(0, 1)] += d;
                    c[(1, 0)] += d;
                }
                _ => c[(1, 1)] += d,
            }
            c
        };
        for i in 0..3 {
            let fd = (f(&bump(i, h)) - f(&bump(i, -h))) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-7, "{i}: {} vs {fd}", g[i]);
        }
    }
}
