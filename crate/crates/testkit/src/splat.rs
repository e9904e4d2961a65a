//! Splatting oracles: a per-pixel renderer over every Gaussian, a renderer
//! with frozen branch decisions for finite differences, and a Monte-Carlo
//! estimate of projected covariance.

use densesplat_core::geometry::{PinholeCamera, Se3Pose};
use densesplat_core::splat::{Gaussian3d, SplatScene, PARAMS_PER_GAUSSIAN};
use nalgebra::{Isometry3, Matrix2, Matrix2x3, Matrix3, Point3, Quaternion, Translation3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const NEAR: f64 = 0.01;
const FLOOR: f64 = 0.3;
const ALPHA_CLAMP: f64 = 0.99;
const ALPHA_SKIP: f64 = 1.0 / 255.0;
const T_STOP: f64 = 1e-4;

pub struct OracleImage {
    pub pixels: Vec<[f64; 3]>,
    pub transmittance: Vec<f64>,
}

struct Prepared {
    index: usize,
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

impl Prepared {
    /// Unclamped alpha at pixel centre `(x, y)`.
    fn raw_alpha(&self, x: usize, y: usize) -> f64 {
        let d = Vector2::new(x as f64, y as f64) - self.mean;
        self.opacity * (-0.5 * d.dot(&(self.inv_cov * d))).exp()
    }
}

fn world_to_camera(pose: &Se3Pose) -> Isometry3<f64> {
    let [w, x, y, z] = pose.quaternion_wxyz();
    let t = pose.translation();
    let c2w = Isometry3::from_parts(
        Translation3::new(t.x, t.y, t.z),
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)),
    );
    c2w.inverse()
}

fn prepare_one(index: usize, g: &Gaussian3d, camera: &PinholeCamera, view: &Isometry3<f64>) -> Option<Prepared> {
    let p = view * Point3::from(g.position);
    if p.z <= NEAR {
        return None;
    }
    let [qw, qx, qy, qz] = g.rotation;
    let r = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz)).to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&g.log_scale.map(f64::exp));
    let sigma = r * s * s * r.transpose();
    let j = Matrix2x3::new(
        camera.fx / p.z,
        0.0,
        -camera.fx * p.x / (p.z * p.z),
        0.0,
        camera.fy / p.z,
        -camera.fy * p.y / (p.z * p.z),
    );
    let w = view.rotation.to_rotation_matrix().into_inner();
    let cov = j * w * sigma * w.transpose() * j.transpose() + Matrix2::identity() * FLOOR;
    Some(Prepared {
        index,
        mean: Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy),
        inv_cov: cov.try_inverse()?,
        opacity: 1.0 / (1.0 + (-g.opacity_logit).exp()),
        color: g.color,
        depth: p.z,
    })
}

fn prepare(scene: &SplatScene, camera: &PinholeCamera, pose: &Se3Pose) -> Vec<Prepared> {
    let view = world_to_camera(pose);
    let mut out: Vec<Prepared> =
        scene.gaussians.iter().enumerate().filter_map(|(i, g)| prepare_one(i, g, camera, &view)).collect();
    out.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    out
}

/// Blends every Gaussian at every pixel with the clamp and skip rules but no
/// early termination and no tiling.
pub fn brute_force_render(scene: &SplatScene, camera: &PinholeCamera, pose: &Se3Pose) -> OracleImage {
    let splats = prepare(scene, camera, pose);
    let mut pixels = Vec::with_capacity(camera.width * camera.height);
    let mut transmittance = Vec::with_capacity(camera.width * camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for s in &splats {
                let a = s.raw_alpha(x, y).min(ALPHA_CLAMP);
                if a < ALPHA_SKIP {
                    continue;
                }
                for ch in 0..3 {
                    c[ch] += s.color[ch] * a * t;
                }
                t *= 1.0 - a;
            }
            for ch in 0..3 {
                c[ch] += t * scene.background[ch];
            }
            pixels.push(c);
            transmittance.push(t);
        }
    }
    OracleImage { pixels, transmittance }
}

/// Per pixel, the Gaussians that contribute (in blend order) and whether
/// their alpha was clamped, including the early stop.
pub type Branches = Vec<Vec<(usize, bool)>>;

pub fn trace_branches(scene: &SplatScene, camera: &PinholeCamera, pose: &Se3Pose) -> Branches {
    let splats = prepare(scene, camera, pose);
    let mut out = Vec::with_capacity(camera.width * camera.height);
    for y in 0..camera.height {
        for x in 0..camera.width {
            let mut t = 1.0;
            let mut list = Vec::new();
            for s in &splats {
                let raw = s.raw_alpha(x, y);
                let a = raw.min(ALPHA_CLAMP);
                if a < ALPHA_SKIP {
                    continue;
                }
                list.push((s.index, raw > ALPHA_CLAMP));
                t *= 1.0 - a;
                if t < T_STOP {
                    break;
                }
            }
            out.push(list);
        }
    }
    out
}

/// Renders with the blend lists fixed, so the image is a smooth function of
/// the parameters around the point where `branches` was traced.
pub fn frozen_render(scene: &SplatScene, camera: &PinholeCamera, pose: &Se3Pose, branches: &Branches) -> Vec<[f64; 3]> {
    let view = world_to_camera(pose);
    let prepared: Vec<Option<Prepared>> =
        scene.gaussians.iter().enumerate().map(|(i, g)| prepare_one(i, g, camera, &view)).collect();
    let mut pixels = Vec::with_capacity(branches.len());
    for y in 0..camera.height {
        for x in 0..camera.width {
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for &(gi, clamped) in &branches[y * camera.width + x] {
                let s = prepared[gi].as_ref().expect("frozen gaussian left the view");
                let a = if clamped { ALPHA_CLAMP } else { s.raw_alpha(x, y) };
                for ch in 0..3 {
                    c[ch] += s.color[ch] * a * t;
                }
                t *= 1.0 - a;
            }
            for ch in 0..3 {
                c[ch] += t * scene.background[ch];
            }
            pixels.push(c);
        }
    }
    pixels
}

/// Central-difference gradients of `Σ upstream · pixel` with respect to every
/// stored parameter (same layout as `Gaussian3d::params`), branches frozen.
pub fn finite_difference_gradients(
    scene: &SplatScene,
    camera: &PinholeCamera,
    pose: &Se3Pose,
    upstream: &[[f64; 3]],
    h: f64,
) -> Vec<[f64; PARAMS_PER_GAUSSIAN]> {
    let branches = trace_branches(scene, camera, pose);
    let objective = |s: &SplatScene| -> f64 {
        frozen_render(s, camera, pose, &branches)
            .iter()
            .zip(upstream)
            .map(|(p, u)| p[0] * u[0] + p[1] * u[1] + p[2] * u[2])
            .sum()
    };
    let mut out = vec![[0.0; PARAMS_PER_GAUSSIAN]; scene.gaussians.len()];
    for (gi, grad) in out.iter_mut().enumerate() {
        let base = scene.gaussians[gi].params();
        for (k, slot) in grad.iter_mut().enumerate() {
            let eval = |d: f64| {
                let mut s = scene.clone();
                let mut p = base;
                p[k] += d;
                s.gaussians[gi].set_params(&p);
                objective(&s)
            };
            *slot = (eval(h) - eval(-h)) / (2.0 * h);
        }
    }
    out
}

/// 32×32 camera used by the random-scene checks.
pub fn small_camera() -> PinholeCamera {
    PinholeCamera::new(36.0, 38.0, 15.5, 16.0, 32, 32).unwrap()
}

/// Random anisotropic scene in front of a slightly rotated camera. Gaussians
/// land roughly inside the 32×32 view at depths 2–5.
pub fn random_scene(rng: &mut ChaCha8Rng, count: usize) -> (SplatScene, Se3Pose) {
    let pose = Se3Pose::from_quaternion(
        1.0,
        rng.gen_range(-0.05..0.05),
        rng.gen_range(-0.05..0.05),
        rng.gen_range(-0.05..0.05),
        Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)),
    )
    .unwrap();
    let gaussians = (0..count)
        .map(|_| {
            let z = rng.gen_range(2.0..5.0);
            let local = Vector3::new(rng.gen_range(-0.35..0.35) * z, rng.gen_range(-0.35..0.35) * z, z);
            let q = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let n = q.iter().map(|c: &f64| c * c).sum::<f64>().sqrt();
            Gaussian3d {
                position: pose.transform_point(&local),
                log_scale: Vector3::new(
                    rng.gen_range(-3.5..-1.2),
                    rng.gen_range(-3.5..-1.2),
                    rng.gen_range(-3.5..-1.2),
                ),
                rotation: q.map(|c| c / n),
                opacity_logit: rng.gen_range(-2.5..3.5),
                color: [rng.gen(), rng.gen(), rng.gen()],
            }
        })
        .collect();
    (SplatScene::new(gaussians, [rng.gen(), rng.gen(), rng.gen()]), pose)
}

/// Sample mean and covariance (pixels) of projected draws from the 3D Gaussian.
pub fn monte_carlo_projection(
    g: &Gaussian3d,
    camera: &PinholeCamera,
    pose: &Se3Pose,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> (Vector2<f64>, Matrix2<f64>) {
    let view = world_to_camera(pose);
    let [qw, qx, qy, qz] = g.rotation;
    let r = UnitQuaternion::from_quaternion(Quaternion::new(qw, qx, qy, qz)).to_rotation_matrix().into_inner();
    let m = r * Matrix3::from_diagonal(&g.log_scale.map(f64::exp));
    let draws: Vec<Vector2<f64>> = (0..samples)
        .map(|_| {
            let z = Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
            let p = view * Point3::from(g.position + m * z);
            Vector2::new(camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy)
        })
        .collect();
    let mean = draws.iter().sum::<Vector2<f64>>() / samples as f64;
    let cov = draws.iter().map(|d| (d - mean) * (d - mean).transpose()).sum::<Matrix2<f64>>() / (samples - 1) as f64;
    (mean, cov)
}
