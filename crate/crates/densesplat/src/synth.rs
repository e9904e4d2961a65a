//! Procedural textured rooms rendered by ray casting, with exact depth and poses.
//!
//! The room is the box `[-w/2, w/2] × [-h/2, h/2] × [-d/2, d/2]` with `y`
//! pointing down. Five faces are closed; the `z = -d/2` side is open and sits
//! behind the camera path.

use std::sync::Arc;

use densesplat_core::odometry::FrameInput;
use densesplat_core::{PinholeCamera, RgbImage, Se3Pose, Vec3};
use nalgebra::{Matrix3, Rotation3};
use serde::{Deserialize, Serialize};

use crate::io::Dataset;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Room extents along x, y, z.
    pub room_size: [f64; 3],
    pub octaves: usize,
    /// Side of the coarsest noise lattice cell, scene units.
    pub texture_scale: f64,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Fraction of every face painted in a flat colour.
    pub textureless_fraction: f64,
    /// Period of the flat stripes, scene units.
    pub stripe_period: f64,
    /// Horizontal field of view in degrees.
    pub fov_degrees: f64,
    /// Samples per pixel side when rendering colour.
    pub supersample: usize,
    /// Total sweep of the orbit in degrees.
    pub orbit_degrees: f64,
    /// Distance from the camera to the orbit pivot.
    pub orbit_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            room_size: [4.0, 3.0, 5.0],
            octaves: 4,
            texture_scale: 0.4,
            frames: 20,
            width: 128,
            height: 128,
            textureless_fraction: 0.3,
            stripe_period: 2.0,
            fov_degrees: 70.0,
            supersample: 4,
            orbit_degrees: 30.0,
            orbit_radius: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.width < 64 || self.height < 64 {
            return bad("synthetic resolution must be at least 64x64");
        }
        if self.frames < 2 {
            return bad("synthetic scene needs at least two frames");
        }
        if self.room_size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("room size must be positive");
        }
        if !(0.0..1.0).contains(&self.textureless_fraction) {
            return bad("textureless fraction must lie in [0, 1)");
        }
        if self.supersample == 0 || self.supersample > 16 {
            return bad("supersample must be within 1..=16");
        }
        if self.octaves == 0 || !(self.texture_scale > 0.0) || !(self.stripe_period > 0.0) {
            return bad("texture settings must be positive");
        }
        if !(self.fov_degrees > 1.0 && self.fov_degrees < 170.0) {
            return bad("field of view must be within (1, 170) degrees");
        }
        if !(self.orbit_radius > 0.0) || !(self.orbit_degrees >= 0.0 && self.orbit_degrees < 180.0) {
            return bad("orbit settings out of range");
        }
        Ok(())
    }

    pub fn camera(&self) -> PinholeCamera {
        let f = 0.5 * self.width as f64 / (0.5 * self.fov_degrees.to_radians()).tan();
        PinholeCamera::new(f, f, (self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0, self.width, self.height)
            .expect("validated resolution")
    }
}

/// Ground truth for one rendered view.
#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub color: Arc<RgbImage>,
    /// Camera-frame `z` of the surface seen through each pixel centre.
    pub depth: Vec<f64>,
    pub pose: Se3Pose,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub seed: u64,
    pub config: SynthConfig,
    pub camera: PinholeCamera,
    pub frames: Vec<SyntheticFrame>,
}

impl SyntheticScene {
    pub fn frame_inputs(&self) -> Vec<FrameInput> {
        self.frames
            .iter()
            .map(|f| FrameInput { gray: f.color.to_luma(), color: Some(f.color.clone()), exposure: 1.0 })
            .collect()
    }

    pub fn poses(&self) -> Vec<Se3Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    /// The scene as a dataset with its ground-truth trajectory.
    pub fn to_dataset(&self) -> Dataset {
        Dataset { camera: self.camera, frames: self.frame_inputs(), trajectory: Some(self.poses()) }
    }
}

/// The textured room itself; pure function of seed and config.
#[derive(Debug, Clone)]
pub struct Room {
    half: Vec3,
    seed: u64,
    octaves: usize,
    texture_scale: f64,
    textureless: f64,
    stripe_period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Face {
    Left,
    Right,
    Ceiling,
    Floor,
    Back,
}

/// Width of the blend between a flat stripe and the texture, in stripe periods.
const STRIPE_RAMP: f64 = 0.06;
const FLAT_SHADE: f64 = 0.7;

const FACES: [Face; 5] = [Face::Left, Face::Right, Face::Ceiling, Face::Floor, Face::Back];

impl Face {
    fn index(self) -> u64 {
        self as u64
    }

    /// Base colour of the face.
    fn tint(self) -> [f64; 3] {
        match self {
            Face::Left => [0.85, 0.55, 0.45],
            Face::Right => [0.45, 0.65, 0.85],
            Face::Ceiling => [0.8, 0.8, 0.7],
            Face::Floor => [0.55, 0.75, 0.5],
            Face::Back => [0.75, 0.6, 0.8],
        }
    }
}

/// A ray/room hit.
#[derive(Debug, Clone, Copy)]
pub struct Hit {
    pub distance: f64,
    pub face: Face,
    pub point: Vec3,
}

impl Room {
    pub fn new(seed: u64, config: &SynthConfig) -> Self {
        Self {
            half: Vec3::new(config.room_size[0], config.room_size[1], config.room_size[2]) * 0.5,
            seed,
            octaves: config.octaves,
            texture_scale: config.texture_scale,
            textureless: config.textureless_fraction,
            stripe_period: config.stripe_period,
        }
    }

    pub fn half_extents(&self) -> Vec3 {
        self.half
    }

    /// Nearest hit with a closed face from an interior origin.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for face in FACES {
            let (axis, sign) = match face {
                Face::Left => (0, -1.0),
                Face::Right => (0, 1.0),
                Face::Ceiling => (1, -1.0),
                Face::Floor => (1, 1.0),
                Face::Back => (2, 1.0),
            };
            if dir[axis] * sign <= 0.0 {
                continue;
            }
            let t = (sign * self.half[axis] - origin[axis]) / dir[axis];
            if !(t > 0.0) {
                continue;
            }
            let point = origin + dir * t;
            let inside = (0..3).all(|a| a == axis || point[a].abs() <= self.half[a] + 1e-12);
            if inside && best.map_or(true, |b| t < b.distance) {
                best = Some(Hit { distance: t, face, point });
            }
        }
        best
    }

    /// 2-D texture coordinates on a face, scene units.
    fn face_coords(face: Face, p: &Vec3) -> (f64, f64) {
        match face {
            Face::Left | Face::Right => (p.z, p.y),
            Face::Ceiling | Face::Floor => (p.x, p.z),
            Face::Back => (p.x, p.y),
        }
    }

    /// Weight of the flat colour at a face point: 1 inside a flat stripe, 0 on
    /// texture, with a short smooth ramp between so the stripe borders are not
    /// hard steps.
    pub fn flat_weight(&self, face: Face, p: &Vec3) -> f64 {
        if self.textureless <= 0.0 {
            return 0.0;
        }
        let (s, _) = Self::face_coords(face, p);
        let phase = (s / self.stripe_period + 0.37 * face.index() as f64).rem_euclid(1.0);
        let f = self.textureless;
        let ramp = STRIPE_RAMP.min(0.5 * (1.0 - f));
        if phase < f {
            1.0
        } else if phase < f + ramp {
            1.0 - smooth((phase - f) / ramp)
        } else if phase > 1.0 - ramp {
            smooth((phase - (1.0 - ramp)) / ramp)
        } else {
            0.0
        }
    }

    pub fn color(&self, face: Face, p: &Vec3) -> [f64; 3] {
        let tint = face.tint();
        let w = self.flat_weight(face, p);
        if w >= 1.0 {
            return tint.map(|c| FLAT_SHADE * c);
        }
        let (s, t) = Self::face_coords(face, p);
        let mut out = [0.0; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let n = self.noise(face, ch as u64, s, t);
            let textured = tint[ch] * (0.25 + 0.9 * n);
            *o = (w * FLAT_SHADE * tint[ch] + (1.0 - w) * textured).clamp(0.0, 1.0);
        }
        out
    }

    /// Octave value noise in `[0, 1]`.
    fn noise(&self, face: Face, channel: u64, s: f64, t: f64) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut freq = 1.0 / self.texture_scale;
        for o in 0..self.octaves as u64 {
            // Channels share most of their structure so luma keeps the texture.
            let salt = (face.index() << 8) | (o << 2);
            let shared = self.lattice(salt, s * freq, t * freq);
            let own = self.lattice(salt | (channel + 1) << 40, s * freq, t * freq);
            total += amp * (0.75 * shared + 0.25 * own);
            norm += amp;
            amp *= 0.55;
            freq *= 2.0;
        }
        total / norm
    }

    fn lattice(&self, salt: u64, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (smooth(x - x0), smooth(y - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v = |dx: i64, dy: i64| hash01(self.seed, salt, ix + dx, iy + dy);
        let a = v(0, 0) + (v(1, 0) - v(0, 0)) * fx;
        let b = v(0, 1) + (v(1, 1) - v(0, 1)) * fx;
        a + (b - a) * fy
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash01(seed: u64, salt: u64, x: i64, y: i64) -> f64 {
    let h = splitmix(splitmix(splitmix(seed ^ salt.rotate_left(17)) ^ x as u64) ^ (y as u64).rotate_left(32));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// How far past the pivot the camera aims, in orbit radii. Aiming beyond the
/// pivot keeps the rotation per frame well below the swing of the centre.
const LOOK_BEYOND: f64 = 2.0;

/// Camera-to-world pose of the `i`-th orbit frame.
///
/// The camera swings on a horizontal arc around a pivot near the back wall,
/// always looking at a point slightly in front of the pivot, with a gentle
/// vertical bob.
pub fn orbit_pose(config: &SynthConfig, i: usize) -> Se3Pose {
    let half_d = 0.5 * config.room_size[2];
    let pivot = Vec3::new(0.0, 0.0, half_d - 0.5);
    let n = config.frames.max(2) as f64 - 1.0;
    let s = i as f64 / n;
    let angle = (s - 0.5) * config.orbit_degrees.to_radians();
    let bob = 0.08 * config.room_size[1] * (std::f64::consts::PI * s).sin() - 0.04 * config.room_size[1];
    let center = pivot + Vec3::new(config.orbit_radius * angle.sin(), bob, -config.orbit_radius * angle.cos());
    let look = pivot + Vec3::new(0.3 * config.orbit_radius * angle.sin(), 0.1 * bob, LOOK_BEYOND * config.orbit_radius);
    look_at(&center, &look)
}

fn look_at(center: &Vec3, target: &Vec3) -> Se3Pose {
    let z = (target - center).normalize();
    let down = Vec3::new(0.0, 1.0, 0.0);
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    Se3Pose::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r).into_inner(), *center)
}

/// Renders the colour (box-filtered over `supersample²` samples, quantised to 8 bits) and the
/// pixel-centre depth of one view.
pub fn render_view(
    room: &Room,
    camera: &PinholeCamera,
    pose: &Se3Pose,
    supersample: usize,
) -> Result<SyntheticFrame, Error> {
    let (w, h) = (camera.width, camera.height);
    let rot = pose.rotation_matrix();
    let origin = *pose.translation();
    let mut pixels = Vec::with_capacity(w * h);
    let mut depth = Vec::with_capacity(w * h);
    let trace = |u: f64, v: f64| -> Result<(Hit, f64), Error> {
        let local = camera.ray(u, v);
        let dir = rot * local;
        let hit = room
            .intersect(&origin, &dir)
            .ok_or_else(|| Error::Config("camera ray escaped the room; is the camera inside it?".into()))?;
        // `local` has unit z, so the ray parameter is the camera-frame depth.
        Ok((hit, hit.distance))
    };
    for y in 0..h {
        for x in 0..w {
            let (_, z) = trace(x as f64, y as f64)?;
            depth.push(z);
            let mut c = [0.0; 3];
            let n = supersample;
            let wgt = 1.0 / (n * n) as f64;
            for sy in 0..n {
                for sx in 0..n {
                    let ox = (sx as f64 + 0.5) / n as f64 - 0.5;
                    let oy = (sy as f64 + 0.5) / n as f64 - 0.5;
                    let (hit, _) = trace(x as f64 + ox, y as f64 + oy)?;
                    let col = room.color(hit.face, &hit.point);
                    for ch in 0..3 {
                        c[ch] += wgt * col[ch];
                    }
                }
            }
            pixels.push(c.map(|v| (v * 255.0).round() / 255.0));
        }
    }
    let color = RgbImage::new(w, h, pixels).map_err(Error::Core)?;
    Ok(SyntheticFrame { color: Arc::new(color), depth, pose: *pose })
}

/// Renders a deterministic synthetic sequence.
pub fn generate_synthetic_scene(seed: u64, config: &SynthConfig) -> Result<SyntheticScene, Error> {
    config.validate()?;
    let room = Room::new(seed, config);
    let camera = config.camera();
    let frames = (0..config.frames)
        .map(|i| render_view(&room, &camera, &orbit_pose(config, i), config.supersample))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SyntheticScene { seed, config: config.clone(), camera, frames })
}
