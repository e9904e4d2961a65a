//! Tiled front-to-back rasterisation and the matching backward pass.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::Matrix2;

use super::project::{conic_to_cov_grad, project_backward, project_in, View};
use super::{SplatScene, PARAMS_PER_GAUSSIAN};
use crate::geometry::{PinholeCamera, Se3Pose, Vec3};
use crate::image::{Rgb, RgbImage};
use crate::math;
use crate::{Error, Result};

pub const TILE_SIZE: usize = 16;
/// Per-splat alpha is clamped to this value.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions with a smaller alpha are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Blending stops once the transmittance falls below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub image: RgbImage,
    /// Transmittance left after the last blended splat, per pixel.
    pub transmittance: Vec<f64>,
}

/// Loss gradient for one Gaussian. `mean2d` is the gradient with respect to
/// the projected centre in pixels; it is not a stored parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianGradient {
    pub position: Vec3,
    pub log_scale: Vec3,
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Rgb,
    pub mean2d: [f64; 2],
}

impl GaussianGradient {
    /// Same layout as [`super::Gaussian3d::params`].
    pub fn params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(self.position.as_slice());
        p[3..6].copy_from_slice(self.log_scale.as_slice());
        p[6..10].copy_from_slice(&self.rotation);
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(&self.color);
        p
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Splat {
    pub index: usize,
    mean: [f64; 2],
    cov: Matrix2<f64>,
    conic: [f64; 3],
    opacity: f64,
    color: Rgb,
    depth: f64,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]`.
    bounds: [usize; 4],
}

/// Copy of the per-pixel fields of a splat, stored contiguously per tile.
#[derive(Debug, Clone, Copy)]
struct TileEntry {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    /// Exponents above this give an alpha below `ALPHA_MIN` even after rounding.
    cutoff: f64,
    color: Rgb,
    /// Inclusive pixel bounds `[x0, x1, y0, y1]`.
    bounds: [u32; 4],
    /// Position in `Raster::splats`.
    slot: u32,
}

impl TileEntry {
    fn new(slot: usize, s: &Splat) -> Self {
        Self {
            mean: s.mean,
            conic: s.conic,
            opacity: s.opacity,
            cutoff: math::ln(s.opacity / ALPHA_MIN) * (1.0 + 1e-9) + 1e-9,
            color: s.color,
            bounds: s.bounds.map(|b| b as u32),
            slot: slot as u32,
        }
    }

    #[inline]
    fn covers(&self, x: u32, y: u32) -> bool {
        x >= self.bounds[0] && x <= self.bounds[1] && y >= self.bounds[2] && y <= self.bounds[3]
    }

    /// `(alpha, unclamped alpha, gaussian value, dx, dy)`, or `None` when the
    /// alpha is below `ALPHA_MIN`.
    #[inline]
    fn eval(&self, x: usize, y: usize) -> Option<(f64, f64, f64, f64, f64)> {
        if !self.covers(x as u32, y as u32) {
            return None;
        }
        let dx = x as f64 - self.mean[0];
        let dy = y as f64 - self.mean[1];
        let [a, b, c] = self.conic;
        let power = 0.5 * (a * dx * dx + c * dy * dy) + b * dx * dy;
        if power > self.cutoff {
            return None;
        }
        let g = math::exp(-power);
        let raw = self.opacity * g;
        let alpha = raw.min(ALPHA_MAX);
        if alpha < ALPHA_MIN {
            return None;
        }
        Some((alpha, raw, g, dx, dy))
    }
}

/// Forward state kept for the backward pass.
pub(crate) struct Raster {
    view: View,
    pub splats: Vec<Splat>,
    tiles: Vec<Vec<TileEntry>>,
    tiles_x: usize,
    /// Per pixel: length of the tile-list prefix that was blended.
    last: Vec<u32>,
    pub rendered: Rendered,
}

/// Pixel-space extent of the region where the splat can reach `ALPHA_MIN`:
/// `dᵀ Σ⁻¹ d ≤ 2 ln(255 o)`. `None` if it can never get there.
fn bounds(mean: [f64; 2], cov: &Matrix2<f64>, opacity: f64, camera: &PinholeCamera) -> Option<[usize; 4]> {
    let reach = 2.0 * math::ln(opacity / ALPHA_MIN);
    if !(reach > 0.0) {
        return None;
    }
    let m = math::sqrt(reach) * (1.0 + 1e-9);
    let rx = m * math::sqrt(cov[(0, 0)]);
    let ry = m * math::sqrt(cov[(1, 1)]);
    let x0 = math::ceil(mean[0] - rx).max(0.0);
    let x1 = math::floor(mean[0] + rx).min((camera.width - 1) as f64);
    let y0 = math::ceil(mean[1] - ry).max(0.0);
    let y1 = math::floor(mean[1] + ry).min((camera.height - 1) as f64);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

pub(crate) fn rasterize(scene: &SplatScene, camera: &PinholeCamera, pose: &Se3Pose) -> Raster {
    let view = View::new(pose);
    let mut splats: Vec<Splat> = scene
        .gaussians
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let p = project_in(g, camera, &view)?;
            if !p.mean2d.iter().all(|m| m.is_finite()) {
                return None;
            }
            let bounds = bounds(p.mean2d, &p.cov2d, p.opacity, camera)?;
            Some(Splat {
                index,
                mean: p.mean2d,
                cov: p.cov2d,
                conic: p.conic(),
                opacity: p.opacity,
                color: p.color,
                depth: p.depth,
                bounds,
            })
        })
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));

    let (w, h) = (camera.width, camera.height);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bounds;
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tiles[ty * tiles_x + tx].push(TileEntry::new(si, s));
            }
        }
    }

    let bg = scene.background;
    let mut pixels = vec![[0.0; 3]; w * h];
    let mut transmittance = vec![1.0; w * h];
    let mut last = vec![0u32; w * h];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let list = &tiles[ty * tiles_x + tx];
            for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
                for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                    let mut t = 1.0;
                    let mut c = [0.0; 3];
                    let mut n = 0;
                    for (j, s) in list.iter().enumerate() {
                        let Some((a, ..)) = s.eval(x, y) else { continue };
                        for ch in 0..3 {
                            c[ch] += s.color[ch] * a * t;
                        }
                        t *= 1.0 - a;
                        n = j + 1;
                        if t < TRANSMITTANCE_MIN {
                            break;
                        }
                    }
                    let p = y * w + x;
                    for ch in 0..3 {
                        c[ch] += t * bg[ch];
                    }
                    pixels[p] = c;
                    transmittance[p] = t;
                    last[p] = n as u32;
                }
            }
        }
    }
    let image = RgbImage::filled(w, h, bg);
    let mut image = image;
    image.pixels_mut().copy_from_slice(&pixels);
    Raster { view, splats, tiles, tiles_x, last, rendered: Rendered { image, transmittance } }
}

/// Renders `scene` from the camera at `pose` (camera-to-world).
pub fn render(scene: &SplatScene, camera: &PinholeCamera, pose: &Se3Pose) -> Rendered {
    rasterize(scene, camera, pose).rendered
}

#[derive(Clone, Copy, Default)]
struct PixelGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: Rgb,
}

pub(crate) fn backward(
    raster: &Raster,
    scene: &SplatScene,
    camera: &PinholeCamera,
    upstream: &[Rgb],
) -> Vec<GaussianGradient> {
    let (w, h) = (camera.width, camera.height);
    let bg = scene.background;
    let mut acc = vec![PixelGrad::default(); raster.splats.len()];
    for (tile, list) in raster.tiles.iter().enumerate() {
        let (tx, ty) = (tile % raster.tiles_x, tile / raster.tiles_x);
        for y in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(h) {
            for x in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(w) {
                let p = y * w + x;
                let up = upstream[p];
                let mut t = raster.rendered.transmittance[p];
                let mut after = [t * bg[0], t * bg[1], t * bg[2]];
                for s in list[..raster.last[p] as usize].iter().rev() {
                    let Some((a, raw, g, dx, dy)) = s.eval(x, y) else { continue };
                    let t_k = t / (1.0 - a);
                    let weight = a * t_k;
                    let out = &mut acc[s.slot as usize];
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        out.color[ch] += weight * up[ch];
                        d_alpha += up[ch] * (s.color[ch] * t_k - after[ch] / (1.0 - a));
                        after[ch] += s.color[ch] * weight;
                    }
                    t = t_k;
                    if raw > ALPHA_MAX {
                        continue;
                    }
                    out.opacity += g * d_alpha;
                    let d_power = a * d_alpha;
                    let [ca, cb, cc] = s.conic;
                    out.mean[0] += d_power * (ca * dx + cb * dy);
                    out.mean[1] += d_power * (cb * dx + cc * dy);
                    out.conic[0] -= 0.5 * d_power * dx * dx;
                    out.conic[1] -= d_power * dx * dy;
                    out.conic[2] -= 0.5 * d_power * dy * dy;
                }
            }
        }
    }

    let mut grads = vec![GaussianGradient::default(); scene.gaussians.len()];
    for (s, a) in raster.splats.iter().zip(&acc) {
        let g = &scene.gaussians[s.index];
        let d_cov = conic_to_cov_grad(&s.cov, a.conic);
        let pg = project_backward(g, camera, &raster.view, a.mean, d_cov);
        grads[s.index] = GaussianGradient {
            position: pg.position,
            log_scale: pg.log_scale,
            rotation: pg.rotation,
            opacity_logit: a.opacity * s.opacity * (1.0 - s.opacity),
            color: a.color,
            mean2d: a.mean,
        };
    }
    grads
}

/// Gradients of `Σ_p upstream[p] · pixel[p]` with respect to every Gaussian
/// parameter, in scene order. Gaussians that are not drawn get zeros.
pub fn render_backward(
    scene: &SplatScene,
    camera: &PinholeCamera,
    pose: &Se3Pose,
    upstream: &[Rgb],
) -> Result<Vec<GaussianGradient>> {
    if upstream.len() != camera.width * camera.height {
        return Err(Error::invalid("upstream gradient size does not match the camera"));
    }
    let raster = rasterize(scene, camera, pose);
    Ok(backward(&raster, scene, camera, upstream))
}
