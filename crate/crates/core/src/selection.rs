//! Pixel selection: gradient-driven tracking pixels, one extra pixel per
//! uncovered grid cell, and fill points for cells without any gradient.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{backproject, PinholeCamera, Se3Pose, Vec3};
use crate::image::{IntensityImage, Rgb};
use crate::math;
use crate::odometry::{PhotometricFrame, PointStatus, TrackedPoint, MAX_INVERSE_DEPTH, MIN_INVERSE_DEPTH};
use crate::{Error, Result};

/// Fixed part of the per-block threshold, in intensity per pixel (about 7/255).
const THRESHOLD_OFFSET: f64 = 7.0 / 255.0;
const MAX_OFFSET_SCALE: f64 = 16.0;
const BISECTION_STEPS: usize = 10;
/// Below this many candidate pixels the image cannot be tracked.
pub const MIN_CANDIDATES: usize = 50;
/// Tracking pixels keep this distance from the image border.
pub const BORDER: usize = 2;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SelectionConfig {
    pub target_tracking_count: usize,
    pub extra_cell_size: usize,
    pub gradient_floor: f64,
    pub fill_neighbor_count: usize,
    pub block_size: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            target_tracking_count: 800,
            extra_cell_size: 8,
            gradient_floor: 0.004,
            fill_neighbor_count: 5,
            block_size: 32,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_tracking_count == 0 || self.block_size == 0 {
            return Err(Error::invalid("selection counts must be positive"));
        }
        if self.extra_cell_size < 2 {
            return Err(Error::invalid("selection.extra_cell_size must be at least 2"));
        }
        if self.fill_neighbor_count == 0 {
            return Err(Error::invalid("selection.fill_neighbor_count must be at least 1"));
        }
        if !(self.gradient_floor >= 0.0 && self.gradient_floor.is_finite()) {
            return Err(Error::invalid("selection.gradient_floor must be non-negative"));
        }
        Ok(())
    }
}

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Output of [`select_pixels`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub tracking: Vec<Pixel>,
    pub extra: Vec<Pixel>,
    pub fill: Vec<Pixel>,
    /// Row-major flags over `extra_cell_size` cells: does the cell hold a
    /// tracking or extra pixel.
    pub occupancy: Vec<bool>,
    pub cells_x: usize,
    pub cells_y: usize,
}

/// Cell grid of a given size over an image, partial cells included.
#[derive(Debug, Clone, Copy)]
struct Grid {
    size: usize,
    width: usize,
    height: usize,
    cols: usize,
    rows: usize,
}

impl Grid {
    fn new(width: usize, height: usize, size: usize) -> Self {
        Self { size, width, height, cols: width.div_ceil(size), rows: height.div_ceil(size) }
    }

    fn cell_of(&self, p: Pixel) -> usize {
        (p.y / self.size) * self.cols + p.x / self.size
    }

    fn bounds(&self, cell: usize) -> (usize, usize, usize, usize) {
        let (cx, cy) = (cell % self.cols, cell / self.cols);
        let x0 = cx * self.size;
        let y0 = cy * self.size;
        (x0, y0, (x0 + self.size).min(self.width), (y0 + self.size).min(self.height))
    }

    fn len(&self) -> usize {
        self.cols * self.rows
    }
}

struct Thresholds {
    medians: Vec<f64>,
    grid: Grid,
}

impl Thresholds {
    fn new(grad: &[f64], width: usize, height: usize, block: usize) -> Self {
        let grid = Grid::new(width, height, block);
        let mut medians = Vec::with_capacity(grid.len());
        let mut scratch = Vec::with_capacity(block * block);
        for cell in 0..grid.len() {
            let (x0, y0, x1, y1) = grid.bounds(cell);
            scratch.clear();
            for y in y0..y1 {
                scratch.extend_from_slice(&grad[y * width + x0..y * width + x1]);
            }
            medians.push(math::median_in_place(&mut scratch));
        }
        Self { medians, grid }
    }

    fn at(&self, p: Pixel, scale: f64, floor: f64) -> f64 {
        (self.medians[self.grid.cell_of(p)] + scale * THRESHOLD_OFFSET).max(floor)
    }
}

fn candidates(grad: &[f64], width: usize, height: usize, th: &Thresholds, scale: f64, floor: f64) -> Vec<Pixel> {
    let mut out = Vec::new();
    if width <= 2 * BORDER || height <= 2 * BORDER {
        return out;
    }
    for y in BORDER..height - BORDER {
        for x in BORDER..width - BORDER {
            let p = Pixel::new(x, y);
            if grad[y * width + x] > th.at(p, scale, floor) {
                out.push(p);
            }
        }
    }
    out
}

/// Keeps the strongest candidate per suppression cell (first in row-major
/// order on ties), returned in row-major order.
fn suppress(cands: &[Pixel], grad: &[f64], width: usize, grid: &Grid) -> Vec<Pixel> {
    let mut best: BTreeMap<usize, Pixel> = BTreeMap::new();
    for &p in cands {
        let cell = grid.cell_of(p);
        let g = grad[p.y * width + p.x];
        match best.get(&cell) {
            Some(q) if grad[q.y * width + q.x] >= g => {}
            _ => {
                best.insert(cell, p);
            }
        }
    }
    let mut out: Vec<Pixel> = best.into_values().collect();
    out.sort_by_key(|p| (p.y, p.x));
    out
}

/// Gradient-driven selection of pose-tracking pixels.
///
/// Pixels above `median(block) + s·offset` (and above the gradient floor) are
/// candidates; one survivor is kept per suppression cell sized so that the
/// image holds roughly `target_tracking_count` cells. The offset scale `s` is
/// bisected to steer the count toward the target.
pub fn select_tracking_pixels(image: &IntensityImage, config: &SelectionConfig) -> Result<Vec<Pixel>> {
    config.validate()?;
    let (w, h) = (image.width(), image.height());
    if w < 2 * config.block_size || h < 2 * config.block_size {
        return Err(Error::invalid("image must be at least two selection blocks per side"));
    }
    let grad = image.gradient_magnitude_map();
    select_from_gradient(&grad, w, h, config)
}

fn select_from_gradient(grad: &[f64], w: usize, h: usize, config: &SelectionConfig) -> Result<Vec<Pixel>> {
    let th = Thresholds::new(grad, w, h, config.block_size);
    let floor = config.gradient_floor;
    let base = candidates(grad, w, h, &th, 0.0, floor);
    if base.len() < MIN_CANDIDATES {
        return Err(Error::InsufficientTexture { candidates: base.len() });
    }
    let spacing = (math::floor(math::sqrt((w * h) as f64 / config.target_tracking_count as f64)) as usize).max(1);
    let grid = Grid::new(w, h, spacing);
    let target = config.target_tracking_count;
    let run = |scale: f64| suppress(&candidates(grad, w, h, &th, scale, floor), grad, w, &grid);

    let at_zero = suppress(&base, grad, w, &grid);
    if at_zero.len() <= target {
        return Ok(at_zero);
    }
    let (mut lo, mut hi) = (0.0, MAX_OFFSET_SCALE);
    let mut lo_set = at_zero;
    let mut hi_set = run(hi);
    if hi_set.len() >= target {
        return Ok(hi_set);
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let set = run(mid);
        if set.len() > target {
            lo = mid;
            lo_set = set;
        } else {
            hi = mid;
            hi_set = set;
        }
    }
    let err = |n: usize| n.abs_diff(target);
    Ok(if err(hi_set.len()) <= err(lo_set.len()) { hi_set } else { lo_set })
}

/// One position-only pixel per grid cell that holds no tracking pixel: the
/// cell's strongest gradient, if it reaches the gradient floor.
pub fn select_extra_pixels(image: &IntensityImage, tracking: &[Pixel], config: &SelectionConfig) -> Result<Vec<Pixel>> {
    config.validate()?;
    let grad = image.gradient_magnitude_map();
    Ok(extra_from_gradient(&grad, image.width(), image.height(), tracking, config))
}

fn extra_from_gradient(grad: &[f64], w: usize, h: usize, tracking: &[Pixel], config: &SelectionConfig) -> Vec<Pixel> {
    let grid = Grid::new(w, h, config.extra_cell_size);
    let mut covered = vec![false; grid.len()];
    for &p in tracking {
        if p.x < w && p.y < h {
            covered[grid.cell_of(p)] = true;
        }
    }
    let mut out = Vec::new();
    for cell in 0..grid.len() {
        if covered[cell] {
            continue;
        }
        let (x0, y0, x1, y1) = grid.bounds(cell);
        let mut best: Option<(f64, Pixel)> = None;
        for y in y0..y1 {
            for x in x0..x1 {
                let g = grad[y * w + x];
                if best.map_or(true, |(b, _)| g > b) {
                    best = Some((g, Pixel::new(x, y)));
                }
            }
        }
        if let Some((g, p)) = best {
            if g >= config.gradient_floor {
                out.push(p);
            }
        }
    }
    out
}

/// Centres of the cells whose strongest gradient is below the floor.
fn gradientless_cells(grad: &[f64], w: usize, h: usize, config: &SelectionConfig) -> Vec<Pixel> {
    let grid = Grid::new(w, h, config.extra_cell_size);
    let mut out = Vec::new();
    for cell in 0..grid.len() {
        let (x0, y0, x1, y1) = grid.bounds(cell);
        let flat = (y0..y1).all(|y| grad[y * w + x0..y * w + x1].iter().all(|&g| g < config.gradient_floor));
        if flat {
            out.push(Pixel::new((x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2));
        }
    }
    out
}

/// Runs all three selection tiers on one image.
pub fn select_pixels(image: &IntensityImage, config: &SelectionConfig) -> Result<SelectionResult> {
    let tracking = select_tracking_pixels(image, config)?;
    let (w, h) = (image.width(), image.height());
    let grad = image.gradient_magnitude_map();
    let extra = extra_from_gradient(&grad, w, h, &tracking, config);
    let fill = gradientless_cells(&grad, w, h, config);
    let grid = Grid::new(w, h, config.extra_cell_size);
    let mut occupancy = vec![false; grid.len()];
    for p in tracking.iter().chain(&extra) {
        occupancy[grid.cell_of(*p)] = true;
    }
    Ok(SelectionResult { tracking, extra, fill, occupancy, cells_x: grid.cols, cells_y: grid.rows })
}

/// Mean inverse depth of the `k` points nearest to `(u, v)` in pixel distance.
/// Ties are broken by position in `points`. Returns `None` when `points` is empty.
pub fn knn_mean_inverse_depth(
    points: impl IntoIterator<Item = (f64, f64, f64)>,
    u: f64,
    v: f64,
    k: usize,
) -> Option<f64> {
    let mut d: Vec<(f64, usize, f64)> = points
        .into_iter()
        .enumerate()
        .map(|(i, (pu, pv, rho))| ((pu - u) * (pu - u) + (pv - v) * (pv - v), i, rho))
        .collect();
    if d.is_empty() || k == 0 {
        return None;
    }
    let k = k.min(d.len());
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Some(d[..k].iter().map(|e| e.2).sum::<f64>() / k as f64)
}

/// Places one gradient-fill point at the centre of every gradient-less cell of
/// `frame`, with the mean inverse depth of its `k` nearest non-fill points
/// hosted in the same frame.
pub fn fill_gradientless_regions(
    cloud: &[TrackedPoint],
    frame: &PhotometricFrame,
    config: &SelectionConfig,
) -> Result<Vec<TrackedPoint>> {
    config.validate()?;
    let sources: Vec<(f64, f64, f64)> = cloud
        .iter()
        .filter(|p| p.host == frame.id && p.status != PointStatus::GradientFill)
        .map(|p| (p.u, p.v, p.inverse_depth))
        .collect();
    if sources.is_empty() {
        return Err(Error::invalid("fill needs at least one tracked point in the host frame"));
    }
    if let Some(bad) = sources.iter().find(|s| !(s.2 > MIN_INVERSE_DEPTH && s.2 < MAX_INVERSE_DEPTH)) {
        return Err(Error::InvalidDepth(bad.2));
    }
    let image = frame.image();
    let grad = image.gradient_magnitude_map();
    let cells = gradientless_cells(&grad, image.width(), image.height(), config);
    Ok(cells
        .into_iter()
        .map(|c| {
            let (u, v) = (c.x as f64, c.y as f64);
            let rho = knn_mean_inverse_depth(sources.iter().copied(), u, v, config.fill_neighbor_count)
                .expect("sources is non-empty");
            TrackedPoint {
                host: frame.id,
                u,
                v,
                inverse_depth: rho,
                status: PointStatus::GradientFill,
                color: frame.color_at(u, v),
            }
        })
        .collect())
}

/// A world-space point handed to the splatting initialiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub position: Vec3,
    pub color: Rgb,
    pub status: PointStatus,
}

/// Backprojects every point through its host pose. Points with an invalid
/// inverse depth are skipped.
pub fn export_point_cloud(
    cloud: &[TrackedPoint],
    camera: &PinholeCamera,
    poses: &BTreeMap<usize, Se3Pose>,
) -> Result<Vec<ColoredPoint>> {
    let mut out = Vec::with_capacity(cloud.len());
    for p in cloud {
        let pose = poses
            .get(&p.host)
            .ok_or_else(|| Error::InvalidState(alloc::format!("no pose for host frame {}", p.host)))?;
        match backproject(p.u, p.v, p.inverse_depth, camera, pose) {
            Ok(position) => out.push(ColoredPoint { position, color: p.color, status: p.status }),
            Err(Error::InvalidDepth(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;

    fn checkerboard(w: usize, h: usize, square: usize) -> IntensityImage {
        IntensityImage::from_fn(w, h, |x, y| if (x / square + y / square) % 2 == 0 { 0.2 } else { 0.8 })
    }

    #[test]
    fn constant_image_has_no_texture() {
        let img = IntensityImage::from_fn(64, 64, |_, _| 0.5);
        match select_tracking_pixels(&img, &SelectionConfig::default()) {
            Err(Error::InsufficientTexture { candidates }) => assert_eq!(candidates, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_edge_pixels_hug_the_edge() {
        let img = IntensityImage::from_fn(96, 96, |x, _| if x < 40 { 0.1 } else { 0.9 });
        let px = select_tracking_pixels(&img, &SelectionConfig::default()).unwrap();
        assert!(!px.is_empty());
        for p in px {
            assert!((p.x as f64 - 39.5).abs() <= 1.0, "{p:?}");
        }
    }

    #[test]
    fn checkerboard_count_is_near_target() {
        let img = checkerboard(256, 256, 4);
        let cfg = SelectionConfig::default();
        let n = select_tracking_pixels(&img, &cfg).unwrap().len() as f64;
        let t = cfg.target_tracking_count as f64;
        assert!((n - t).abs() <= 0.2 * t, "{n}");
    }

    #[test]
    fn tracking_pixels_respect_border() {
        let img = IntensityImage::from_fn(64, 64, |x, y| ((x * 7 + y * 13) % 17) as f64 / 16.0);
        for p in select_tracking_pixels(&img, &SelectionConfig::default()).unwrap() {
            assert!(p.x >= BORDER && p.y >= BORDER && p.x < 64 - BORDER && p.y < 64 - BORDER);
        }
    }

    #[test]
    fn full_coverage_leaves_no_extras() {
        let img = checkerboard(64, 64, 3);
        let cfg = SelectionConfig::default();
        let all: Vec<Pixel> = (0..64).flat_map(|y| (0..64).map(move |x| Pixel::new(x, y))).collect();
        assert!(select_extra_pixels(&img, &all, &cfg).unwrap().is_empty());
    }

    #[test]
    fn one_extra_per_textured_cell() {
        let img = checkerboard(64, 64, 3);
        let cfg = SelectionConfig::default();
        let extra = select_extra_pixels(&img, &[], &cfg).unwrap();
        let grad = img.gradient_magnitude_map();
        let grid = Grid::new(64, 64, cfg.extra_cell_size);
        let textured = (0..grid.len())
            .filter(|&c| {
                let (x0, y0, x1, y1) = grid.bounds(c);
                (y0..y1).any(|y| (x0..x1).any(|x| grad[y * 64 + x] >= cfg.gradient_floor))
            })
            .count();
        assert_eq!(extra.len(), textured);
        let mut cells: Vec<usize> = extra.iter().map(|p| grid.cell_of(*p)).collect();
        cells.dedup();
        assert_eq!(cells.len(), extra.len());
    }

    #[test]
    fn tiers_are_disjoint_and_fill_is_flat() {
        let img = IntensityImage::from_fn(96, 96, |x, y| {
            if x < 48 {
                0.5
            } else {
                0.5 + 0.4 * math::sin(x as f64 * 0.9) * math::cos(y as f64 * 0.7)
            }
        });
        let cfg = SelectionConfig::default();
        let r = select_pixels(&img, &cfg).unwrap();
        let grad = img.gradient_magnitude_map();
        for f in &r.fill {
            assert!(grad[f.y * 96 + f.x] < cfg.gradient_floor);
            assert!(!r.tracking.contains(f) && !r.extra.contains(f));
        }
        for e in &r.extra {
            assert!(!r.tracking.contains(e));
        }
        assert!(!r.fill.is_empty());
    }

    #[test]
    fn knn_mean_breaks_ties_by_index() {
        let pts = [(1.0, 0.0, 1.0), (-1.0, 0.0, 3.0), (0.0, 1.0, 5.0)];
        assert_eq!(knn_mean_inverse_depth(pts, 0.0, 0.0, 2), Some(2.0));
        assert_eq!(knn_mean_inverse_depth(pts, 0.0, 0.0, 10), Some(3.0));
        assert_eq!(knn_mean_inverse_depth(core::iter::empty(), 0.0, 0.0, 2), None);
    }

    #[test]
    fn fill_uses_neighbour_mean() {
        let img = IntensityImage::from_fn(64, 64, |x, _| if x < 32 { 0.5 } else { (x % 2) as f64 });
        let frame = PhotometricFrame::from_image(3, &img, 1, 1.0).unwrap();
        let cloud: Vec<TrackedPoint> = (0..6)
            .map(|i| TrackedPoint {
                host: 3,
                u: 40.0 + i as f64,
                v: 10.0,
                inverse_depth: 0.5,
                status: PointStatus::PoseTracking,
                color: [0.0; 3],
            })
            .collect();
        let fill = fill_gradientless_regions(&cloud, &frame, &SelectionConfig::default()).unwrap();
        assert!(!fill.is_empty());
        assert!(fill.iter().all(|p| p.inverse_depth == 0.5 && p.status == PointStatus::GradientFill));
        assert!(fill_gradientless_regions(&[], &frame, &SelectionConfig::default()).is_err());
    }

    #[test]
    fn export_reprojects_to_host_pixels() {
        let cam = PinholeCamera::new(60.0, 60.0, 31.5, 31.5, 64, 64).unwrap();
        let pose = crate::geometry::se3_exp(&crate::geometry::Twist::new(0.1, -0.2, 0.3, 0.05, 0.1, -0.02)).unwrap();
        let mut poses = BTreeMap::new();
        poses.insert(0, pose);
        let pts: Vec<TrackedPoint> = (0..20)
            .map(|i| TrackedPoint {
                host: 0,
                u: 3.0 * i as f64,
                v: 60.0 - 2.5 * i as f64,
                inverse_depth: 0.2 + 0.1 * i as f64,
                status: PointStatus::PositionOnly,
                color: [0.1, 0.2, 0.3],
            })
            .collect();
        let out = export_point_cloud(&pts, &cam, &poses).unwrap();
        assert_eq!(out.len(), pts.len());
        for (p, c) in pts.iter().zip(&out) {
            let local = pose.inverse().transform_point(&c.position);
            let pr = project(&local, &cam).unwrap();
            assert!((pr.u - p.u).abs() < 1e-6 && (pr.v - p.v).abs() < 1e-6);
        }
        poses.clear();
        assert!(matches!(export_point_cloud(&pts, &cam, &poses), Err(Error::InvalidState(_))));
    }

    #[test]
    fn export_identity_principal_point() {
        let cam = PinholeCamera::new(50.0, 50.0, 20.0, 10.0, 40, 30).unwrap();
        let mut poses = BTreeMap::new();
        poses.insert(1, Se3Pose::identity());
        let p = TrackedPoint { host: 1, u: 20.0, v: 10.0, inverse_depth: 1.0, status: PointStatus::PoseTracking, color: [1.0; 3] };
        let out = export_point_cloud(&[p], &cam, &poses).unwrap();
        assert!((out[0].position - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }
}
