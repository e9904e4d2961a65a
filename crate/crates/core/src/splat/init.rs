//! Scene initialisation from a coloured point cloud.

use alloc::vec::Vec;

use super::{Gaussian3d, SplatScene};
use crate::geometry::Vec3;
use crate::math;
use crate::selection::ColoredPoint;
use crate::{Error, Result};

/// Initial scales are clamped to `[lo, hi] · scene_extent`.
pub const SCALE_CLAMP: (f64, f64) = (1e-4, 0.1);

const INITIAL_OPACITY: f64 = 0.1;
const NEIGHBOUR_RANK: usize = 3;

/// One isotropic Gaussian per point, sized by the distance to its third
/// nearest neighbour. Clouds with fewer than four points use the farthest
/// neighbour available; a lone point gets the lower clamp.
pub fn init_from_point_cloud(points: &[ColoredPoint], scene_extent: f64) -> Result<SplatScene> {
    if points.is_empty() {
        return Err(Error::invalid("cannot initialise a scene from an empty point cloud"));
    }
    if !(scene_extent > 0.0 && scene_extent.is_finite()) {
        return Err(Error::invalid("scene extent must be positive and finite"));
    }
    if points.iter().any(|p| !p.position.iter().all(|c| c.is_finite())) {
        return Err(Error::invalid("point positions must be finite"));
    }
    let positions: Vec<Vec3> = points.iter().map(|p| p.position).collect();
    let tree = KdTree::new(&positions);
    let (lo, hi) = (SCALE_CLAMP.0 * scene_extent, SCALE_CLAMP.1 * scene_extent);
    let gaussians = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = tree.kth_neighbour_distance(i, NEIGHBOUR_RANK).unwrap_or(0.0);
            let color = p.color.map(|c| c.clamp(0.0, 1.0));
            Gaussian3d::isotropic(p.position, d.clamp(lo, hi), INITIAL_OPACITY, color)
        })
        .collect();
    Ok(SplatScene::new(gaussians, [0.0; 3]))
}

#[inline]
fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

/// Balanced k-d tree stored as a permutation of point indices.
struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<usize>,
}

impl<'a> KdTree<'a> {
    fn new(points: &'a [Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build(points, &mut order, 0);
        Self { points, order }
    }

    /// Distance to the `k`-th nearest other point, or to the farthest one if
    /// there are fewer than `k`. `None` for a single point.
    fn kth_neighbour_distance(&self, query: usize, k: usize) -> Option<f64> {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(0, self.order.len(), 0, query, k, &mut best);
        best.last().map(|&(d2, _)| math::sqrt(d2))
    }

    fn search(&self, lo: usize, hi: usize, depth: usize, query: usize, k: usize, best: &mut Vec<(f64, usize)>) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let axis = depth % 3;
        let q = &self.points[query];
        let idx = self.order[mid];
        if idx != query {
            let d2 = dist2(q, &self.points[idx]);
            if best.len() < k || d2 < best[best.len() - 1].0 {
                let at = best.partition_point(|&(d, _)| d <= d2);
                best.insert(at, (d2, idx));
                best.truncate(k);
            }
        }
        let diff = q[axis] - self.points[idx][axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, depth + 1, query, k, best);
        if best.len() < k || diff * diff < best[best.len() - 1].0 {
            self.search(far.0, far.1, depth + 1, query, k, best);
        }
    }
}

fn build(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let (left, right) = order.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut right[1..], depth + 1);
}
