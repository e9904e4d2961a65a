use alloc::vec::Vec;

use super::residual::TargetView;
use super::{
    compare, gain_ratio, huber, huber_weight, OdometryConfig, PhotometricFrame, TrackedPoint, MAX_INVERSE_DEPTH,
    MIN_INVERSE_DEPTH,
};
use crate::geometry::PinholeCamera;
use crate::image::{bilinear_sample, IntensityImage};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthOutcome {
    /// Gauss–Newton ran and the estimate stayed inside the valid range.
    Refined,
    /// No target observes the point, or the residual does not depend on depth.
    Unobservable,
    /// A step left `(1e-4, 1e4)` and the estimate was clamped.
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRefinement {
    pub inverse_depth: f64,
    pub outcome: DepthOutcome,
    /// Robust energy over all targets at the finest level after refinement.
    pub energy: f64,
    pub residual_count: usize,
}

const MIN_INFORMATION: f64 = 1e-12;

/// One-dimensional Gauss–Newton on a point's inverse depth against targets with
/// fixed poses and brightness, coarse to fine.
pub fn refine_inverse_depth(
    point: &TrackedPoint,
    host: &PhotometricFrame,
    targets: &[&PhotometricFrame],
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Result<DepthRefinement> {
    let levels = targets
        .iter()
        .map(|t| t.pyramid().len())
        .chain([host.pyramid().len(), config.pyramid_levels])
        .min()
        .unwrap_or(1);
    refine_from_level(point, host, targets, camera, config, levels)
}

/// [`refine_inverse_depth`] restricted to pyramid levels below `levels`.
pub(crate) fn refine_from_level(
    point: &TrackedPoint,
    host: &PhotometricFrame,
    targets: &[&PhotometricFrame],
    camera: &PinholeCamera,
    config: &OdometryConfig,
    levels: usize,
) -> Result<DepthRefinement> {
    if !(point.inverse_depth > 0.0 && point.inverse_depth.is_finite()) {
        return Err(crate::Error::InvalidDepth(point.inverse_depth));
    }
    let k = config.huber_threshold;
    let ray = camera.ray(point.u, point.v);
    let ha = host.affine();

    let unchanged = |energy: f64, count: usize| DepthRefinement {
        inverse_depth: point.inverse_depth,
        outcome: DepthOutcome::Unobservable,
        energy,
        residual_count: count,
    };

    let mut rho = point.inverse_depth;
    let mut informed = false;
    let mut degenerate = false;
    for level in (0..levels).rev() {
        let s = (1usize << level) as f64;
        let Ok(host_intensity) =
            bilinear_sample(host.pyramid().level(level), (point.u + 0.5) / s - 0.5, (point.v + 0.5) / s - 0.5)
        else {
            continue;
        };
        let cam = camera.at_level(level);
        let views: Vec<TargetView<'_, IntensityImage>> = targets
            .iter()
            .filter(|t| t.id != host.id)
            .map(|t| {
                let relative = t.pose.inverse().compose(&host.pose);
                let ta = t.affine();
                let gain = gain_ratio(host.exposure(), &ha, t.exposure(), &ta);
                TargetView::new(t.pyramid().level(level), cam, &relative, gain, ha.b, ta.b)
            })
            .collect();

        let objective = |rho: f64| -> Vec<Option<f64>> {
            views.iter().map(|v| v.residual(&ray, rho, host_intensity).map(|r| huber(r, k))).collect()
        };

        let mut current = objective(rho);
        if current.iter().all(Option::is_none) {
            continue;
        }
        let mut lambda = config.initial_damping;
        let mut growths = 0;
        for _ in 0..config.max_iterations {
            let mut h = 0.0;
            let mut b = 0.0;
            for v in &views {
                if let Some(j) = v.jacobian(&ray, rho, host_intensity) {
                    let w = huber_weight(j.residual, k);
                    h += w * j.inverse_depth * j.inverse_depth;
                    b += w * j.inverse_depth * j.residual;
                }
            }
            if !(h > MIN_INFORMATION) {
                break;
            }
            informed = true;
            let step = -b / (h * (1.0 + lambda));
            let mut trial = rho + step;
            let mut clamped = false;
            if !(trial > MIN_INVERSE_DEPTH) {
                trial = MIN_INVERSE_DEPTH * 1.0001;
                clamped = true;
            } else if !(trial < MAX_INVERSE_DEPTH) {
                trial = MAX_INVERSE_DEPTH * 0.9999;
                clamped = true;
            }
            let candidate = objective(trial);
            let (before, after) = compare(&current, &candidate);
            if after < before && candidate.iter().any(Option::is_some) {
                rho = trial;
                current = candidate;
                degenerate |= clamped;
                lambda = (lambda * 0.5).max(1e-7);
                growths = 0;
                if step.abs() < 1e-8 * rho.max(1e-3) {
                    break;
                }
            } else {
                lambda *= 4.0;
                growths += 1;
                if growths >= 5 {
                    break;
                }
            }
        }
    }

    // Final-level bookkeeping.
    let host_intensity = bilinear_sample(host.image(), point.u, point.v).ok();
    let mut energy = 0.0;
    let mut count = 0;
    if let Some(hi) = host_intensity {
        for t in targets.iter().filter(|t| t.id != host.id) {
            let relative = t.pose.inverse().compose(&host.pose);
            let ta = t.affine();
            let gain = gain_ratio(host.exposure(), &ha, t.exposure(), &ta);
            let view = TargetView::new(t.image(), *camera, &relative, gain, ha.b, ta.b);
            if let Some(r) = view.residual(&ray, rho, hi) {
                energy += huber(r, k);
                count += 1;
            }
        }
    }
    if !informed {
        return Ok(unchanged(energy, count));
    }
    let outcome = if degenerate { DepthOutcome::Degenerate } else { DepthOutcome::Refined };
    Ok(DepthRefinement { inverse_depth: rho, outcome, energy, residual_count: count })
}

/// Sparse pattern around a point, assumed to share its inverse depth.
pub(crate) const PATTERN: [(f64, f64); 8] =
    [(0.0, -2.0), (-1.0, -1.0), (1.0, -1.0), (-2.0, 0.0), (0.0, 0.0), (2.0, 0.0), (-1.0, 1.0), (0.0, 2.0)];
const MAX_SEARCH_STEPS: usize = 4000;

/// Exhaustive search along the epipolar lines of all targets at full
/// resolution. Each inverse depth in `range` is scored by the mean robust
/// residual of a small pixel pattern around the point, and steps are spaced so
/// that no target moves by more than half a pixel. Returns `None` when no
/// candidate is seen by at least half of the pattern samples.
pub fn search_inverse_depth(
    point: &TrackedPoint,
    host: &PhotometricFrame,
    targets: &[&PhotometricFrame],
    camera: &PinholeCamera,
    config: &OdometryConfig,
    range: (f64, f64),
) -> Option<f64> {
    let lo = range.0.max(MIN_INVERSE_DEPTH * 1.0001);
    let hi = range.1.min(MAX_INVERSE_DEPTH * 0.9999);
    if !(hi > lo) {
        return None;
    }
    let k = config.huber_threshold;
    let ha = host.affine();
    let samples: Vec<(crate::geometry::Vec3, f64)> = PATTERN
        .iter()
        .filter_map(|(du, dv)| {
            let (u, v) = (point.u + du, point.v + dv);
            Some((camera.ray(u, v), bilinear_sample(host.image(), u, v).ok()?))
        })
        .collect();
    let views: Vec<TargetView<'_, IntensityImage>> = targets
        .iter()
        .filter(|t| t.id != host.id)
        .map(|t| {
            let relative = t.pose.inverse().compose(&host.pose);
            let ta = t.affine();
            let gain = gain_ratio(host.exposure(), &ha, t.exposure(), &ta);
            TargetView::new(t.image(), *camera, &relative, gain, ha.b, ta.b)
        })
        .collect();
    if samples.is_empty() || views.is_empty() {
        return None;
    }

    let ray = camera.ray(point.u, point.v);
    let mut span: f64 = 0.0;
    for v in &views {
        let (Some(a), Some(b)) = (v.project(&ray, lo), v.project(&ray, hi)) else {
            span = span.max(MAX_SEARCH_STEPS as f64);
            continue;
        };
        span = span.max(crate::math::sqrt((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1)));
    }
    let steps = ((2.0 * span) as usize + 2).min(MAX_SEARCH_STEPS);
    let needed = (samples.len() * views.len()).div_ceil(2);

    let mut best: Option<(f64, f64)> = None;
    for i in 0..steps {
        let rho = lo + (hi - lo) * i as f64 / (steps - 1) as f64;
        let mut e = 0.0;
        let mut n = 0;
        for v in &views {
            for (r, hi_) in &samples {
                if let Some(res) = v.residual(r, rho, *hi_) {
                    e += huber(res, k);
                    n += 1;
                }
            }
        }
        if n < needed {
            continue;
        }
        let cost = e / n as f64;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, rho));
        }
    }
    best.map(|(_, rho)| rho)
}
