//! Monocular initialisation: jointly estimates the poses of the first few frames
//! and the inverse depths of the first keyframe's tracking points.
//!
//! Frame tracking needs depths and depth refinement needs poses, so the first
//! window is solved as one small photometric alignment problem. Every residual
//! touches exactly one frame block and one inverse depth, which makes the
//! Schur complement over the depths cheap. Scale is a free gauge; it is pinned
//! by rescaling the mean inverse depth back to the configured value after each
//! accepted step.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use super::depth::{search_inverse_depth, PATTERN};
use super::residual::TargetView;
use super::{
    compare, gain_ratio, huber, huber_weight, AffineBrightness, OdometryConfig, PhotometricFrame, PointStatus, TrackedPoint,
    MAX_INVERSE_DEPTH, MIN_INVERSE_DEPTH,
};
use crate::geometry::{se3_exp, PinholeCamera, Se3Pose, Twist, Vec3};
use crate::image::{bilinear_sample, IntensityImage};
use crate::{Error, Result};

type Vec8 = SVector<f64, 8>;
type Mat8 = SMatrix<f64, 8, 8>;

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    /// Camera-to-world poses of the targets, in input order.
    pub poses: Vec<Se3Pose>,
    pub affines: Vec<AffineBrightness>,
    /// Host points with updated inverse depths (same order as the input).
    pub points: Vec<TrackedPoint>,
    /// Final robust photometric energy at the finest level (without the prior).
    pub energy: f64,
}

#[derive(Clone)]
struct FrameState {
    relative: Se3Pose,
    affine: AffineBrightness,
}

struct Prepared {
    index: usize,
    /// Per level, the pattern samples `(ray, host intensity)` that fall inside
    /// the host image. The pattern shares the point's inverse depth.
    samples: Vec<Vec<(Vec3, f64)>>,
}

/// Jointly aligns `targets` to `host`, estimating target poses, target affine
/// brightness and the inverse depths of the host's pose-tracking points.
pub fn bootstrap_window(
    host: &PhotometricFrame,
    targets: &[&PhotometricFrame],
    points: &[TrackedPoint],
    camera: &PinholeCamera,
    config: &OdometryConfig,
) -> Result<BootstrapResult> {
    if targets.is_empty() {
        return Err(Error::invalid("bootstrap needs at least one target frame"));
    }
    let levels = targets
        .iter()
        .map(|t| t.pyramid().len())
        .chain([host.pyramid().len(), config.pyramid_levels])
        .min()
        .unwrap_or(1);
    let prepared: Vec<Prepared> = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.status == PointStatus::PoseTracking && p.host == host.id)
        .map(|(index, p)| Prepared {
            index,
            samples: (0..levels)
                .map(|l| {
                    let s = (1usize << l) as f64;
                    let cam = camera.at_level(l);
                    let (u, v) = ((p.u + 0.5) / s - 0.5, (p.v + 0.5) / s - 0.5);
                    PATTERN
                        .iter()
                        .filter_map(|(du, dv)| {
                            let i = bilinear_sample(host.pyramid().level(l), u + du, v + dv).ok()?;
                            Some((cam.ray(u + du, v + dv), i))
                        })
                        .collect()
                })
                .collect(),
        })
        .collect();
    if prepared.len() < config.min_tracking_points {
        return Err(Error::lost(alloc::format!("only {} tracking points to bootstrap from", prepared.len())));
    }

    let neighbours = neighbour_lists(&prepared, points);
    let rho0 = config.initial_inverse_depth;
    let mut depths: Vec<f64> = prepared.iter().map(|p| points[p.index].inverse_depth).collect();
    let mut frames: Vec<FrameState> = targets
        .iter()
        .map(|t| FrameState { relative: t.pose.inverse().compose(&host.pose), affine: t.affine() })
        .collect();
    normalise_scale(&mut depths, &mut frames, rho0);

    let k = config.huber_threshold;
    let mut problem =
        Problem { host, targets, prepared: &prepared, neighbours: &neighbours, k, prior: config.bootstrap_depth_prior };
    for level in (0..levels).rev() {
        problem.minimise(level, &camera.at_level(level), &mut frames, &mut depths, config)?;
        // The prior only helps to get out of the flat-depth start.
        problem.prior *= 0.25;
    }

    // Coarse levels can leave single-pixel depths outside the narrow basin of
    // the finest level, so depths are re-found by epipolar search against the
    // current poses and the finest level is solved again.
    problem.prior = 0.0;
    for _ in 0..SEARCH_ROUNDS {
        let posed: Vec<PhotometricFrame> = targets
            .iter()
            .zip(&frames)
            .map(|(t, f)| (*t).clone().with_pose(host.pose.compose(&f.relative.inverse())).with_affine(f.affine))
            .collect::<Result<_>>()?;
        let posed_refs: Vec<&PhotometricFrame> = posed.iter().collect();
        for (p, d) in prepared.iter().zip(depths.iter_mut()) {
            let range = (rho0 * SEARCH_RANGE.0, rho0 * SEARCH_RANGE.1);
            if let Some(found) = search_inverse_depth(&points[p.index], host, &posed_refs, camera, config, range) {
                *d = found;
            }
        }
        normalise_scale(&mut depths, &mut frames, rho0);
        problem.minimise(0, camera, &mut frames, &mut depths, config)?;
    }
    let energy = problem.objective(0, camera, &frames, &depths).residuals.iter().flatten().sum();

    let mut out_points = points.to_vec();
    for (p, d) in prepared.iter().zip(depths.iter()) {
        out_points[p.index].inverse_depth = *d;
    }
    let poses = frames.iter().map(|f| host.pose.compose(&f.relative.inverse())).collect();
    let affines = frames.iter().map(|f| f.affine).collect();
    Ok(BootstrapResult { poses, affines, points: out_points, energy })
}

const NEIGHBOURS: usize = 6;
const SEARCH_ROUNDS: usize = 2;
/// Search interval as multiples of the normalised mean inverse depth.
const SEARCH_RANGE: (f64, f64) = (0.1, 5.0);

/// Nearest bootstrap points in pixel distance, excluding the point itself;
/// ties broken by index.
fn neighbour_lists(prepared: &[Prepared], points: &[TrackedPoint]) -> Vec<Vec<usize>> {
    let px: Vec<(f64, f64)> = prepared.iter().map(|p| (points[p.index].u, points[p.index].v)).collect();
    px.iter()
        .enumerate()
        .map(|(i, a)| {
            let mut d: Vec<(f64, usize)> = px
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, b)| ((a.0 - b.0) * (a.0 - b.0) + (a.1 - b.1) * (a.1 - b.1), j))
                .collect();
            d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            d.into_iter().take(NEIGHBOURS).map(|(_, j)| j).collect()
        })
        .collect()
}

fn normalise_scale(depths: &mut [f64], frames: &mut [FrameState], target_mean: f64) {
    let mean = depths.iter().sum::<f64>() / depths.len().max(1) as f64;
    if !(mean > 0.0) {
        return;
    }
    let c = target_mean / mean;
    for d in depths.iter_mut() {
        *d = (*d * c).clamp(MIN_INVERSE_DEPTH * 1.0001, MAX_INVERSE_DEPTH * 0.9999);
    }
    for f in frames.iter_mut() {
        let q = f.relative.quaternion_wxyz();
        let t = f.relative.translation() / c;
        f.relative = Se3Pose::from_quaternion(q[0], q[1], q[2], q[3], t).expect("finite pose");
    }
}

struct Objective {
    /// One entry per (point, target) pair.
    residuals: Vec<Option<f64>>,
    prior: f64,
}

struct Problem<'a> {
    host: &'a PhotometricFrame,
    targets: &'a [&'a PhotometricFrame],
    prepared: &'a [Prepared],
    neighbours: &'a [Vec<usize>],
    k: f64,
    prior: f64,
}

impl Problem<'_> {
    /// Damped Gauss–Newton at one pyramid level.
    fn minimise(
        &self,
        level: usize,
        cam: &PinholeCamera,
        frames: &mut Vec<FrameState>,
        depths: &mut Vec<f64>,
        config: &OdometryConfig,
    ) -> Result<()> {
        let rho0 = config.initial_inverse_depth;
        let mut current = self.objective(level, cam, frames, depths);
        let mut lambda = config.initial_damping;
        let mut growths = 0;
        for _ in 0..config.bootstrap_iterations {
            let (frame_step, depth_step) = self.solve(level, cam, frames, depths, lambda)?;
            let mut trial_frames = frames.clone();
            for (f, st) in trial_frames.iter_mut().zip(frame_step.iter()) {
                let tw = Twist::new(st[0], st[1], st[2], st[3], st[4], st[5]);
                f.relative = se3_exp(&tw)?.compose(&f.relative);
                f.affine = AffineBrightness { log_a: f.affine.log_a + st[6], b: f.affine.b + st[7] };
            }
            let mut trial_depths: Vec<f64> = depths
                .iter()
                .zip(depth_step.iter())
                .map(|(d, s)| (d + s).clamp(MIN_INVERSE_DEPTH * 1.0001, MAX_INVERSE_DEPTH * 0.9999))
                .collect();
            normalise_scale(&mut trial_depths, &mut trial_frames, rho0);
            let candidate = self.objective(level, cam, &trial_frames, &trial_depths);
            let step_norm = crate::math::sqrt(frame_step.iter().map(|s| s.norm_squared()).sum::<f64>());
            let (before, after) = compare(&current.residuals, &candidate.residuals);
            if after + candidate.prior < before + current.prior {
                *frames = trial_frames;
                *depths = trial_depths;
                current = candidate;
                lambda = (lambda * 0.5).max(1e-7);
                growths = 0;
                if step_norm < 1e-7 {
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
        Ok(())
    }

    /// Mean inverse depth of each point's neighbours; the prior pulls towards it.
    fn anchors(&self, depths: &[f64]) -> Vec<f64> {
        self.neighbours
            .iter()
            .map(|n| n.iter().map(|&j| depths[j]).sum::<f64>() / n.len().max(1) as f64)
            .collect()
    }

    fn views<'b>(&'b self, level: usize, cam: &PinholeCamera, frames: &[FrameState]) -> Vec<TargetView<'b, IntensityImage>> {
        let ha = self.host.affine();
        self.targets
            .iter()
            .zip(frames)
            .map(|(t, f)| {
                let gain = gain_ratio(self.host.exposure(), &ha, t.exposure(), &f.affine);
                TargetView::new(t.pyramid().level(level), *cam, &f.relative, gain, ha.b, f.affine.b)
            })
            .collect()
    }

    fn objective(&self, level: usize, cam: &PinholeCamera, frames: &[FrameState], depths: &[f64]) -> Objective {
        let views = self.views(level, cam, frames);
        let mean = depths.iter().sum::<f64>() / depths.len() as f64;
        let anchors = self.anchors(depths);
        let mut residuals = Vec::with_capacity(depths.len() * views.len());
        let mut prior = 0.0;
        for ((p, &d), &anchor) in self.prepared.iter().zip(depths).zip(&anchors) {
            for v in &views {
                for (ray, hi) in &p.samples[level] {
                    residuals.push(v.residual(ray, d, *hi).map(|r| huber(r, self.k)));
                }
            }
            let e = (d - anchor) / mean;
            prior += 0.5 * self.prior * e * e;
        }
        Objective { residuals, prior }
    }

    /// Damped Gauss–Newton step via the Schur complement over inverse depths.
    fn solve(
        &self,
        level: usize,
        cam: &PinholeCamera,
        frames: &[FrameState],
        depths: &[f64],
        lambda: f64,
    ) -> Result<(Vec<Vec8>, Vec<f64>)> {
        let views = self.views(level, cam, frames);
        let nf = frames.len();
        let mean = depths.iter().sum::<f64>() / depths.len() as f64;
        let anchors = self.anchors(depths);
        let mut h_ff = vec![Mat8::zeros(); nf];
        let mut b_f = vec![Vec8::zeros(); nf];
        let mut h_fd: Vec<Vec<Vec8>> = Vec::with_capacity(depths.len());
        let mut h_dd = Vec::with_capacity(depths.len());
        let mut b_d = Vec::with_capacity(depths.len());

        for ((p, &d), &anchor) in self.prepared.iter().zip(depths).zip(&anchors) {
            let mut cross = vec![Vec8::zeros(); nf];
            let prior_h = self.prior / (mean * mean);
            let mut hd = prior_h;
            let mut bd = prior_h * (d - anchor);
            for (f, v) in views.iter().enumerate() {
                for (ray, hi) in &p.samples[level] {
                    let Some(j) = v.jacobian(ray, d, *hi) else { continue };
                    let w = huber_weight(j.residual, self.k);
                    let jf = Vec8::from_column_slice(&[
                        j.twist[0], j.twist[1], j.twist[2], j.twist[3], j.twist[4], j.twist[5], j.log_a, j.b,
                    ]);
                    h_ff[f] += jf * jf.transpose() * w;
                    b_f[f] += jf * (w * j.residual);
                    cross[f] += jf * (w * j.inverse_depth);
                    hd += w * j.inverse_depth * j.inverse_depth;
                    bd += w * j.inverse_depth * j.residual;
                }
            }
            h_fd.push(cross);
            h_dd.push(hd * (1.0 + lambda) + 1e-12);
            b_d.push(bd);
        }

        let n = 8 * nf;
        let mut s = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for f in 0..nf {
            let mut block = h_ff[f];
            for i in 0..8 {
                block[(i, i)] = block[(i, i)] * (1.0 + lambda) + 1e-12;
            }
            s.view_mut((8 * f, 8 * f), (8, 8)).copy_from(&block);
            rhs.rows_mut(8 * f, 8).copy_from(&b_f[f]);
        }
        for ((cross, &hd), &bd) in h_fd.iter().zip(&h_dd).zip(&b_d) {
            for f in 0..nf {
                if cross[f] == Vec8::zeros() {
                    continue;
                }
                let scaled_rhs = cross[f] * (bd / hd);
                let mut r = rhs.rows_mut(8 * f, 8);
                r -= scaled_rhs;
                for g in 0..nf {
                    if cross[g] == Vec8::zeros() {
                        continue;
                    }
                    let outer = cross[f] * cross[g].transpose() / hd;
                    let mut blk = s.view_mut((8 * f, 8 * g), (8, 8));
                    blk -= outer;
                }
            }
        }
        let step = s.lu().solve(&(-rhs)).ok_or_else(|| Error::lost("singular bootstrap system"))?;
        if !step.iter().all(|v| v.is_finite()) {
            return Err(Error::lost("non-finite bootstrap step"));
        }
        let frame_step: Vec<Vec8> = (0..nf).map(|f| Vec8::from_iterator(step.rows(8 * f, 8).iter().cloned())).collect();
        let depth_step = h_fd
            .iter()
            .zip(&h_dd)
            .zip(&b_d)
            .map(|((cross, &hd), &bd)| {
                let coupling: f64 = cross.iter().zip(frame_step.iter()).map(|(c, st)| c.dot(st)).sum();
                -(bd + coupling) / hd
            })
            .collect();
        Ok((frame_step, depth_step))
    }
}
