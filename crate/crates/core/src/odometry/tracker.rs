use alloc::vec::Vec;

use nalgebra::{SMatrix, SVector};

use super::residual::TargetView;
use super::{compare, 
    gain_ratio, huber, huber_weight, AffineBrightness, OdometryConfig, PhotometricEnergy, PhotometricFrame,
    PointStatus, TrackedPoint,
};
use crate::geometry::{se3_exp, PinholeCamera, Se3Pose, Twist, Vec3};
use crate::image::bilinear_sample;
use crate::{Error, Result};

type Mat8 = SMatrix<f64, 8, 8>;
type Vec8 = SVector<f64, 8>;

const CONVERGED_STEP: f64 = 1e-7;
const MIN_DAMPING: f64 = 1e-7;
/// Consecutive damped attempts that increase the energy before a level is
/// abandoned. With a poor fit at that point tracking is considered lost.
const MAX_GROWTHS: usize = 5;
const GROWTH_MARGIN: f64 = 1e-3;

/// Outcome of aligning a frame against a reference keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    /// Camera-to-world pose of the target.
    pub pose: Se3Pose,
    pub affine: AffineBrightness,
    /// Energy at the finest level; `residual_count` is the number of visible
    /// pose-tracking points that produced a residual.
    pub energy: PhotometricEnergy,
    /// Every accepted step, in order.
    pub accepted: Vec<AcceptedStep>,
}

/// Energy before and after an accepted step, both summed over the points that
/// were visible before the step. A point that leaves the image keeps its
/// previous energy, so the comparison is not biased by visibility changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcceptedStep {
    pub level: usize,
    pub before: f64,
    pub after: f64,
}

struct Prepared {
    ray: Vec3,
    inverse_depth: f64,
    /// Host intensity per pyramid level; `None` where the host pixel is out of range.
    host: Vec<Option<f64>>,
}

#[derive(Clone, Copy)]
struct State {
    relative: Se3Pose,
    affine: AffineBrightness,
}

/// Aligns `target` to `reference` over the pose-tracking points hosted in the
/// reference, estimating the target pose and its affine brightness.
///
/// Points with any other status or another host are ignored.
pub fn track_frame(
    target: &PhotometricFrame,
    reference: &PhotometricFrame,
    points: &[TrackedPoint],
    camera: &PinholeCamera,
    initial_guess: &Se3Pose,
    config: &OdometryConfig,
) -> Result<TrackResult> {
    let levels = config.pyramid_levels.min(target.pyramid().len()).min(reference.pyramid().len());
    let prepared: Vec<Prepared> = points
        .iter()
        .filter(|p| p.status == PointStatus::PoseTracking && p.host == reference.id)
        .map(|p| Prepared {
            ray: camera.ray(p.u, p.v),
            inverse_depth: p.inverse_depth,
            host: (0..levels)
                .map(|l| {
                    let s = (1usize << l) as f64;
                    bilinear_sample(reference.pyramid().level(l), (p.u + 0.5) / s - 0.5, (p.v + 0.5) / s - 0.5).ok()
                })
                .collect(),
        })
        .collect();

    let mut state = State {
        relative: initial_guess.inverse().compose(&reference.pose),
        affine: reference.affine(),
    };
    let mut accepted = Vec::new();
    let k = config.huber_threshold;

    let mut final_energy = PhotometricEnergy { total: 0.0, residual_count: 0, huber_threshold: k };
    for level in (0..levels).rev() {
        let cam = camera.at_level(level);
        let mut current = evaluate(&prepared, level, &cam, target, reference, &state, k);
        if current.visible < config.min_tracking_points {
            return Err(Error::lost(alloc::format!(
                "only {} visible tracking points at level {level}",
                current.visible
            )));
        }
        let weight = config.affine_gain_prior * prepared.iter().filter(|p| p.host[level].is_some()).count() as f64;
        let prior = |s: &State| {
            let d = s.affine.log_a - reference.affine().log_a;
            (0.5 * weight * d * d, weight * d)
        };
        let mut lambda = config.initial_damping;
        let mut growths = 0usize;
        let mut system = build_system(&prepared, level, &cam, target, reference, &state, k);
        system.add_gain_prior(weight, prior(&state).1);
        for _ in 0..config.max_iterations {
            let mut damped = system.h;
            for i in 0..8 {
                damped[(i, i)] = damped[(i, i)] * (1.0 + lambda) + 1e-12;
            }
            let Some(step) = damped.lu().solve(&(-system.b)) else {
                return Err(Error::lost("singular normal equations"));
            };
            let twist = Twist::new(step[0], step[1], step[2], step[3], step[4], step[5]);
            if !twist.iter().all(|v| v.is_finite()) {
                return Err(Error::lost("non-finite update"));
            }
            let trial = State {
                relative: se3_exp(&twist)?.compose(&state.relative),
                affine: AffineBrightness { log_a: state.affine.log_a + step[6], b: state.affine.b + step[7] },
            };
            let candidate = evaluate(&prepared, level, &cam, target, reference, &trial, k);
            let (before, after) = compare(&current.per_point, &candidate.per_point);
            let (before, after) = (before + prior(&state).0, after + prior(&trial).0);
            if after < before && candidate.visible >= config.min_tracking_points {
                state = trial;
                current = candidate;
                accepted.push(AcceptedStep { level, before, after });
                lambda = (lambda * 0.5).max(MIN_DAMPING);
                growths = 0;
                if twist.norm() < CONVERGED_STEP {
                    break;
                }
                system = build_system(&prepared, level, &cam, target, reference, &state, k);
                system.add_gain_prior(weight, prior(&state).1);
            } else {
                if after > before * (1.0 + GROWTH_MARGIN) {
                    growths += 1;
                } else {
                    growths = 0;
                }
                lambda *= 4.0;
                if growths >= MAX_GROWTHS {
                    let rms = crate::math::sqrt(2.0 * current.energy / current.visible as f64);
                    if rms > config.outlier_rms {
                        return Err(Error::lost("energy kept growing under damping"));
                    }
                    break;
                }
                if twist.norm() < CONVERGED_STEP {
                    break;
                }
            }
        }
        if level == 0 {
            final_energy = PhotometricEnergy { total: current.energy, residual_count: current.visible, huber_threshold: k };
        }
    }

    let rms = crate::math::sqrt(2.0 * final_energy.total / final_energy.residual_count.max(1) as f64);
    if rms > config.outlier_rms {
        return Err(Error::lost(alloc::format!("residual RMS {rms:.4} above {}", config.outlier_rms)));
    }
    let pose = reference.pose.compose(&state.relative.inverse());
    if !state.affine.b.is_finite() || state.affine.b.abs() >= 1.0 || !state.affine.log_a.is_finite() {
        return Err(Error::lost("affine brightness left its valid range"));
    }
    Ok(TrackResult { pose, affine: state.affine, energy: final_energy, accepted })
}

struct Evaluation {
    energy: f64,
    visible: usize,
    per_point: Vec<Option<f64>>,
}

struct System {
    h: Mat8,
    b: Vec8,
}

impl System {
    fn add_gain_prior(&mut self, weight: f64, gradient: f64) {
        self.h[(6, 6)] += weight;
        self.b[6] += gradient;
    }
}

fn view<'a>(
    level: usize,
    cam: &PinholeCamera,
    target: &'a PhotometricFrame,
    reference: &PhotometricFrame,
    state: &State,
) -> TargetView<'a, crate::image::IntensityImage> {
    let ha = reference.affine();
    let gain = gain_ratio(reference.exposure(), &ha, target.exposure(), &state.affine);
    TargetView::new(target.pyramid().level(level), *cam, &state.relative, gain, ha.b, state.affine.b)
}

fn evaluate(
    points: &[Prepared],
    level: usize,
    cam: &PinholeCamera,
    target: &PhotometricFrame,
    reference: &PhotometricFrame,
    state: &State,
    k: f64,
) -> Evaluation {
    let view = view(level, cam, target, reference, state);
    let mut energy = 0.0;
    let mut visible = 0;
    let per_point = points
        .iter()
        .map(|p| {
            let host = p.host[level]?;
            let r = view.residual(&p.ray, p.inverse_depth, host)?;
            let e = huber(r, k);
            energy += e;
            visible += 1;
            Some(e)
        })
        .collect();
    Evaluation { energy, visible, per_point }
}

fn build_system(
    points: &[Prepared],
    level: usize,
    cam: &PinholeCamera,
    target: &PhotometricFrame,
    reference: &PhotometricFrame,
    state: &State,
    k: f64,
) -> System {
    let view = view(level, cam, target, reference, state);
    let mut h = Mat8::zeros();
    let mut b = Vec8::zeros();
    for p in points {
        let Some(host) = p.host[level] else { continue };
        let Some(j) = view.jacobian(&p.ray, p.inverse_depth, host) else { continue };
        let w = huber_weight(j.residual, k);
        let jac = Vec8::from_column_slice(&[
            j.twist[0], j.twist[1], j.twist[2], j.twist[3], j.twist[4], j.twist[5], j.log_a, j.b,
        ]);
        h += jac * jac.transpose() * w;
        b += jac * (w * j.residual);
    }
    System { h, b }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::odometry::testscene::{base_pose, camera, render};
    use crate::selection::{select_tracking_pixels, SelectionConfig};

    struct Pair {
        reference: PhotometricFrame,
        points: Vec<TrackedPoint>,
        camera: PinholeCamera,
        mean_depth: f64,
    }

    fn pair() -> Pair {
        let camera = camera(128, 96);
        let r = render(&camera, &base_pose(), 0.0);
        let reference = PhotometricFrame::from_image(0, &r.image, 4, 1.0).unwrap().with_pose(base_pose());
        let sel = SelectionConfig { target_tracking_count: 400, ..SelectionConfig::default() };
        let points: Vec<TrackedPoint> = select_tracking_pixels(&r.image, &sel)
            .unwrap()
            .iter()
            .map(|p| TrackedPoint {
                host: 0,
                u: p.x as f64,
                v: p.y as f64,
                inverse_depth: 1.0 / r.depth[p.y * camera.width + p.x],
                status: PointStatus::PoseTracking,
                color: [0.0; 3],
            })
            .collect();
        let mean_depth = points.iter().map(|p| 1.0 / p.inverse_depth).sum::<f64>() / points.len() as f64;
        Pair { reference, points, camera, mean_depth }
    }

    fn perturbed(axis: Vec3, direction: Vec3, mean_depth: f64, degrees: f64, fraction: f64) -> Se3Pose {
        let w = axis.normalize() * degrees.to_radians();
        let v = direction.normalize() * (fraction * mean_depth);
        let delta = Se3Pose::from_quaternion(1.0, 0.0, 0.0, 0.0, v)
            .unwrap()
            .compose(&se3_exp(&Twist::new(0.0, 0.0, 0.0, w.x, w.y, w.z)).unwrap());
        base_pose().compose(&delta)
    }

    fn errors(estimate: &Se3Pose, truth: &Se3Pose) -> (f64, f64) {
        let d = estimate.inverse().compose(truth);
        (d.rotation_angle().to_degrees(), (estimate.translation() - truth.translation()).norm())
    }

    #[test]
    fn identical_frames_stay_at_identity() {
        let p = pair();
        let target = p.reference.clone();
        let r = track_frame(&target, &p.reference, &p.points, &p.camera, &base_pose(), &OdometryConfig::default())
            .unwrap();
        let (dr, dt) = errors(&r.pose, &base_pose());
        assert!(dr < 1e-9 && dt < 1e-9);
        assert!(r.energy.total < 1e-20);
        assert_eq!(r.affine, p.reference.affine());
    }

    #[test]
    fn recovers_small_motion_from_identity() {
        let p = pair();
        let cases = [
            (Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 0.0)),
            (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.3)),
            (Vec3::new(0.3, -0.5, 1.0), Vec3::new(-0.4, 0.2, 1.0)),
        ];
        for (i, (axis, dir)) in cases.iter().enumerate() {
            let truth = perturbed(*axis, *dir, p.mean_depth, 1.0, 0.01);
            let target = PhotometricFrame::from_image(1, &render(&p.camera, &truth, 0.0).image, 4, 1.0).unwrap();
            let r =
                track_frame(&target, &p.reference, &p.points, &p.camera, &base_pose(), &OdometryConfig::default())
                    .unwrap();
            let (dr, dt) = errors(&r.pose, &truth);
            assert!(dr < 0.1, "case {i}: rotation error {dr}°");
            assert!(dt < 0.002 * p.mean_depth, "case {i}: translation error {dt}");
        }
    }

    #[test]
    fn recovers_brightness_offset() {
        let p = pair();
        let truth = perturbed(Vec3::new(0.2, 1.0, 0.1), Vec3::new(1.0, 0.5, 0.0), p.mean_depth, 1.0, 0.01);
        let target = PhotometricFrame::from_image(1, &render(&p.camera, &truth, 0.05).image, 4, 1.0).unwrap();
        let r = track_frame(&target, &p.reference, &p.points, &p.camera, &base_pose(), &OdometryConfig::default())
            .unwrap();
        assert!((r.affine.b - 0.05).abs() < 0.005, "b = {}", r.affine.b);
        let (dr, dt) = errors(&r.pose, &truth);
        assert!(dr < 0.1 && dt < 0.002 * p.mean_depth, "{dr}° {dt}");
    }

    #[test]
    fn accepted_steps_never_increase_energy() {
        let p = pair();
        let truth = perturbed(Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 1.0), p.mean_depth, 2.0, 0.02);
        let target = PhotometricFrame::from_image(1, &render(&p.camera, &truth, 0.03).image, 4, 1.0).unwrap();
        let r = track_frame(&target, &p.reference, &p.points, &p.camera, &base_pose(), &OdometryConfig::default())
            .unwrap();
        assert!(!r.accepted.is_empty());
        for s in &r.accepted {
            assert!(s.after < s.before, "{s:?}");
        }
    }

    #[test]
    fn too_few_points_is_tracking_lost() {
        let p = pair();
        let few = &p.points[..40];
        let err = track_frame(&p.reference, &p.reference, few, &p.camera, &base_pose(), &OdometryConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::TrackingLost { .. }));
    }

    #[test]
    fn non_tracking_points_are_ignored() {
        let p = pair();
        let mut points = p.points.clone();
        for q in points.iter_mut().skip(p.points.len() / 2) {
            q.status = PointStatus::PositionOnly;
            q.inverse_depth = 5.0;
        }
        let truth = perturbed(Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 0.0), p.mean_depth, 0.5, 0.005);
        let target = PhotometricFrame::from_image(1, &render(&p.camera, &truth, 0.0).image, 4, 1.0).unwrap();
        let config = OdometryConfig::default();
        let full = track_frame(&target, &p.reference, &points, &p.camera, &base_pose(), &config).unwrap();
        let half: Vec<TrackedPoint> = points.iter().copied().filter(|q| q.status == PointStatus::PoseTracking).collect();
        let only = track_frame(&target, &p.reference, &half, &p.camera, &base_pose(), &config).unwrap();
        assert_eq!(full.pose, only.pose);
        assert_eq!(full.energy.residual_count, only.energy.residual_count);
    }
}
