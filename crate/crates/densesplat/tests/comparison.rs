use std::sync::Arc;

use densesplat::compare::{heldout_frames, scene_extent, train_arm, view_schedule, SharedInputs};
use densesplat::core::odometry::PointStatus;
use densesplat::core::selection::ColoredPoint;
use densesplat::core::splat::TrainConfig;
use densesplat::synth::{generate_synthetic_scene, SynthConfig, SyntheticScene};

fn scene() -> SyntheticScene {
    let cfg = SynthConfig { width: 64, height: 64, frames: 6, supersample: 2, ..SynthConfig::default() };
    generate_synthetic_scene(5, &cfg).unwrap()
}

/// Ground-truth cloud: every `step`-th pixel of frame 0 lifted with its true depth.
fn truth_cloud(s: &SyntheticScene, step: usize) -> Vec<ColoredPoint> {
    let f = &s.frames[0];
    let w = s.camera.width;
    let mut out = Vec::new();
    for y in (0..s.camera.height).step_by(step) {
        for x in (0..w).step_by(step) {
            let local = s.camera.ray(x as f64, y as f64) * f.depth[y * w + x];
            out.push(ColoredPoint {
                position: f.pose.transform_point(&local),
                color: f.color.get(x, y),
                status: PointStatus::PoseTracking,
            });
        }
    }
    out
}

fn inputs(s: &SyntheticScene, cloud: &[ColoredPoint], iterations: usize) -> SharedInputs {
    let heldout = heldout_frames(s.frames.len(), 5);
    let training: Vec<usize> = (0..s.frames.len()).filter(|i| !heldout.contains(i)).collect();
    let poses = s.poses();
    let training_poses: Vec<_> = training.iter().map(|&i| poses[i]).collect();
    SharedInputs {
        camera: s.camera,
        images: s.frames.iter().map(|f| Arc::clone(&f.color)).collect(),
        extent: scene_extent(&training_poses, cloud),
        schedule: view_schedule(&training, iterations, 1),
        poses,
        config: TrainConfig { iterations, ..TrainConfig::default() },
        heldout,
        checkpoints: vec![5, iterations],
        record_timing: false,
    }
}

#[test]
fn identical_clouds_give_identical_traces() {
    let s = scene();
    let cloud = truth_cloud(&s, 4);
    let shared = inputs(&s, &cloud, 12);
    let a = train_arm("a", 1, &cloud, &shared).unwrap();
    let b = train_arm("b", 1, &cloud, &shared).unwrap();
    assert_eq!(a.trace.rows, b.trace.rows);
    assert_eq!(a.input_digest, b.input_digest);
    assert_eq!(a.trace.rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![5, 12]);
}

#[test]
fn held_out_views_never_train() {
    let s = scene();
    let cloud = truth_cloud(&s, 8);
    let shared = inputs(&s, &cloud, 10);
    let run = train_arm("a", 1, &cloud, &shared).unwrap();
    assert_eq!(run.trained_views.len(), 10);
    assert!(run.trained_views.iter().all(|v| !shared.heldout.contains(v)));

    let mut leaky = shared.clone();
    leaky.schedule[3] = shared.heldout[0];
    assert!(train_arm("a", 1, &cloud, &leaky).is_err());
}

#[test]
fn digest_tracks_every_shared_input() {
    let s = scene();
    let cloud = truth_cloud(&s, 8);
    let base = inputs(&s, &cloud, 10);
    let d = base.digest();
    let mut other = base.clone();
    other.config.position_lr *= 2.0;
    assert_ne!(other.digest(), d);
    let mut other = base.clone();
    other.extent += 1e-12;
    assert_ne!(other.digest(), d);
    let mut other = base.clone();
    other.schedule.swap(0, 1);
    assert_ne!(other.digest(), d);
    assert_eq!(base.clone().digest(), d);
}
