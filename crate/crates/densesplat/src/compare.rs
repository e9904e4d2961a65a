//! Dense-versus-sparse initialisation experiment.
//!
//! Per seed: odometry once, a dense cloud and its sparse baseline, then two
//! trainings that share poses, images, config, scene extent and view order.
//! PSNR is measured on held-out frames that no training step ever sees.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use densesplat_core::odometry::{run_odometry, OdometryConfig, PointStatus};
use densesplat_core::selection::ColoredPoint;
use densesplat_core::splat::{init_from_point_cloud, psnr, render, SplatScene, TrainConfig, Trainer};
use densesplat_core::{PinholeCamera, RgbImage, Se3Pose, Vec3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::baseline::make_sparse_baseline;
use crate::config::Config;
use crate::io::Dataset;
use crate::synth::{generate_synthetic_scene, SynthConfig};
use crate::{Error, Result};

pub const DENSE_LABEL: &str = "dense";
pub const SPARSE_LABEL: &str = "sparse";

/// Salt so the view order is not the same stream as the baseline sampling.
const SCHEDULE_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Copy)]
pub enum Source<'a> {
    /// One recorded sequence shared by all seeds.
    Dataset(&'a Dataset),
    /// A fresh synthetic room per seed.
    Synthetic(&'a SynthConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean over held-out views, in dB.
    pub psnr: f64,
    /// Mean training loss since the previous checkpoint.
    pub loss: f64,
    pub count: usize,
    /// Wall-clock training time so far; 0 unless timing is recorded.
    pub ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub label: String,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn psnr_at(&self, iteration: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.iteration == iteration).map(|r| r.psnr)
    }
}

/// One arm's run, with the evidence that it saw only the shared inputs.
#[derive(Debug, Clone)]
pub struct ArmRun {
    pub trace: TrainingTrace,
    pub initial_points: usize,
    /// SHA-256 of the inputs shared with the other arm, hex.
    pub input_digest: String,
    /// Frame index used by every training step, in order.
    pub trained_views: Vec<usize>,
    pub scene: SplatScene,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub heldout: Vec<usize>,
    pub dense: ArmRun,
    pub sparse: ArmRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub iteration: usize,
    pub runs: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub loss_mean: f64,
    pub count_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn psnr_mean(&self, label: &str, iteration: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.label == label && r.iteration == iteration).map(|r| r.psnr_mean)
    }

    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.label.as_str()) {
                out.push(&r.label);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<SeedRun>,
    pub summary: Summary,
}

impl Comparison {
    /// Dense then sparse for each seed, in seed order.
    pub fn traces(&self) -> Vec<TrainingTrace> {
        self.runs.iter().flat_map(|r| [r.dense.trace.clone(), r.sparse.trace.clone()]).collect()
    }

    /// Dense minus sparse PSNR at `iteration`, per seed.
    pub fn gaps(&self, iteration: usize) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| Some(r.dense.trace.psnr_at(iteration)? - r.sparse.trace.psnr_at(iteration)?))
            .collect()
    }
}

/// Frames held out for evaluation: every `every`-th, starting at `every - 1`.
pub fn heldout_frames(frames: usize, every: usize) -> Vec<usize> {
    (0..frames).filter(|i| i % every == every - 1).collect()
}

/// Training frame for each of `iterations` steps: seeded shuffles of the
/// training frames, one epoch after another.
pub fn view_schedule(training: &[usize], iterations: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SCHEDULE_SALT);
    let mut out = Vec::with_capacity(iterations);
    let mut epoch = training.to_vec();
    while out.len() < iterations {
        epoch.shuffle(&mut rng);
        out.extend(epoch.iter().take(iterations - out.len()));
    }
    out
}

/// Scene size for learning rates and densification: 1.1 times the larger of
/// the camera spread and the median distance of the pose-tracking points from
/// the camera centroid. Only uses inputs common to both arms.
pub fn scene_extent(poses: &[Se3Pose], cloud: &[ColoredPoint]) -> f64 {
    let centers: Vec<Vec3> = poses.iter().map(|p| p.center()).collect();
    let mid = centers.iter().sum::<Vec3>() / centers.len().max(1) as f64;
    let spread = centers.iter().map(|c| (c - mid).norm()).fold(0.0, f64::max);
    let mut d: Vec<f64> =
        cloud.iter().filter(|p| p.status == PointStatus::PoseTracking).map(|p| (p.position - mid).norm()).collect();
    d.sort_by(f64::total_cmp);
    let median = d.get(d.len() / 2).copied().unwrap_or(0.0);
    let extent = 1.1 * spread.max(median);
    if extent > 0.0 {
        extent
    } else {
        1.0
    }
}

/// Everything both arms must agree on.
#[derive(Debug, Clone)]
pub struct SharedInputs {
    pub camera: PinholeCamera,
    pub poses: Vec<Se3Pose>,
    pub images: Vec<Arc<RgbImage>>,
    pub config: TrainConfig,
    pub heldout: Vec<usize>,
    pub schedule: Vec<usize>,
    pub checkpoints: Vec<usize>,
    pub extent: f64,
    pub record_timing: bool,
}

impl SharedInputs {
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let c = &self.camera;
        for v in [c.fx, c.fy, c.cx, c.cy, self.extent] {
            h.update(v.to_le_bytes());
        }
        h.update((c.width as u64).to_le_bytes());
        h.update((c.height as u64).to_le_bytes());
        for p in &self.poses {
            for v in p.quaternion_wxyz().iter().chain(p.translation().iter()) {
                h.update(v.to_le_bytes());
            }
        }
        for img in &self.images {
            for v in img.pixels().iter().flatten() {
                h.update(v.to_le_bytes());
            }
        }
        h.update(format!("{:?}", self.config).as_bytes());
        for list in [&self.heldout, &self.schedule, &self.checkpoints] {
            h.update((list.len() as u64).to_le_bytes());
            for v in list.iter() {
                h.update((*v as u64).to_le_bytes());
            }
        }
        h.update([self.record_timing as u8]);
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn mean_heldout_psnr(trainer: &Trainer, inputs: &SharedInputs) -> Result<f64> {
    let mut total = 0.0;
    for &i in &inputs.heldout {
        let r = render(trainer.scene(), &inputs.camera, &inputs.poses[i]);
        total += psnr(&r.image, &inputs.images[i])?;
    }
    Ok(total / inputs.heldout.len() as f64)
}

/// Trains one arm from `cloud` up to the last checkpoint.
pub fn train_arm(label: &str, seed: u64, cloud: &[ColoredPoint], inputs: &SharedInputs) -> Result<ArmRun> {
    let input_digest = inputs.digest();
    let scene = init_from_point_cloud(cloud, inputs.extent)?;
    let mut trainer = Trainer::new(scene, inputs.config.clone(), inputs.extent)?;
    let heldout: BTreeSet<usize> = inputs.heldout.iter().copied().collect();
    let last = *inputs.checkpoints.last().ok_or_else(|| Error::Config("no checkpoints".into()))?;
    if inputs.schedule.len() < last {
        return Err(Error::Config(format!("view schedule has {} steps, need {last}", inputs.schedule.len())));
    }
    let start = Instant::now();
    let mut rows = Vec::with_capacity(inputs.checkpoints.len());
    let mut trained_views = Vec::with_capacity(last);
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut next = inputs.checkpoints.iter().peekable();
    for &view in &inputs.schedule[..last] {
        if heldout.contains(&view) {
            return Err(Error::Core(densesplat_core::Error::InvalidState(format!(
                "held-out frame {view} scheduled for training"
            ))));
        }
        trained_views.push(view);
        let out = trainer.step(&inputs.images[view], &inputs.camera, &inputs.poses[view])?;
        loss_sum += out.loss;
        loss_n += 1;
        if next.peek() == Some(&&trainer.iteration()) {
            next.next();
            let ms = if inputs.record_timing { start.elapsed().as_millis() as u64 } else { 0 };
            rows.push(TraceRow {
                iteration: trainer.iteration(),
                psnr: mean_heldout_psnr(&trainer, inputs)?,
                loss: loss_sum / loss_n as f64,
                count: trainer.scene().len(),
                ms,
            });
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    Ok(ArmRun {
        trace: TrainingTrace { label: label.to_string(), seed, rows },
        initial_points: cloud.len(),
        input_digest,
        trained_views,
        scene: trainer.into_scene(),
    })
}

fn run_seed(source: Source<'_>, seed: u64, config: &Config) -> Result<SeedRun> {
    let owned;
    let data = match source {
        Source::Dataset(d) => d,
        Source::Synthetic(s) => {
            owned = generate_synthetic_scene(seed, s)?.to_dataset();
            &owned
        }
    };
    let odometry_config = OdometryConfig { dense: true, ..config.odometry.clone() };
    let odometry = run_odometry(&data.frames, &data.camera, &odometry_config, &config.selection)
        .map_err(|e| Error::Core(e).context(format!("seed {seed}: odometry")))?;
    let dense = odometry.cloud(&data.camera)?;
    let sparse = make_sparse_baseline(&dense, config.harness.baseline, seed)
        .map_err(|e| e.context(format!("seed {seed}: sparse baseline")))?;

    let heldout = heldout_frames(data.frames.len(), config.harness.holdout_every);
    let training: Vec<usize> = (0..data.frames.len()).filter(|i| !heldout.contains(i)).collect();
    let last = *config.harness.checkpoints.last().expect("validated");
    let training_poses: Vec<Se3Pose> = training.iter().map(|&i| odometry.poses[i]).collect();
    let inputs = SharedInputs {
        camera: data.camera,
        images: (0..data.frames.len()).map(|i| data.color(i).clone()).collect(),
        poses: odometry.poses.clone(),
        config: config.splat.clone(),
        schedule: view_schedule(&training, last, seed),
        heldout: heldout.clone(),
        checkpoints: config.harness.checkpoints.clone(),
        extent: scene_extent(&training_poses, &dense),
        record_timing: config.harness.record_timing,
    };
    let context = |label: &'static str| move |e: Error| e.context(format!("seed {seed}: {label} training"));
    let dense_run = train_arm(DENSE_LABEL, seed, &dense, &inputs).map_err(context(DENSE_LABEL))?;
    let sparse_run = train_arm(SPARSE_LABEL, seed, &sparse, &inputs).map_err(context(SPARSE_LABEL))?;
    if dense_run.input_digest != sparse_run.input_digest {
        return Err(Error::Core(densesplat_core::Error::InvalidState(format!(
            "seed {seed}: arms saw different shared inputs"
        ))));
    }
    Ok(SeedRun { seed, heldout, dense: dense_run, sparse: sparse_run })
}

/// Runs every seed (in parallel when `config.harness.workers` allows) and
/// aggregates in seed order.
pub fn run_comparison(source: Source<'_>, seeds: &[u64], config: &Config) -> Result<Comparison> {
    config.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("no seeds given".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.harness.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<SeedRun>> = pool.install(|| seeds.par_iter().map(|&s| run_seed(source, s, config)).collect());
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let traces: Vec<TrainingTrace> = runs.iter().flat_map(|r| [r.dense.trace.clone(), r.sparse.trace.clone()]).collect();
    Ok(Comparison { summary: summarize(&traces), runs })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 || !mean.is_finite() {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation per label and checkpoint, labels in
/// order of first appearance.
pub fn summarize(traces: &[TrainingTrace]) -> Summary {
    let mut labels: Vec<&str> = Vec::new();
    for t in traces {
        if !labels.contains(&t.label.as_str()) {
            labels.push(&t.label);
        }
    }
    let mut rows = Vec::new();
    for label in labels {
        let group: Vec<&TrainingTrace> = traces.iter().filter(|t| t.label == label).collect();
        let iterations: BTreeSet<usize> = group.iter().flat_map(|t| t.rows.iter().map(|r| r.iteration)).collect();
        for it in iterations {
            let at: Vec<&TraceRow> = group.iter().filter_map(|t| t.rows.iter().find(|r| r.iteration == it)).collect();
            let psnrs: Vec<f64> = at.iter().map(|r| r.psnr).collect();
            let (psnr_mean, psnr_std) = mean_std(&psnrs);
            rows.push(SummaryRow {
                label: label.to_string(),
                iteration: it,
                runs: at.len(),
                psnr_mean,
                psnr_std,
                loss_mean: at.iter().map(|r| r.loss).sum::<f64>() / at.len() as f64,
                count_mean: at.iter().map(|r| r.count as f64).sum::<f64>() / at.len() as f64,
            });
        }
    }
    Summary { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fifth_frame_is_held_out() {
        assert_eq!(heldout_frames(20, 5), vec![4, 9, 14, 19]);
        assert_eq!(heldout_frames(4, 5), Vec::<usize>::new());
    }

    #[test]
    fn schedule_cycles_through_training_frames() {
        let training = [0, 1, 2, 3, 5, 6];
        let s = view_schedule(&training, 20, 3);
        assert_eq!(s.len(), 20);
        for epoch in s.chunks(6).filter(|c| c.len() == 6) {
            let mut e = epoch.to_vec();
            e.sort();
            assert_eq!(e, training);
        }
        assert_eq!(s, view_schedule(&training, 20, 3));
        assert_ne!(s, view_schedule(&training, 20, 4));
    }

    #[test]
    fn summary_statistics() {
        let row = |it, psnr| TraceRow { iteration: it, psnr, loss: 0.5, count: 10, ms: 0 };
        let traces = vec![
            TrainingTrace { label: "a".into(), seed: 0, rows: vec![row(10, 20.0), row(20, 22.0)] },
            TrainingTrace { label: "a".into(), seed: 1, rows: vec![row(10, 24.0), row(20, 22.0)] },
            TrainingTrace { label: "b".into(), seed: 0, rows: vec![row(10, 1.0)] },
        ];
        let s = summarize(&traces);
        assert_eq!(s.labels(), vec!["a", "b"]);
        assert_eq!(s.rows.len(), 3);
        assert_eq!(s.rows[0].psnr_mean, 22.0);
        assert!((s.rows[0].psnr_std - 8f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.rows[1].psnr_std, 0.0);
        assert_eq!(s.rows[2].runs, 1);
        assert_eq!(s.psnr_mean("b", 10), Some(1.0));
    }

    #[test]
    fn extent_ignores_non_tracking_points() {
        let poses = [Se3Pose::identity()];
        let p = |z: f64, status| ColoredPoint { position: Vec3::new(0.0, 0.0, z), color: [0.0; 3], status };
        let cloud = [p(2.0, PointStatus::PoseTracking), p(100.0, PointStatus::GradientFill)];
        assert!((scene_extent(&poses, &cloud) - 2.2).abs() < 1e-12);
        assert_eq!(scene_extent(&poses, &[]), 1.0);
    }
}
