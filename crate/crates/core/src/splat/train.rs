//! Training step, optimiser state and adaptive densification.

use alloc::vec;
use alloc::vec::Vec;

use super::adam::{Adam, AdamConfig};
use super::loss::loss_and_gradient;
use super::render::{backward, rasterize};
use super::{Gaussian3d, SplatScene, PARAMS_PER_GAUSSIAN};
use crate::geometry::{PinholeCamera, Se3Pose};
use crate::image::RgbImage;
use crate::math;
use crate::{Error, Result};

const SPLIT_SHRINK: f64 = 1.6;
const LOG_SCALE_RANGE: (f64, f64) = (-16.118, 6.907);

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub iterations: usize,
    /// Multiplied by the scene extent.
    pub position_lr: f64,
    pub log_scale_lr: f64,
    pub rotation_lr: f64,
    pub opacity_lr: f64,
    pub color_lr: f64,
    pub densify_interval: usize,
    /// Threshold on the mean screen-space gradient norm, in normalised
    /// device units (pixels scaled by half the image size).
    pub densify_grad_threshold: f64,
    /// Hot Gaussians larger than this fraction of the extent are split, smaller ones cloned.
    pub split_scale_fraction: f64,
    pub prune_opacity_threshold: f64,
    /// Fraction of the scene extent.
    pub prune_scale_threshold: f64,
    pub l1_weight: f64,
    pub ssim_weight: f64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 640,
            position_lr: 1.6e-4,
            log_scale_lr: 5e-3,
            rotation_lr: 1e-3,
            opacity_lr: 5e-2,
            color_lr: 2.5e-3,
            densify_interval: 100,
            densify_grad_threshold: 2e-4,
            split_scale_fraction: 0.01,
            prune_opacity_threshold: 0.005,
            prune_scale_threshold: 0.5,
            l1_weight: 0.8,
            ssim_weight: 0.2,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [self.position_lr, self.log_scale_lr, self.rotation_lr, self.opacity_lr, self.color_lr];
        if rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.densify_interval == 0 {
            return Err(Error::invalid("densify_interval must be at least 1"));
        }
        let rest = [
            self.densify_grad_threshold,
            self.split_scale_fraction,
            self.prune_opacity_threshold,
            self.prune_scale_threshold,
            self.l1_weight,
            self.ssim_weight,
        ];
        if rest.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("thresholds and loss weights must be non-negative"));
        }
        let a = &self.adam;
        if !(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.epsilon > 0.0) {
            return Err(Error::invalid("adam betas must lie in [0, 1) and epsilon must be positive"));
        }
        Ok(())
    }

    fn rate(&self, slot: usize, extent: f64) -> f64 {
        match slot {
            0..=2 => self.position_lr * extent,
            3..=5 => self.log_scale_lr,
            6..=9 => self.rotation_lr,
            10 => self.opacity_lr,
            _ => self.color_lr,
        }
    }
}

/// Screen-space gradient statistics accumulated between densify events.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientStats {
    pub grad_sum: Vec<f64>,
    pub views: Vec<u32>,
}

impl GradientStats {
    pub fn new(len: usize) -> Self {
        Self { grad_sum: vec![0.0; len], views: vec![0; len] }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.views[i] as f64
        }
    }

    pub fn reset(&mut self, len: usize) {
        *self = Self::new(len);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub adam: Adam,
    pub stats: GradientStats,
    pub scene_extent: f64,
}

impl OptimizerState {
    pub fn new(scene: &SplatScene, config: &TrainConfig, scene_extent: f64) -> Result<Self> {
        if !(scene_extent > 0.0 && scene_extent.is_finite()) {
            return Err(Error::invalid("scene extent must be positive and finite"));
        }
        Ok(Self {
            adam: Adam::new(scene.len() * PARAMS_PER_GAUSSIAN, config.adam),
            stats: GradientStats::new(scene.len()),
            scene_extent,
        })
    }

    fn check(&self, scene: &SplatScene) -> Result<()> {
        if self.adam.len() != scene.len() * PARAMS_PER_GAUSSIAN || self.stats.views.len() != scene.len() {
            return Err(Error::InvalidState("optimiser state does not match the scene size".into()));
        }
        Ok(())
    }
}

/// One render, loss evaluation, backward pass and Adam update. Returns the
/// loss before the update.
pub fn train_step(
    scene: &mut SplatScene,
    target: &RgbImage,
    camera: &PinholeCamera,
    pose: &Se3Pose,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<f64> {
    if scene.is_empty() {
        return Err(Error::EmptyScene);
    }
    if target.width() != camera.width || target.height() != camera.height {
        return Err(Error::invalid("target image size does not match the camera"));
    }
    state.check(scene)?;
    let raster = rasterize(scene, camera, pose);
    let (loss, upstream) = loss_and_gradient(&raster.rendered.image, target, config.l1_weight, config.ssim_weight)?;
    if !loss.is_finite() {
        let gaussian = scene.gaussians.iter().position(|g| !g.is_finite());
        return Err(Error::NonFiniteLoss { gaussian });
    }
    let grads = backward(&raster, scene, camera, &upstream);
    if let Some(i) = grads.iter().position(|g| !g.params().iter().all(|v| v.is_finite())) {
        return Err(Error::NonFiniteLoss { gaussian: Some(i) });
    }

    let (hw, hh) = (0.5 * camera.width as f64, 0.5 * camera.height as f64);
    for s in &raster.splats {
        let m = grads[s.index].mean2d;
        state.stats.grad_sum[s.index] += math::sqrt((m[0] * hw).powi(2) + (m[1] * hh).powi(2));
        state.stats.views[s.index] += 1;
    }

    let mut params: Vec<f64> = scene.gaussians.iter().flat_map(|g| g.params()).collect();
    let flat: Vec<f64> = grads.iter().flat_map(|g| g.params()).collect();
    let extent = state.scene_extent;
    state.adam.update(&mut params, &flat, |i| config.rate(i % PARAMS_PER_GAUSSIAN, extent));
    for (g, p) in scene.gaussians.iter_mut().zip(params.chunks_exact(PARAMS_PER_GAUSSIAN)) {
        g.set_params(p.try_into().expect("chunk size"));
        g.normalize_rotation();
        g.log_scale = g.log_scale.map(|s| s.clamp(LOG_SCALE_RANGE.0, LOG_SCALE_RANGE.1));
        g.color = g.color.map(|c| c.clamp(0.0, 1.0));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

fn split_children(g: &Gaussian3d) -> [Gaussian3d; 2] {
    let axis = g.log_scale.imax();
    let offset = g.rotation_matrix().column(axis) * g.scale()[axis];
    let shrink = math::ln(SPLIT_SHRINK);
    let mut a = g.clone();
    a.log_scale = g.log_scale.map(|s| s - shrink);
    let mut b = a.clone();
    a.position += offset;
    b.position -= offset;
    [a, b]
}

/// Clones or splits Gaussians whose mean screen-space gradient exceeds the
/// threshold, then prunes faint and oversized ones and resets the stats.
/// New Gaussians are appended after the surviving originals and start with
/// zero optimiser moments.
pub fn densify_and_prune(scene: &mut SplatScene, state: &mut OptimizerState, config: &TrainConfig) -> Result<DensifyReport> {
    state.check(scene)?;
    let extent = state.scene_extent;
    let split_limit = config.split_scale_fraction * extent;
    let mut report = DensifyReport::default();
    let mut out: Vec<(Gaussian3d, Option<usize>)> = Vec::with_capacity(scene.len());
    let mut added: Vec<Gaussian3d> = Vec::new();
    let mut children: Vec<Gaussian3d> = Vec::new();
    for (i, g) in scene.gaussians.iter().enumerate() {
        let hot = state.stats.mean(i) > config.densify_grad_threshold;
        if hot && g.max_scale() > split_limit {
            report.split += 1;
            children.extend(split_children(g));
            continue;
        }
        if hot {
            report.cloned += 1;
            added.push(g.clone());
        }
        out.push((g.clone(), Some(i)));
    }
    out.extend(added.into_iter().chain(children).map(|g| (g, None)));

    let max_scale = config.prune_scale_threshold * extent;
    let before = out.len();
    out.retain(|(g, _)| g.opacity() >= config.prune_opacity_threshold && g.max_scale() <= max_scale);
    report.pruned = before - out.len();
    if out.is_empty() {
        return Err(Error::EmptyScene);
    }
    let sources: Vec<Option<usize>> = out.iter().map(|(_, s)| *s).collect();
    state.adam.remap(&sources, PARAMS_PER_GAUSSIAN);
    scene.gaussians = out.into_iter().map(|(g, _)| g).collect();
    state.stats.reset(scene.len());
    Ok(report)
}

/// Result of one [`Trainer::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub densify: Option<DensifyReport>,
}

/// Owns a scene and its optimiser state; densifies every `densify_interval`
/// steps until `iterations` is reached.
#[derive(Debug, Clone)]
pub struct Trainer {
    scene: SplatScene,
    state: OptimizerState,
    config: TrainConfig,
    iteration: usize,
}

impl Trainer {
    pub fn new(scene: SplatScene, config: TrainConfig, scene_extent: f64) -> Result<Self> {
        config.validate()?;
        if scene.is_empty() {
            return Err(Error::EmptyScene);
        }
        let state = OptimizerState::new(&scene, &config, scene_extent)?;
        Ok(Self { scene, state, config, iteration: 0 })
    }

    pub fn scene(&self) -> &SplatScene {
        &self.scene
    }

    pub fn into_scene(self) -> SplatScene {
        self.scene
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Number of completed steps.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn step(&mut self, target: &RgbImage, camera: &PinholeCamera, pose: &Se3Pose) -> Result<StepOutcome> {
        let loss = train_step(&mut self.scene, target, camera, pose, &mut self.state, &self.config)?;
        self.iteration += 1;
        let densify = if self.iteration % self.config.densify_interval == 0 && self.iteration < self.config.iterations {
            Some(densify_and_prune(&mut self.scene, &mut self.state, &self.config)?)
        } else {
            None
        };
        Ok(StepOutcome { loss, densify })
    }
}
