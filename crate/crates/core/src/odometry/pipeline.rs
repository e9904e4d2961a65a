//! Frame-to-keyframe odometry over an image sequence.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use super::depth::refine_from_level;
use super::{
    bootstrap_window, search_inverse_depth, track_frame, AffineBrightness, DepthOutcome, OdometryConfig,
    PhotometricFrame, PointStatus, TrackedPoint, MAX_INVERSE_DEPTH, MIN_INVERSE_DEPTH,
};
use crate::geometry::{PinholeCamera, Se3Pose};
use crate::image::{build_pyramid, IntensityImage, RgbImage, MAX_PYRAMID_LEVELS};
use crate::selection::{
    export_point_cloud, fill_gradientless_regions, select_extra_pixels,
    select_tracking_pixels, ColoredPoint, SelectionConfig,
};
use crate::{Error, Result};

/// One input image.
#[derive(Debug, Clone)]
pub struct FrameInput {
    pub gray: IntensityImage,
    pub color: Option<Arc<RgbImage>>,
    /// Known exposure; 1.0 when the dataset has none.
    pub exposure: f64,
}

impl FrameInput {
    pub fn new(gray: IntensityImage) -> Self {
        Self { gray, color: None, exposure: 1.0 }
    }

    pub fn from_color(color: RgbImage) -> Self {
        Self { gray: color.to_luma(), color: Some(Arc::new(color)), exposure: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct OdometryResult {
    pub keyframe_ids: Vec<usize>,
    /// Camera-to-world pose of every input frame, in input order.
    pub poses: Vec<Se3Pose>,
    pub affines: Vec<AffineBrightness>,
    /// Final point cloud (tracking points only unless the config asks for dense).
    pub points: Vec<TrackedPoint>,
}

impl OdometryResult {
    pub fn keyframe_poses(&self) -> Vec<Se3Pose> {
        self.keyframe_ids.iter().map(|&i| self.poses[i]).collect()
    }

    pub fn poses_by_id(&self) -> BTreeMap<usize, Se3Pose> {
        self.poses.iter().copied().enumerate().collect()
    }

    pub fn cloud(&self, camera: &PinholeCamera) -> Result<Vec<ColoredPoint>> {
        export_point_cloud(&self.points, camera, &self.poses_by_id())
    }
}

/// Runs tracking over `frames`; the first frame is the world origin.
///
/// The first keyframe interval is solved jointly (poses and depths) to get
/// out of the monocular start; afterwards every frame is tracked against the
/// latest keyframe, and every keyframe refines the depths of the points in
/// the active window and adds its own points.
pub fn run_odometry(
    frames: &[FrameInput],
    camera: &PinholeCamera,
    config: &OdometryConfig,
    selection: &SelectionConfig,
) -> Result<OdometryResult> {
    config.validate()?;
    selection.validate()?;
    camera.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid("odometry needs at least two frames"));
    }
    let levels = feasible_levels(camera, config.pyramid_levels);
    let mut state = State {
        frames: Vec::with_capacity(frames.len()),
        camera: *camera,
        config,
        selection,
        keyframes: Vec::new(),
        points: Vec::new(),
        finished: Vec::new(),
    };
    for (i, f) in frames.iter().enumerate() {
        if f.gray.width() != camera.width || f.gray.height() != camera.height {
            return Err(Error::invalid(alloc::format!("frame {i} does not match the camera size")));
        }
        let mut pf = PhotometricFrame::new(i, build_pyramid(&f.gray, levels)?, f.exposure)?;
        if let Some(c) = &f.color {
            pf = pf.with_color(c.clone());
        }
        state.frames.push(pf);
    }

    // Bootstrap the first interval.
    let k = config.keyframe_interval;
    let first = state.new_points(0, |_, _| config.initial_inverse_depth)?;
    state.points = first;
    state.keyframes.push(0);
    let last = k.min(frames.len() - 1);
    state.bootstrap(last)?;

    for i in 1..frames.len() {
        if i > last {
            state.track(i).map_err(|e| e.with_frame(i))?;
        }
        if i % k == 0 {
            state.add_keyframe(i).map_err(|e| e.with_frame(i))?;
        }
    }
    state.finish()?;

    let keyframe_ids = state.finished_keyframes();
    let points = if config.dense {
        state.finished
    } else {
        state.finished.into_iter().filter(|p| p.status == PointStatus::PoseTracking).collect()
    };
    Ok(OdometryResult {
        keyframe_ids,
        poses: state.frames.iter().map(|f| f.pose).collect(),
        affines: state.frames.iter().map(|f| f.affine()).collect(),
        points,
    })
}

/// Depth search interval as multiples of the median inverse depth of the
/// points already placed.
const SEARCH_RANGE: (f64, f64) = (0.1, 5.0);

fn feasible_levels(camera: &PinholeCamera, wanted: usize) -> usize {
    let mut levels = 1;
    while levels < wanted.min(MAX_PYRAMID_LEVELS) && camera.width >> levels >= 8 && camera.height >> levels >= 8 {
        levels += 1;
    }
    levels
}

struct State<'a> {
    frames: Vec<PhotometricFrame>,
    camera: PinholeCamera,
    config: &'a OdometryConfig,
    selection: &'a SelectionConfig,
    /// Active keyframe window, oldest first.
    keyframes: Vec<usize>,
    /// Points hosted in the active window.
    points: Vec<TrackedPoint>,
    /// Points of keyframes that left the window.
    finished: Vec<TrackedPoint>,
}

impl State<'_> {
    fn finished_keyframes(&self) -> Vec<usize> {
        let k = self.config.keyframe_interval;
        (0..self.frames.len()).filter(|i| i % k == 0).collect()
    }

    /// Selects tracking and extra pixels on `host`, with inverse depths from `depth(u, v)`.
    fn new_points(&self, host: usize, depth: impl Fn(f64, f64) -> f64) -> Result<Vec<TrackedPoint>> {
        let frame = &self.frames[host];
        let image = frame.image();
        let tracking = select_tracking_pixels(image, self.selection)?;
        let extra = select_extra_pixels(image, &tracking, self.selection)?;
        let depth = &depth;
        let make = |status: PointStatus| {
            move |p: &crate::selection::Pixel| {
                let (u, v) = (p.x as f64, p.y as f64);
                TrackedPoint {
                    host,
                    u,
                    v,
                    inverse_depth: depth(u, v).clamp(MIN_INVERSE_DEPTH * 1.01, MAX_INVERSE_DEPTH * 0.99),
                    status,
                    color: frame.color_at(u, v),
                }
            }
        };
        Ok(tracking
            .iter()
            .map(make(PointStatus::PoseTracking))
            .chain(extra.iter().map(make(PointStatus::PositionOnly)))
            .collect())
    }

    fn bootstrap(&mut self, last: usize) -> Result<()> {
        // Grow the window one frame at a time; each new frame starts from a
        // constant-velocity guess.
        for m in 1..=last {
            let guess = self.extrapolate(m);
            self.frames[m].pose = guess;
            let affine = self.frames[m - 1].affine();
            self.frames[m].set_affine(affine)?;
            let (host, rest) = self.frames.split_at(1);
            let targets: Vec<&PhotometricFrame> = rest[..m].iter().collect();
            let r = bootstrap_window(&host[0], &targets, &self.points, &self.camera, self.config)
                .map_err(|e| e.with_frame(m))?;
            for (j, (pose, affine)) in r.poses.iter().zip(&r.affines).enumerate() {
                self.frames[j + 1].pose = *pose;
                self.frames[j + 1].set_affine(*affine)?;
            }
            self.points = r.points;
        }
        // Extra points are found along their epipolar lines in the bootstrap frames.
        let targets: Vec<usize> = (1..=last).collect();
        self.initialise(0, &targets, |p| p.status == PointStatus::PositionOnly)
    }

    /// Searches depths for `host`'s points accepted by `which` against
    /// `targets`, then refines them at full resolution. Points the search
    /// cannot place keep their depth.
    fn initialise(&mut self, host: usize, targets: &[usize], which: impl Fn(&TrackedPoint) -> bool) -> Result<()> {
        let mut known: Vec<f64> = self
            .points
            .iter()
            .filter(|p| p.host != host || !which(p))
            .filter(|p| p.status != PointStatus::GradientFill)
            .map(|p| p.inverse_depth)
            .collect();
        let centre = if known.is_empty() {
            self.config.initial_inverse_depth
        } else {
            let mid = known.len() / 2;
            *known.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
        };
        let range = (centre * SEARCH_RANGE.0, centre * SEARCH_RANGE.1);
        let ts: Vec<&PhotometricFrame> = targets.iter().filter(|&&t| t != host).map(|&t| &self.frames[t]).collect();
        if ts.is_empty() {
            return Ok(());
        }
        for idx in 0..self.points.len() {
            let p = self.points[idx];
            if p.host != host || !which(&p) || p.status == PointStatus::GradientFill {
                continue;
            }
            if let Some(rho) = search_inverse_depth(&p, &self.frames[host], &ts, &self.camera, self.config, range) {
                self.points[idx].inverse_depth = rho;
            }
        }
        self.refine(targets, |p| p.host == host && which(p))
    }

    fn extrapolate(&self, i: usize) -> Se3Pose {
        match i {
            0 => Se3Pose::identity(),
            1 => self.frames[0].pose,
            _ => {
                let (a, b) = (&self.frames[i - 2].pose, &self.frames[i - 1].pose);
                b.compose(&a.inverse().compose(b))
            }
        }
    }

    fn track(&mut self, i: usize) -> Result<()> {
        let reference = *self.keyframes.last().expect("window is never empty");
        let guess = self.extrapolate(i);
        let previous = self.frames[i - 1].pose;
        let run = |g: &Se3Pose| {
            track_frame(&self.frames[i], &self.frames[reference], &self.points, &self.camera, g, self.config)
        };
        let result = match run(&guess) {
            Ok(r) => r,
            Err(Error::TrackingLost { .. }) => run(&previous)?,
            Err(e) => return Err(e),
        };
        self.frames[i].pose = result.pose;
        self.frames[i].set_affine(result.affine)
    }

    /// Refines the depth of every active point accepted by `which` against
    /// the frames in `targets` (its own host excluded).
    fn refine(&mut self, targets: &[usize], which: impl Fn(&TrackedPoint) -> bool) -> Result<()> {
        for idx in 0..self.points.len() {
            let p = self.points[idx];
            if !which(&p) || p.status == PointStatus::GradientFill {
                continue;
            }
            let ts: Vec<&PhotometricFrame> =
                targets.iter().filter(|&&t| t != p.host).map(|&t| &self.frames[t]).collect();
            if ts.is_empty() {
                continue;
            }
            let r = refine_from_level(&p, &self.frames[p.host], &ts, &self.camera, self.config, 1)?;
            if r.outcome != DepthOutcome::Unobservable {
                self.points[idx].inverse_depth = r.inverse_depth;
            }
        }
        Ok(())
    }

    fn add_keyframe(&mut self, i: usize) -> Result<()> {
        if self.keyframes.last() != Some(&i) && i != 0 {
            self.keyframes.push(i);
        }
        let window = self.config.window_keyframes;
        while self.keyframes.len() > window {
            let old = self.keyframes.remove(0);
            self.retire(old)?;
        }
        let active: Vec<usize> = self.keyframes.clone();
        // Older points see the new keyframe.
        self.refine(&active, |p| p.host != i)?;

        // New points are searched for in the frames tracked since the
        // previous keyframe and in the older keyframes of the window.
        let fresh = self.new_points(i, |_, _| self.config.initial_inverse_depth)?;
        self.points.extend(fresh);
        let k = self.config.keyframe_interval;
        let mut targets: Vec<usize> = (i.saturating_sub(k)..i).collect();
        targets.extend(active.iter().copied().filter(|&t| t + k < i));
        targets.sort_unstable();
        self.initialise(i, &targets, |_| true)
    }

    /// Drops outliers among `host`'s points, adds its fill points and moves
    /// them all to the finished cloud.
    fn retire(&mut self, host: usize) -> Result<()> {
        let (mine, rest): (Vec<TrackedPoint>, Vec<TrackedPoint>) = self.points.drain(..).partition(|p| p.host == host);
        self.points = rest;
        let observers = self.observers(host);

        let mut kept = Vec::with_capacity(mine.len());
        for p in mine {
            let ts: Vec<&PhotometricFrame> = observers.iter().map(|&t| &self.frames[t]).collect();
            if ts.is_empty() {
                kept.push(p);
                continue;
            }
            let r = refine_from_level(&p, &self.frames[host], &ts, &self.camera, self.config, 1)?;
            let mut q = p;
            if r.outcome == DepthOutcome::Refined {
                q.inverse_depth = r.inverse_depth;
            }
            let rms = if r.residual_count > 0 { crate::math::sqrt(2.0 * r.energy / r.residual_count as f64) } else { f64::INFINITY };
            if r.outcome == DepthOutcome::Refined && rms <= self.config.outlier_rms {
                kept.push(q);
            }
        }
        if !kept.is_empty() {
            let fill = fill_gradientless_regions(&kept, &self.frames[host], self.selection)?;
            kept.extend(fill);
        }
        self.finished.extend(kept);
        Ok(())
    }

    /// Frames used to judge a retiring keyframe's points: the keyframes within
    /// one window of it and the frames that were tracked against it.
    fn observers(&self, host: usize) -> Vec<usize> {
        let k = self.config.keyframe_interval;
        let span = self.config.window_keyframes * k;
        let lo = host.saturating_sub(span);
        let hi = (host + span).min(self.frames.len() - 1);
        (lo..=hi).filter(|&t| t != host && (t % k == 0 || (t > host && t < host + k))).collect()
    }

    fn finish(&mut self) -> Result<()> {
        while let Some(&old) = self.keyframes.first() {
            self.keyframes.remove(0);
            self.retire(old)?;
        }
        self.finished.sort_by(|a, b| a.host.cmp(&b.host).then(a.status.cmp(&b.status)));
        Ok(())
    }
}
