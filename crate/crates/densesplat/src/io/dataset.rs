//! Dataset directories.
//!
//! ```text
//! DIR/intrinsics.txt   fx fy cx cy width height
//! DIR/images/*.png     numbered frames (PNG or PGM/PPM), ordered by number
//! DIR/trajectory.txt   optional TUM trajectory, one line per frame
//! DIR/exposure.txt     optional `frame_index exposure` lines; unlisted frames use 1
//! ```

use std::path::{Path, PathBuf};
use std::sync::Arc;

use densesplat_core::odometry::FrameInput;
use densesplat_core::{PinholeCamera, RgbImage, Se3Pose};
use image::DynamicImage;

use super::tum;
use crate::{Error, Result};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const IMAGES_DIR: &str = "images";
pub const TRAJECTORY_FILE: &str = "trajectory.txt";
pub const EXPOSURE_FILE: &str = "exposure.txt";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub camera: PinholeCamera,
    /// Every frame has a colour image (grey inputs are replicated).
    pub frames: Vec<FrameInput>,
    pub trajectory: Option<Vec<Se3Pose>>,
}

impl Dataset {
    pub fn color(&self, i: usize) -> &Arc<RgbImage> {
        self.frames[i].color.as_ref().expect("dataset frames carry colour")
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Strips `#` comments and blank lines.
fn data_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty())
}

pub fn read_intrinsics(path: &Path) -> Result<PinholeCamera> {
    let text = read_text(path)?;
    let words: Vec<&str> = data_lines(&text).flat_map(str::split_whitespace).collect();
    let bad = || Error::format(path, "expected 'fx fy cx cy width height'");
    if words.len() != 6 {
        return Err(bad());
    }
    let f: Vec<f64> = words[..4].iter().map(|w| w.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
    let w: usize = words[4].parse().map_err(|_| bad())?;
    let h: usize = words[5].parse().map_err(|_| bad())?;
    PinholeCamera::new(f[0], f[1], f[2], f[3], w, h).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<[f64; 3]> = match &img {
        DynamicImage::ImageLuma8(g) => g.pixels().map(|p| [p.0[0] as f64 / 255.0; 3]).collect(),
        DynamicImage::ImageRgb8(c) => c.pixels().map(|p| p.0.map(|v| v as f64 / 255.0)).collect(),
        DynamicImage::ImageLuma16(g) => g.pixels().map(|p| [p.0[0] as f64 / 65535.0; 3]).collect(),
        DynamicImage::ImageRgb16(c) => c.pixels().map(|p| p.0.map(|v| v as f64 / 65535.0)).collect(),
        other => other.to_rgb32f().pixels().map(|p| p.0.map(f64::from)).collect(),
    };
    RgbImage::new(w, h, pixels).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_png(path: &Path, image: &RgbImage) -> Result<()> {
    let bytes: Vec<u8> =
        image.pixels().iter().flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
    let buf = image::RgbImage::from_raw(image.width() as u32, image.height() as u32, bytes).expect("sized buffer");
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut numbered = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !matches!(ext.as_deref(), Some("png" | "pgm" | "ppm")) {
            continue;
        }
        let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok()) else {
            continue;
        };
        numbered.push((n, path));
    }
    numbered.sort();
    if let Some(w) = numbered.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::format(dir, format!("two frames numbered {}", w[0].0)));
    }
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

fn read_exposures(path: &Path, frames: usize) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    let mut exposures = vec![1.0; frames];
    for (n, line) in data_lines(&text).enumerate() {
        let bad = |m: &str| Error::format(path, format!("entry {}: {m}", n + 1));
        let words: Vec<&str> = line.split_whitespace().collect();
        let [index, value] = words.as_slice() else { return Err(bad("expected 'frame_index exposure'")) };
        let index: usize = index.parse().map_err(|_| bad("bad frame index"))?;
        let value: f64 = value.parse().map_err(|_| bad("bad exposure"))?;
        if index >= frames {
            return Err(bad(&format!("frame index {index} but only {frames} frames")));
        }
        if !(value > 0.0 && value.is_finite()) {
            return Err(bad("exposure must be a positive number"));
        }
        exposures[index] = value;
    }
    Ok(exposures)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let camera = read_intrinsics(&dir.join(INTRINSICS_FILE))?;
    let files = frame_files(&dir.join(IMAGES_DIR))?;
    if files.len() < 2 {
        return Err(Error::format(dir.join(IMAGES_DIR), format!("need at least two numbered frames, found {}", files.len())));
    }
    let exposure_path = dir.join(EXPOSURE_FILE);
    let exposures = if exposure_path.exists() {
        Some(read_exposures(&exposure_path, files.len())?)
    } else {
        None
    };
    let mut frames = Vec::with_capacity(files.len());
    for (i, path) in files.iter().enumerate() {
        let color = load_image(path)?;
        if color.width() != camera.width || color.height() != camera.height {
            return Err(Error::format(
                path,
                format!(
                    "image is {}x{} but the intrinsics say {}x{}",
                    color.width(),
                    color.height(),
                    camera.width,
                    camera.height
                ),
            ));
        }
        let mut f = FrameInput::from_color(color);
        if let Some(e) = &exposures {
            f.exposure = e[i];
        }
        frames.push(f);
    }
    let traj_path = dir.join(TRAJECTORY_FILE);
    let trajectory = if traj_path.exists() {
        let poses = tum::read(&traj_path)?;
        if poses.len() != frames.len() {
            return Err(Error::format(&traj_path, format!("{} poses for {} frames", poses.len(), frames.len())));
        }
        Some(poses.into_iter().map(|p| p.pose).collect())
    } else {
        None
    };
    Ok(Dataset { camera, frames, trajectory })
}

/// Writes colour frames, intrinsics, and the trajectory and exposures when present.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let images = dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let c = &dataset.camera;
    let intrinsics = format!("# fx fy cx cy width height\n{} {} {} {} {} {}\n", c.fx, c.fy, c.cx, c.cy, c.width, c.height);
    let path = dir.join(INTRINSICS_FILE);
    std::fs::write(&path, intrinsics).map_err(|e| Error::io(&path, e))?;
    for i in 0..dataset.frames.len() {
        write_png(&images.join(format!("{i:06}.png")), dataset.color(i))?;
    }
    if let Some(traj) = &dataset.trajectory {
        tum::write(&dir.join(TRAJECTORY_FILE), &tum::indexed(traj.iter().copied().enumerate()))?;
    }
    if dataset.frames.iter().any(|f| f.exposure != 1.0) {
        let text: String = dataset.frames.iter().enumerate().map(|(i, f)| format!("{i} {}\n", f.exposure)).collect();
        let path = dir.join(EXPOSURE_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
