//! TUM trajectories: `timestamp tx ty tz qx qy qz qw` per line, camera to world.

use std::fmt::Write as _;
use std::path::Path;

use densesplat_core::{Se3Pose, Vec3};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub pose: Se3Pose,
}

pub fn parse(text: &str, path: &Path) -> Result<Vec<StampedPose>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", n + 1));
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("expected numbers"))?;
        if v.len() != 8 {
            return Err(bad(&format!("expected 8 values, found {}", v.len())));
        }
        let pose = Se3Pose::from_quaternion(v[7], v[4], v[5], v[6], Vec3::new(v[1], v[2], v[3]))
            .map_err(|e| bad(&e.to_string()))?;
        out.push(StampedPose { timestamp: v[0], pose });
    }
    Ok(out)
}

/// Nine significant digits, trailing zeros dropped.
fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{}", if v == 0.0 { 0.0 } else { v });
    }
    let exponent = v.abs().log10().floor() as i32;
    let decimals = (8 - exponent).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn format(poses: &[StampedPose]) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in poses {
        let t = p.pose.translation();
        let [w, x, y, z] = p.pose.quaternion_wxyz();
        let fields = [p.timestamp, t.x, t.y, t.z, x, y, z, w].map(sig9);
        writeln!(s, "{}", fields.join(" ")).expect("string write");
    }
    s
}

pub fn read(path: &Path) -> Result<Vec<StampedPose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, path)
}

pub fn write(path: &Path, poses: &[StampedPose]) -> Result<()> {
    std::fs::write(path, format(poses)).map_err(|e| Error::io(path, e))
}

/// Stamps poses with their frame index.
pub fn indexed(poses: impl IntoIterator<Item = (usize, Se3Pose)>) -> Vec<StampedPose> {
    poses.into_iter().map(|(i, pose)| StampedPose { timestamp: i as f64, pose }).collect()
}
