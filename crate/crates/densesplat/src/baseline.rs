//! Sparse initial clouds standing in for a structure-from-motion baseline.

use std::fmt;
use std::str::FromStr;

use densesplat_core::odometry::PointStatus;
use densesplat_core::selection::ColoredPoint;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// Every pose-tracking point.
    TrackingOnly,
    /// A seeded uniform fraction of the pose-tracking points.
    Ratio(f64),
}

impl BaselineMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineMode::Ratio(r) if !(*r > 0.0 && *r <= 1.0) => {
                Err(Error::Config(format!("baseline ratio {r} must lie in (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineMode::TrackingOnly => write!(f, "tracking-only"),
            BaselineMode::Ratio(r) => write!(f, "ratio {r}"),
        }
    }
}

impl FromStr for BaselineMode {
    type Err = Error;

    /// `tracking-only`, `ratio 0.25` or `ratio=0.25`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "tracking-only" {
            return Ok(BaselineMode::TrackingOnly);
        }
        let value = s
            .strip_prefix("ratio")
            .map(|r| r.trim_start_matches([' ', '=']))
            .ok_or_else(|| Error::Config(format!("unknown baseline mode '{s}'")))?;
        let r: f64 = value.parse().map_err(|_| Error::Config(format!("bad baseline ratio '{value}'")))?;
        let mode = BaselineMode::Ratio(r);
        mode.validate()?;
        Ok(mode)
    }
}

/// Reduces a dense cloud to its pose-tracking points, optionally keeping only
/// `round(r·n)` of them chosen without replacement.
pub fn make_sparse_baseline(cloud: &[ColoredPoint], mode: BaselineMode, seed: u64) -> Result<Vec<ColoredPoint>> {
    mode.validate()?;
    let tracking: Vec<ColoredPoint> = cloud.iter().filter(|p| p.status == PointStatus::PoseTracking).copied().collect();
    let out = match mode {
        BaselineMode::TrackingOnly => tracking,
        BaselineMode::Ratio(r) => {
            let keep = (r * tracking.len() as f64).round() as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen = index::sample(&mut rng, tracking.len(), keep).into_vec();
            chosen.sort_unstable();
            chosen.into_iter().map(|i| tracking[i]).collect()
        }
    };
    if out.is_empty() {
        return Err(Error::Config(format!("sparse baseline ({mode}) kept no points out of {}", cloud.len())));
    }
    Ok(out)
}
