//! TOML configuration: one section per module plus `[harness]`.

use std::path::Path;

use densesplat_core::odometry::OdometryConfig;
use densesplat_core::selection::SelectionConfig;
use densesplat_core::splat::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::baseline::BaselineMode;
use crate::synth::SynthConfig;
use crate::{Error, Result};

/// Iterations at which held-out PSNR is recorded.
pub const DEFAULT_CHECKPOINTS: [usize; 13] = [10, 15, 20, 30, 40, 60, 80, 120, 160, 240, 320, 480, 640];

/// The checked-in defaults, kept in sync with `Config::default` by a test.
pub const DEFAULT_TOML: &str = include_str!("../../../default.toml");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub odometry: OdometryConfig,
    pub selection: SelectionConfig,
    pub splat: TrainConfig,
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub checkpoints: Vec<usize>,
    /// Frame `i` is held out when `i % holdout_every == holdout_every - 1`.
    pub holdout_every: usize,
    pub baseline: BaselineMode,
    /// Parallel seed jobs; 0 lets rayon decide.
    pub workers: usize,
    /// Fill the `ms` column with wall-clock time. Off by default because it
    /// makes outputs differ between runs.
    pub record_timing: bool,
    /// Scene used by `compare` when no dataset is given.
    pub synth: SynthConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            checkpoints: DEFAULT_CHECKPOINTS.to_vec(),
            holdout_every: 5,
            baseline: BaselineMode::TrackingOnly,
            workers: 0,
            record_timing: false,
            synth: SynthConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoints.is_empty() || self.checkpoints.windows(2).any(|w| w[0] >= w[1]) || self.checkpoints[0] == 0 {
            return Err(Error::Config("harness.checkpoints must be positive and strictly increasing".into()));
        }
        if self.holdout_every < 2 {
            return Err(Error::Config("harness.holdout_every must be at least 2".into()));
        }
        self.baseline.validate()?;
        self.synth.validate()
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.odometry.validate()?;
        self.selection.validate()?;
        self.splat.validate()?;
        self.harness.validate()?;
        if self.splat.iterations < *self.harness.checkpoints.last().expect("validated") {
            return Err(Error::Config("splat.iterations is below the last checkpoint".into()));
        }
        Ok(())
    }
}
