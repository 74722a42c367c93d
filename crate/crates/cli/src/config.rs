//! The workbench configuration file.
//!
//! TOML with one section per stage; every key is optional and unknown keys
//! are rejected:
//!
//! ```toml
//! [synth.channel]
//! count = [3, 6]
//!
//! [train]
//! epochs = 500
//!
//! [condition]
//! beta = 0.999
//!
//! [validate]
//! max_std_ratio = 2.0
//! ```

use std::path::Path;

use facies_core::obm::SynthSpecs;
use facies_core::stats::{BiasThresholds, DEFAULT_BINS};
use facies_gan::{ConditioningConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub max_mean_delta: f64,
    pub max_std_ratio: f64,
    pub max_pixel_delta: f64,
    /// Histogram bins over [0, 1].
    pub bins: usize,
    /// Classifier accuracy required when a held-out set is scored.
    pub min_accuracy: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        let t = BiasThresholds::default();
        Self {
            max_mean_delta: t.max_mean_delta,
            max_std_ratio: t.max_std_ratio,
            max_pixel_delta: t.max_pixel_delta,
            bins: DEFAULT_BINS,
            min_accuracy: 0.95,
        }
    }
}

impl ValidateConfig {
    pub fn thresholds(&self) -> BiasThresholds {
        BiasThresholds {
            max_mean_delta: self.max_mean_delta,
            max_std_ratio: self.max_std_ratio,
            max_pixel_delta: self.max_pixel_delta,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkbenchConfig {
    pub synth: SynthSpecs,
    pub train: TrainConfig,
    pub condition: ConditioningConfig,
    pub validate: ValidateConfig,
}

impl WorkbenchConfig {
    pub fn parse(text: &str) -> Result<Self, UsageError> {
        let de = toml::Deserializer::parse(text).map_err(|e| UsageError(format!("config: {}", e.message())))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            UsageError(format!("config key `{path}`: {}", e.inner().message()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        Ok(Self::parse(&text).map_err(|e| UsageError(format!("{}: {}", path.display(), e.0)))?)
    }

    /// Defaults, or the file when one is given.
    pub fn load_or_default(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::parse("")?),
        }
    }

    fn check(&self) -> Result<(), UsageError> {
        let wrap = |section: &str, e: String| UsageError(format!("config [{section}]: {e}"));
        self.synth.channel.validate().map_err(|e| wrap("synth.channel", e.to_string()))?;
        self.synth.dressing.validate().map_err(|e| wrap("synth.dressing", e.to_string()))?;
        self.train.validate().map_err(|e| wrap("train", e.to_string()))?;
        self.condition.validate().map_err(|e| wrap("condition", e.to_string()))?;
        let t = self.validate.thresholds();
        for (name, v) in [
            ("max_mean_delta", t.max_mean_delta),
            ("max_std_ratio", t.max_std_ratio),
            ("max_pixel_delta", t.max_pixel_delta),
        ] {
            if !(v >= 0.0) {
                return Err(wrap("validate", format!("{name} {v} must be non-negative")));
            }
        }
        if !(0.0..=1.0).contains(&self.validate.min_accuracy) {
            return Err(wrap("validate", format!("min_accuracy {} not in [0, 1]", self.validate.min_accuracy)));
        }
        if self.validate.bins < 2 {
            return Err(wrap("validate", format!("bins {} must be at least 2", self.validate.bins)));
        }
        Ok(())
    }
}
