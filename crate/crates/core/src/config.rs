//! Run configuration: one JSON document, every key optional, unknown keys
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodecoder::NetworkConfig;
use crate::error::{Error, Result};
use crate::field::{FieldConfig, Supervision};
use crate::geometry::DEFAULT_CORNER_THRESHOLD;
use crate::glyph::{Alphabet, DEFAULT_MARGIN};
use crate::sampling::SamplingConfig;
use crate::trainer::{FitConfig, LossWeights, WarmupConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub field: FieldConfig,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Manifest path, relative to the working directory.
    pub manifest: Option<PathBuf>,
    pub alphabet: Alphabet,
    pub margin: f64,
    /// Corners are kept when the angle between the reversed incoming and the
    /// outgoing tangent is below this (radians).
    pub corner_threshold: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            manifest: None,
            alphabet: Alphabet::default(),
            margin: DEFAULT_MARGIN,
            corner_threshold: DEFAULT_CORNER_THRESHOLD,
        }
    }
}

/// Network shape; the label count comes from the alphabet and the output
/// count from `field.channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub latent_dim: usize,
    pub skip_after: Option<usize>,
    pub leaky_slope: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            hidden_layers: 8,
            hidden_width: 384,
            latent_dim: 128,
            skip_after: Some(3),
            leaky_slope: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Latent codes stop updating from this epoch on.
    pub freeze_epoch: Option<usize>,
    pub seed: u64,
    pub lr: f64,
    pub weights: LossWeights,
    pub warmup: WarmupConfig,
    pub supervision: Supervision,
    pub homogeneous_ratio: f64,
    pub min_homogeneous: usize,
    /// Worker threads; 0 uses all cores, 1 also zeroes the logged wall time so
    /// logs are byte-reproducible.
    pub threads: usize,
    pub fit: FitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let s = SamplingConfig::default();
        TrainConfig {
            epochs: 2000,
            freeze_epoch: None,
            seed: 0,
            lr: 1e-3,
            weights: LossWeights::default(),
            warmup: WarmupConfig::default(),
            supervision: Supervision::Sdf,
            homogeneous_ratio: s.homogeneous_ratio,
            min_homogeneous: s.min_homogeneous,
            threads: 0,
            fit: FitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn sampling_config(&self) -> SamplingConfig {
        SamplingConfig {
            homogeneous_ratio: self.homogeneous_ratio,
            min_homogeneous: self.min_homogeneous,
            ..SamplingConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub resolutions: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resolutions: vec![128, 256, 512, 1024],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.train.weights.validate()?;
        self.network_config(self.dataset.alphabet.len()).validate()?;
        if !(self.train.lr > 0.0) {
            return Err(Error::Config("train.lr must be positive".into()));
        }
        if !(self.train.homogeneous_ratio >= 0.0) {
            return Err(Error::Config("train.homogeneous_ratio must be >= 0".into()));
        }
        if self.train.warmup.enabled && !(self.train.warmup.gamma_start > 0.0) {
            return Err(Error::Config("train.warmup.gamma_start must be positive".into()));
        }
        if !(self.dataset.margin >= 0.0 && self.dataset.margin < 1.0) {
            return Err(Error::Config("dataset.margin must be in [0, 1)".into()));
        }
        if self.eval.resolutions.iter().any(|&r| r < 8) {
            return Err(Error::Config("eval.resolutions must all be at least 8".into()));
        }
        Ok(())
    }

    pub fn network_config(&self, label_count: usize) -> NetworkConfig {
        NetworkConfig {
            label_count,
            latent_dim: self.network.latent_dim,
            hidden_layers: self.network.hidden_layers,
            hidden_width: self.network.hidden_width,
            skip_after: self.network.skip_after,
            out_channels: self.field.channels,
            leaky_slope: self.network.leaky_slope,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.field.channels, 3);
        assert_eq!(c.field.aa_k, 4.0);
        assert_eq!(c.field.train_width, 64);
        assert_eq!(c.train.weights.alpha, 1.0);
        assert_eq!(c.train.weights.beta, 0.01);
        assert_eq!(c.train.weights.gamma_reg, 1e-4);
        assert_eq!(c.train.homogeneous_ratio, 0.25);
        assert_eq!(c.network.hidden_layers, 8);
        assert_eq!(c.network.hidden_width, 384);
        assert_eq!(c.network_config(52).input_dim(), 2 + 52 + 128);
        assert_eq!(c.eval.resolutions, vec![128, 256, 512, 1024]);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"epochz": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"field": {"channels": 2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"weights": {"alpha": -1}}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"network": {"hidden_layers": 2, "skip_after": 2}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let mut c = RunConfig::default();
        c.train.supervision = Supervision::Pixel;
        c.train.freeze_epoch = Some(10);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"pixel\""));
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
    }
}
