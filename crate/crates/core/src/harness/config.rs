//! Experiment configuration, read from a single TOML file. Every section
//! is optional and falls back to its defaults.
//!
//! ```toml
//! seed = 7
//!
//! [model]      # ModelConfig
//! [train]      # TrainConfig
//! [synth]      # SynthConfig (its `seed` is replaced by the top-level seed)
//! [limits]     # joint limit table, see biomech
//! [smoothing]  # sigma, half_window
//! [body]       # skeleton and vertex cloud
//! [report]     # reference_error_mm
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::biomech::JointLimits;
use crate::data::{SynthConfig, WindowMode};
use crate::error::{Error, Result};
use crate::kinematics::{Skeleton, VertexCloud};
use crate::model::ModelConfig;
use crate::rotations::SmoothingParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Learning rate is multiplied by `lr_factor` every `lr_step_epochs`.
    pub lr_step_epochs: usize,
    pub lr_factor: f64,
    pub lambda: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
    /// Window stride in pose frames; 0 means `l_out`.
    pub stride: usize,
    pub window_mode: WindowMode,
    /// Smooth pose targets before windowing.
    pub smooth_targets: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lr_step_epochs: 25,
            lr_factor: 0.5,
            lambda: 0.1,
            epochs: 100,
            patience: 10,
            stride: 0,
            window_mode: WindowMode::SameSpan,
            smooth_targets: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.lr_step_epochs > 0
            && self.lr_factor > 0.0
            && self.lambda >= 0.0
            && self.epochs > 0;
        if !ok {
            return Err(Error::Config(format!("invalid train settings: {self:?}")));
        }
        Ok(())
    }

    pub fn stride_for(&self, l_out: usize) -> usize {
        if self.stride == 0 {
            l_out
        } else {
            self.stride
        }
    }
}

/// `lr₀ · factor^floor(epoch / step)`.
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    let steps = (epoch / cfg.lr_step_epochs) as i32;
    cfg.learning_rate * cfg.lr_factor.powi(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BodyConfig {
    pub skeleton: Skeleton,
    /// Size of the generated vertex cloud used for MPVE.
    pub vertices: usize,
    /// Vertex scatter around joints, meters.
    pub spread: f64,
    /// Optional body-model file; overrides `skeleton` and the generated cloud.
    pub model_file: Option<String>,
}

impl Default for BodyConfig {
    fn default() -> Self {
        BodyConfig {
            skeleton: Skeleton::default(),
            vertices: 512,
            spread: 0.04,
            model_file: None,
        }
    }
}

impl BodyConfig {
    pub fn build(&self, seed: u64) -> Result<(Skeleton, VertexCloud)> {
        if let Some(path) = &self.model_file {
            return crate::kinematics::BodyModelFile::load(Path::new(path));
        }
        self.skeleton.validate()?;
        let cloud = VertexCloud::generate(self.vertices, &self.skeleton, self.spread, seed)?;
        Ok((self.skeleton.clone(), cloud))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// External error the fold average is composed with, mm. The default is
    /// the error of the optical pseudo-labels.
    pub reference_error_mm: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            reference_error_mm: 24.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Run folds on the rayon pool.
    pub parallel_folds: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub limits: JointLimits,
    pub smoothing: SmoothingParams,
    pub body: BodyConfig,
    pub report: ReportConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let seed = cfg.seed;
        Ok(cfg.with_seed(seed))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the one named seed and propagates it to every section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.synth.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        self.body.skeleton.validate()?;
        if self.model.rate_ratio != self.synth.rate_ratio {
            return Err(Error::Config(format!(
                "model rate_ratio {} differs from synth rate_ratio {}",
                self.model.rate_ratio, self.synth.rate_ratio
            )));
        }
        if !(self.report.reference_error_mm >= 0.0) {
            return Err(Error::Config("reference_error_mm must be >= 0".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML form, first 16 hex digits.
    pub fn fingerprint(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(hex::encode(digest)[..16].to_string())
    }
}
