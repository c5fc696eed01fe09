//! Training, evaluation, the leave-one-person-out driver and reports.

pub mod config;
pub mod eval;
pub mod lopo;
pub mod optim;
pub mod report;
pub mod train;

use std::path::Path;

use crate::autodiff::{load_checkpoint, save_checkpoint};
use crate::data::Standardizer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Imp2Head, ModelConfig};

pub use config::{lr_at_epoch, ExperimentConfig, TrainConfig};
pub use eval::{evaluate, LastFrameLinear, Metrics};
pub use lopo::{run_lopo, run_lopo_synthetic};
pub use optim::Adam;
pub use report::{emit_report, Report, ReportFormat, ReportTable};
pub use train::{train, EpochStats, TrainOutcome};

/// Writes parameters and input statistics into one checkpoint.
pub fn save_model(path: &Path, model: &Imp2Head, norm: &Standardizer) -> Result<()> {
    let mut records = model.params().entries().to_vec();
    records.extend(norm.to_records());
    save_checkpoint(path, &records)
}

pub fn load_model(path: &Path, config: ModelConfig) -> Result<(Imp2Head, Standardizer)> {
    let records = load_checkpoint(path)?;
    let mut model = Imp2Head::new(config, 0)?;
    model.params_mut().load_from(&records)?;
    let norm = Standardizer::from_records(&records)?;
    Ok((model, norm))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    model: ModelConfig,
}

/// Writes `[model]` as TOML, the sidecar kept next to a checkpoint.
pub fn save_model_config(path: &Path, config: &ModelConfig) -> Result<()> {
    let text = toml::to_string(&ModelSection { model: config.clone() }).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path)?;
    let s: ModelSection = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    s.model.validate()?;
    Ok(s.model)
}
