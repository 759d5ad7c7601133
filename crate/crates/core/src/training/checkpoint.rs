use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, NormalizationSpec};
use crate::error::{Error, Result};
use crate::nn::{read_blob, write_blob};
use crate::stage1::sidecar_path;
use crate::stage2::{TemporalModel, TemporalModelConfig};

use super::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training-window loss (train mode, augmented inputs).
    pub train_loss_mm: f64,
    pub val_mpjpe_mm: Option<f64>,
}

/// A trained second-stage model with everything needed to reproduce its
/// inputs and its training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TemporalModel,
    pub train_config: TrainConfig,
    pub camera: CameraIntrinsics,
    pub normalization: NormalizationSpec,
    pub loss_curve: Vec<f64>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

const FORMAT: &str = "temporalckpt";
const VERSION: u64 = 1;
const TENSOR_ORDER: &str = "little-endian f64; input conv weight [tap][cin][cout], input bn gamma, beta, \
running mean, running var; per block: dilated conv weight, bn1 (gamma, beta, mean, var), pointwise conv weight, \
bn2 (gamma, beta, mean, var); output conv weight, output bias";

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    version: u64,
    model_config: TemporalModelConfig,
    train_config: TrainConfig,
    camera: CameraIntrinsics,
    normalization: NormalizationSpec,
    num_params: usize,
    best_epoch: usize,
    loss_curve: Vec<f64>,
    history: Vec<EpochRecord>,
    tensor_order: String,
}

impl Checkpoint {
    /// Writes the weight blob to `path` and the JSON sidecar to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let blob = write_blob(self.model.tensors().into_iter().map(|t| t.as_slice()));
        std::fs::write(path, blob).map_err(|e| Error::io(path, e))?;
        let side = Sidecar {
            format: FORMAT.into(),
            version: VERSION,
            model_config: self.model.config().clone(),
            train_config: self.train_config.clone(),
            camera: self.camera,
            normalization: self.normalization,
            num_params: self.model.num_params(),
            best_epoch: self.best_epoch,
            loss_curve: self.loss_curve.clone(),
            history: self.history.clone(),
            tensor_order: TENSOR_ORDER.into(),
        };
        let sp = sidecar_path(path);
        std::fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sp = sidecar_path(path);
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        if side.format != FORMAT {
            return Err(Error::Malformed {
                line: 1,
                msg: format!("not a temporal-model checkpoint: {}", side.format),
            });
        }
        if side.version != VERSION {
            return Err(Error::SchemaVersion {
                format: FORMAT.into(),
                found: side.version,
                expected: VERSION,
            });
        }
        let blob = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut model = TemporalModel::new(side.model_config, 0)?;
        read_blob(&blob, model.tensors_mut()).map_err(Error::InvalidConfig)?;
        Ok(Self {
            model,
            train_config: side.train_config,
            camera: side.camera,
            normalization: side.normalization,
            loss_curve: side.loss_curve,
            history: side.history,
            best_epoch: side.best_epoch,
        })
    }

    /// Per-epoch history as JSON, as consumed by the plotter.
    pub fn history_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.history)?)
    }
}
