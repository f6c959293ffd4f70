//! Trained-model checkpoints.

use std::path::Path;

use odesig_core::diffmath::Array2;
use odesig_core::relgraphs::{RoiAtlas, build_spatial_graph};
use odesig_core::training::{ModelDims, ModelParams, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;
use crate::io::{self, Provenance};

pub const FORMAT: &str = "odesig-checkpoint/1";

/// Everything needed to rerun inference: parameters, the training config
/// (including the ablation switches) and the spatial graph inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub atlas: RoiAtlas,
    pub spatial_threshold: f64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        Ok(io::write_json(path, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let ckpt: Checkpoint = io::read_json(path)?;
        if ckpt.format != FORMAT {
            return Err(CliError::Compatibility(format!(
                "unsupported checkpoint format '{}', expected '{FORMAT}'",
                ckpt.format
            )));
        }
        if ckpt.params.dims() != ckpt.train.dims {
            return Err(CliError::Compatibility(
                "checkpoint parameters do not match its recorded dimensions".into(),
            ));
        }
        Ok(ckpt)
    }

    pub fn spatial(&self) -> Result<Array2, CliError> {
        Ok(build_spatial_graph(&self.atlas, self.spatial_threshold)?.adjacency)
    }

    /// Rejects inputs whose shape differs from the trained model.
    pub fn check_compatible(
        &self,
        n_rois: usize,
        expected: Option<&ModelDims>,
    ) -> Result<(), CliError> {
        if n_rois != self.atlas.len() {
            return Err(CliError::Compatibility(format!(
                "input has {n_rois} ROIs but the checkpoint was trained on {}",
                self.atlas.len()
            )));
        }
        if let Some(dims) = expected
            && *dims != self.train.dims
        {
            return Err(CliError::Compatibility(format!(
                "config dims {dims:?} differ from checkpoint dims {:?}",
                self.train.dims
            )));
        }
        Ok(())
    }
}
