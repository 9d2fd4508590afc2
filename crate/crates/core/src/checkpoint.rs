//! Versioned JSON checkpoints.
//!
//! A checkpoint is one JSON object:
//!
//! | field               | content                                            |
//! |---------------------|----------------------------------------------------|
//! | `format`            | always `"cvtgad-checkpoint"`                        |
//! | `version`           | [`CHECKPOINT_VERSION`]                             |
//! | `config`            | the full experiment configuration                  |
//! | `feature_dim`       | input width of the feature view                    |
//! | `structure_dim`     | input width of the structure view                  |
//! | `node_label_values` | node-label vocabulary used for one-hot features    |
//! | `score_stats`       | training-set loss statistics                       |
//! | `params`            | `{names, values}`; each value is `{shape, data}`   |
//!
//! Floats are written with round-trip precision, so loading reproduces the
//! trained parameters bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::TrainedRun;
use crate::model::Cvtgad;
use crate::objective::ScoreStats;
use crate::params::ParamStore;

pub const CHECKPOINT_FORMAT: &str = "cvtgad-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub feature_dim: usize,
    pub structure_dim: usize,
    pub node_label_values: Vec<i64>,
    pub score_stats: ScoreStats,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_run(run: &TrainedRun) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: run.result.config.clone(),
            feature_dim: run.model.feature_dim,
            structure_dim: run.model.structure_dim,
            node_label_values: run.node_label_values.clone(),
            score_stats: run.result.score_stats.clone(),
            params: run.model.store.clone(),
        }
    }

    /// Rebuilds the model with the stored parameters.
    pub fn model(&self) -> Result<Cvtgad> {
        let mut model = Cvtgad::new(
            self.config.model.clone(),
            self.feature_dim,
            self.structure_dim,
            self.config.seed,
        )?;
        model.store.load_from(&self.params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = |source| Error::Json {
            path: path.to_path_buf(),
            source,
        };
        let text = serde_json::to_string(self).map_err(json)?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("{}: not a checkpoint", path.display())));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: checkpoint version {} (supported: {CHECKPOINT_VERSION})",
                path.display(),
                ckpt.version
            )));
        }
        Ok(ckpt)
    }
}
