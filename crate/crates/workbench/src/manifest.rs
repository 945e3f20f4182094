//! Per-run provenance record, written next to the checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crr_model::CrrConfig;

use crate::error::{file_err, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub trainer: u64,
    pub backbone_init: u64,
    pub repair_init: u64,
    pub segnet_init: u64,
}

impl Seeds {
    pub fn of(config: &CrrConfig) -> Self {
        Self {
            trainer: config.trainer.seed,
            backbone_init: config.backbone.init_seed,
            repair_init: config.repair_net.init_seed,
            segnet_init: config.segnet.init_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config: CrrConfig,
    pub seeds: Seeds,
    pub dataset_hash: String,
    /// Checkpoint file name to SHA-256 of its bytes.
    pub checkpoints: BTreeMap<String, String>,
    pub stages_completed: Vec<u8>,
}

impl RunManifest {
    pub fn new(config: &CrrConfig, dataset_hash: String) -> Self {
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            seeds: Seeds::of(config),
            dataset_hash,
            checkpoints: BTreeMap::new(),
            stages_completed: Vec::new(),
        }
    }

    pub fn record_checkpoint(&mut self, path: &Path) -> Result<()> {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        self.checkpoints.insert(name, file_sha256(path)?);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| file_err(path, e))?;
        std::fs::write(path, text).map_err(|e| file_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| file_err(path, e))
    }
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| file_err(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}
