//! Run configuration: one TOML document with a section per component.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crr_core::scoring::ScoringConfig;
use crr_core::synthesis::SynthesisConfig;

use crate::backbone::BackboneSpec;
use crate::error::{Error, Result};
use crate::optim::{OptimizerKind, OptimizerSettings};
use crate::repair_net::RepairNetConfig;
use crate::segnet::SegNetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub betas: [f64; 2],
    pub weight_decay: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl StageConfig {
    pub fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr: self.lr,
            betas: self.betas,
            weight_decay: self.weight_decay,
            eps: self.eps,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(format!("{name}.batch_size must be positive")));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("{name}.lr must be positive")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Seeds batch sampling, synthesis, masks and dropout.
    pub seed: u64,
    /// When false stage 1 trains on normal reconstruction alone.
    #[serde(default = "yes")]
    pub nrar: bool,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

fn yes() -> bool {
    true
}

fn default_log_every() -> usize {
    1
}

impl TrainerConfig {
    /// Iteration budget of an MVTec-AD-scale run.
    pub fn reference() -> Self {
        Self {
            stage1: StageConfig {
                iterations: 10_000,
                batch_size: 8,
                optimizer: OptimizerKind::StableAdamWAmsgrad,
                lr: 2e-3,
                betas: [0.9, 0.999],
                weight_decay: 1e-4,
                eps: 1e-8,
            },
            stage2: StageConfig {
                iterations: 10_000,
                batch_size: 16,
                optimizer: OptimizerKind::AdamW,
                lr: 1e-4,
                betas: [0.9, 0.999],
                weight_decay: 1e-2,
                eps: 1e-8,
            },
            seed: 0,
            nrar: true,
            log_every: 1,
        }
    }

    pub fn toy() -> Self {
        let mut t = Self::reference();
        t.stage1.iterations = 300;
        t.stage2.iterations = 200;
        t.stage2.lr = 1e-3;
        t.stage2.batch_size = 8;
        t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    /// Dataset root in the `<class>/train/good`, `<class>/test/<kind>`,
    /// `<class>/ground_truth/<kind>` layout.
    pub root: Option<PathBuf>,
    /// Directory of texture images for synthesis; empty means
    /// self-augmentation of the normal image.
    pub textures: Option<PathBuf>,
    /// Classes to use; empty means every class under `root`.
    pub classes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrrConfig {
    pub backbone: BackboneSpec,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub repair_net: RepairNetConfig,
    #[serde(default)]
    pub segnet: SegNetConfig,
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
}

impl CrrConfig {
    pub fn toy() -> Self {
        Self {
            backbone: BackboneSpec::toy(),
            synthesis: SynthesisConfig::default(),
            repair_net: RepairNetConfig::default(),
            segnet: SegNetConfig::default(),
            trainer: TrainerConfig::toy(),
            scoring: ScoringConfig::default(),
            dataset: DatasetConfig::default(),
        }
    }

    pub fn reference() -> Self {
        Self {
            backbone: BackboneSpec::vit_base14(),
            trainer: TrainerConfig::reference(),
            ..Self::toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "reference" => Ok(Self::reference()),
            other => Err(Error::Config(format!("unknown preset `{other}` (toy, reference)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.backbone.validate().map_err(wrap)?;
        self.synthesis.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.repair_net.validate().map_err(wrap)?;
        self.segnet.validate().map_err(wrap)?;
        self.trainer.stage1.validate("trainer.stage1")?;
        self.trainer.stage2.validate("trainer.stage2")?;
        let s = &self.scoring;
        if s.lambda1 < 0.0 || s.lambda2 < 0.0 || s.lambda1 + s.lambda2 <= 0.0 {
            return Err(Error::Config("scoring weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    /// Hash of the architecture and encoder identity; a checkpoint is only
    /// valid against a config with the same hash.
    pub fn spec_hash(&self) -> String {
        let mut bb = self.backbone.clone();
        bb.weights = None;
        let arch = serde_json::json!({
            "backbone": bb,
            "decoder_depth": self.repair_net.depth,
            "bottleneck_ratio": self.repair_net.bottleneck_ratio,
            "seg_variant": self.segnet.variant,
        });
        hex::encode(Sha256::digest(arch.to_string().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        for cfg in [CrrConfig::toy(), CrrConfig::reference()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(CrrConfig::from_toml(&text).unwrap(), cfg);
        }
        assert!(text_has_sections(&CrrConfig::toy().to_toml().unwrap()));
    }

    fn text_has_sections(t: &str) -> bool {
        ["[backbone]", "[synthesis]", "[repair_net]", "[segnet]", "[trainer.stage1]", "[scoring]", "[dataset]"]
            .iter()
            .all(|s| t.contains(s))
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut cfg = CrrConfig::toy();
        cfg.trainer.stage1.lr = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let text = CrrConfig::toy().to_toml().unwrap().replace("\"adamw\"", "\"sgd\"");
        assert!(matches!(CrrConfig::from_toml(&text), Err(Error::Config(_))));
        assert!(CrrConfig::preset("huge").is_err());
    }

    #[test]
    fn hash_ignores_training_settings() {
        let a = CrrConfig::toy();
        let mut b = a.clone();
        b.trainer.seed = 99;
        assert_eq!(a.spec_hash(), b.spec_hash());
        b.backbone.embed_dim = 32;
        assert_ne!(a.spec_hash(), b.spec_hash());
    }
}
