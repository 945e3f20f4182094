//! The assembled detector: frozen encoder, repair network and segmentation
//! head, with stage checkpoints and inference.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crr_core::scoring::{anomaly_map, image_score, AnomalyMap};
use crr_core::{Grid, Image};

use crate::backbone::{Backbone, FeatureStack};
use crate::config::CrrConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::repair_net::{
    discrepancy_map, group, inference_mask, map_grids, FeatureMask, GroupedFeatures, Mode, RepairNet,
};
use crate::segnet::{similarity_feature, SegNet};

pub struct CrrModel {
    pub config: CrrConfig,
    pub backbone: Backbone,
    pub repair: RepairNet,
    pub seg: SegNet,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    stage1_complete: bool,
    stage2_complete: bool,
}

/// One image's inference products.
#[derive(Clone, Debug)]
pub struct Inference {
    /// Per-token discrepancy at encoder resolution.
    pub discrepancy: Grid,
    /// Segmentation probabilities at input resolution, when enabled.
    pub segmentation: Option<Grid>,
    pub anomaly: AnomalyMap,
}

/// Checksums of the three parameter sets.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Checksums {
    pub encoder: String,
    pub repair: String,
    pub seg: String,
}

impl CrrModel {
    pub fn new(config: &CrrConfig, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            backbone: Backbone::new(&config.backbone, dtype, device)?,
            repair: RepairNet::new(&config.repair_net, &config.backbone, dtype, device)?,
            seg: SegNet::new(&config.segnet, &config.backbone, dtype, device)?,
            config: config.clone(),
            stage1_iterations: 0,
            stage2_iterations: 0,
            stage1_complete: false,
            stage2_complete: false,
        })
    }

    /// 32-bit CPU model, the configuration every command-line run uses.
    pub fn cpu(config: &CrrConfig) -> Result<Self> {
        Self::new(config, DType::F32, &Device::Cpu)
    }

    pub fn stage1_complete(&self) -> bool {
        self.stage1_complete
    }

    pub fn stage2_complete(&self) -> bool {
        self.stage2_complete
    }

    pub(crate) fn mark_stage1(&mut self, iterations: usize) {
        self.stage1_complete = true;
        self.stage1_iterations += iterations;
    }

    pub(crate) fn mark_stage2(&mut self, iterations: usize) {
        self.stage2_complete = true;
        self.stage2_iterations += iterations;
    }

    pub fn checksums(&self) -> Result<Checksums> {
        Ok(Checksums {
            encoder: self.backbone.params().checksum()?,
            repair: self.repair.params().checksum()?,
            seg: self.seg.params().checksum()?,
        })
    }

    fn metadata(&self, stage: &str, iterations: usize) -> HashMap<String, String> {
        [
            ("stage", stage.to_string()),
            ("spec_hash", self.config.spec_hash()),
            ("iterations", iterations.to_string()),
            ("stage1_complete", self.stage1_complete.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn save_stage1(&self, path: &Path) -> Result<()> {
        if !self.stage1_complete {
            return Err(Error::State("stage 1 has not been run".into()));
        }
        self.repair.params().save(path, self.metadata("stage1", self.stage1_iterations))
    }

    pub fn save_stage2(&self, path: &Path) -> Result<()> {
        if !self.stage2_complete {
            return Err(Error::State("stage 2 has not been run".into()));
        }
        self.seg.params().save(path, self.metadata("stage2", self.stage2_iterations))
    }

    fn check_meta(&self, meta: &HashMap<String, String>, stage: &str, path: &Path) -> Result<usize> {
        let bad = |what: &str| Error::Checkpoint(format!("{}: {what}", path.display()));
        if meta.get("stage").map(String::as_str) != Some(stage) {
            return Err(bad(&format!("not a {stage} checkpoint")));
        }
        if meta.get("spec_hash") != Some(&self.config.spec_hash()) {
            return Err(bad("spec hash does not match the configuration"));
        }
        meta.get("iterations")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing iteration counter"))
    }

    pub fn load_stage1(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::State(format!("stage-1 checkpoint {} not found", path.display())));
        }
        let iterations = self.check_meta(&ParamStore::read_metadata(path)?, "stage1", path)?;
        self.repair.params().load(path, false)?;
        self.stage1_iterations = iterations;
        self.stage1_complete = true;
        Ok(())
    }

    pub fn load_stage2(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::State(format!("stage-2 checkpoint {} not found", path.display())));
        }
        if !self.stage1_complete {
            return Err(Error::State("load the stage-1 checkpoint before stage 2".into()));
        }
        let iterations = self.check_meta(&ParamStore::read_metadata(path)?, "stage2", path)?;
        self.seg.params().load(path, false)?;
        self.stage2_iterations = iterations;
        self.stage2_complete = true;
        Ok(())
    }

    pub(crate) fn mask_ratio(&self) -> f64 {
        self.config.repair_net.effective_mask_ratio()
    }

    /// Grouped encoder and decoder features of normalised images, in eval
    /// mode with the given masks. Both are detached.
    pub fn grouped_features(
        &self,
        images: &[&Image],
        masks: &[FeatureMask],
    ) -> Result<(FeatureStack, GroupedFeatures, GroupedFeatures)> {
        let fe = self.backbone.extract_images(images)?;
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let (fd, _) = self.repair.forward(&fe, masks, Mode::Eval, &mut unused)?;
        let ge = group(&fe)?;
        let gd = group(&fd)?.detach();
        Ok((fe, ge, gd))
    }

    /// Reproducible test-time masks, seeded by image index.
    pub fn inference_masks(&self, indices: &[u64]) -> Result<Vec<FeatureMask>> {
        let grid = self.config.backbone.token_grid();
        indices
            .iter()
            .map(|&i| inference_mask(grid, self.mask_ratio(), self.config.trainer.seed, i))
            .collect()
    }

    /// Per-token discrepancy grids of normalised images under the
    /// index-seeded inference masks. Needs only stage 1.
    pub fn discrepancy_maps(&self, images: &[&Image], indices: &[u64]) -> Result<Vec<Grid>> {
        if !self.stage1_complete {
            return Err(Error::State("discrepancy maps need a trained repair network".into()));
        }
        let masks = self.inference_masks(indices)?;
        let (_, ge, gd) = self.grouped_features(images, &masks)?;
        map_grids(&discrepancy_map(&ge, &gd)?)
    }

    /// Scores a batch of normalised images. `indices` seed the per-image
    /// masks so a given image always sees the same mask.
    pub fn infer(&self, images: &[&Image], indices: &[u64]) -> Result<Vec<Inference>> {
        if images.len() != indices.len() {
            return Err(Error::Parameter("one index per image is required".into()));
        }
        if !self.stage1_complete {
            return Err(Error::State("inference needs a trained repair network".into()));
        }
        let scoring = &self.config.scoring;
        if scoring.use_segnet && !self.stage2_complete {
            return Err(Error::State("inference with the segmentation head needs stage 2".into()));
        }
        let masks = self.inference_masks(indices)?;
        let (_, ge, gd) = self.grouped_features(images, &masks)?;
        let dmaps = map_grids(&discrepancy_map(&ge, &gd)?)?;
        let segs = if scoring.use_segnet {
            Some(self.seg.predict(&similarity_feature(&ge, &gd)?)?)
        } else {
            None
        };
        let s = self.config.backbone.input_size;
        let t = scoring.top_t_for(s * s);
        dmaps
            .into_iter()
            .enumerate()
            .map(|(i, d)| {
                let seg = segs.as_ref().map(|v| v[i].clone());
                let map = match &seg {
                    Some(sg) => anomaly_map(&d, Some(sg), scoring.lambda1, scoring.lambda2, s)?,
                    None => anomaly_map(&d, None, 1.0, 0.0, s)?,
                };
                let score = image_score(&map.values, t)?;
                Ok(Inference {
                    discrepancy: d,
                    segmentation: seg,
                    anomaly: AnomalyMap {
                        map,
                        image_score: score,
                    },
                })
            })
            .collect()
    }
}
