//! The steps behind each command, usable without the CLI.
//!
//! A run directory holds `config.toml`, `stage1.safetensors`,
//! `stage2.safetensors`, `train_log.jsonl` and `manifest.json`. A score
//! directory holds `index.json`, one `maps/<class>/<kind>/<stem>.f64`
//! sidecar per test image and, optionally, `heatmaps/` panels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crr_core::metrics::{evaluate_class, ClassPredictions, MetricsReport};
use crr_core::synthesis::TextureBank;
use crr_core::Mask;
use crr_model::backbone::{prepare_geometry, prepare_mask, preprocess, BackboneSpec};
use crr_model::trainer::{train_stage1, train_stage2, TrainingSet};
use crr_model::{CrrConfig, CrrModel};

use crate::dataset::{load_dataset, DatasetIndex, Layout};
use crate::error::{file_err, Error, Result};
use crate::heatmap::{export_heatmap, read_scores, write_scores};
use crate::imageio::{is_image_file, load_image, load_mask};
use crate::manifest::RunManifest;

pub const CONFIG_FILE: &str = "config.toml";
pub const STAGE1_FILE: &str = "stage1.safetensors";
pub const STAGE2_FILE: &str = "stage2.safetensors";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.json";
pub const SCORE_DTYPE: &str = "f64-le";
pub const INFER_BATCH: usize = 8;

pub fn dataset_for(config: &CrrConfig) -> Result<DatasetIndex> {
    let root = config
        .dataset
        .root
        .as_deref()
        .ok_or_else(|| Error::Config("dataset.root is not set".into()))?;
    load_dataset(root, Layout::MvtecStyle, &config.dataset.classes)
}

pub fn training_set(index: &DatasetIndex, config: &CrrConfig) -> Result<TrainingSet> {
    let mut raw = Vec::new();
    for c in &index.classes {
        for p in &c.train {
            raw.push((c.name.clone(), load_image(p)?));
        }
    }
    let synth = &config.synthesis;
    Ok(TrainingSet::new(raw, &config.backbone, |c| synth.foreground_for(c)))
}

/// Every image under `dataset.textures`, sorted; empty when unset.
pub fn texture_bank(config: &CrrConfig) -> Result<TextureBank> {
    let Some(dir) = config.dataset.textures.as_deref() else {
        return Ok(TextureBank::default());
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| file_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    paths.sort();
    Ok(TextureBank::new(paths.iter().map(|p| load_image(p)).collect::<Result<_>>()?))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))
}

/// Trains the repair network and writes a fresh run directory.
pub fn run_stage1(config: &CrrConfig, run: &Path) -> Result<RunManifest> {
    create_dir(run)?;
    let index = dataset_for(config)?;
    let data = training_set(&index, config)?;
    let textures = texture_bank(config)?;
    let mut model = CrrModel::cpu(config)?;
    let log = train_stage1(&mut model, &data, &textures)?;
    config.save(&run.join(CONFIG_FILE))?;
    let ckpt = run.join(STAGE1_FILE);
    model.save_stage1(&ckpt)?;
    let log_path = run.join(LOG_FILE);
    if log_path.exists() {
        std::fs::remove_file(&log_path).map_err(|e| file_err(&log_path, e))?;
    }
    log.append_jsonl(&log_path)?;
    let mut manifest = RunManifest::new(config, index.content_hash()?);
    manifest.record_checkpoint(&ckpt)?;
    manifest.stages_completed = vec![1];
    manifest.save(&run.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn run_config(run: &Path) -> Result<CrrConfig> {
    Ok(CrrConfig::load(&run.join(CONFIG_FILE))?)
}

/// Trains the segmentation head on top of the run's stage-1 checkpoint.
pub fn run_stage2(run: &Path, sets: &[String]) -> Result<RunManifest> {
    let config = crate::config::apply_overrides(&run_config(run)?, sets)?;
    let mut model = CrrModel::cpu(&config)?;
    model.load_stage1(&run.join(STAGE1_FILE))?;
    let index = dataset_for(&config)?;
    let data = training_set(&index, &config)?;
    let log = train_stage2(&mut model, &data, &texture_bank(&config)?)?;
    let ckpt = run.join(STAGE2_FILE);
    model.save_stage2(&ckpt)?;
    log.append_jsonl(&run.join(LOG_FILE))?;
    let manifest_path = run.join(MANIFEST_FILE);
    let mut manifest = if manifest_path.exists() {
        RunManifest::load(&manifest_path)?
    } else {
        RunManifest::new(&config, index.content_hash()?)
    };
    manifest.config = config;
    manifest.record_checkpoint(&ckpt)?;
    if !manifest.stages_completed.contains(&2) {
        manifest.stages_completed.push(2);
    }
    manifest.save(&manifest_path)?;
    Ok(manifest)
}

/// Loads whatever the run's config needs for inference.
pub fn load_model(run: &Path) -> Result<CrrModel> {
    let config = run_config(run)?;
    let mut model = CrrModel::cpu(&config)?;
    model.load_stage1(&run.join(STAGE1_FILE))?;
    if config.scoring.use_segnet {
        model.load_stage2(&run.join(STAGE2_FILE))?;
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub resize_to: usize,
    pub input_size: usize,
}

impl Geometry {
    fn spec(self) -> BackboneSpec {
        BackboneSpec {
            resize_to: self.resize_to,
            input_size: self.input_size,
            ..BackboneSpec::toy()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub class: String,
    pub defect: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    /// Sidecar path relative to the score directory.
    pub scores: PathBuf,
    pub image_score: f64,
    pub shape: [usize; 2],
    pub dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreIndex {
    pub geometry: Geometry,
    pub fpr_limit: f64,
    pub entries: Vec<ScoreEntry>,
}

impl ScoreIndex {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| file_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| file_err(&path, e))
    }
}

/// Scores every test image of the run's dataset. Image `i` of the index
/// (in dataset order) uses inference-mask seed `i`.
pub fn run_infer(run: &Path, out: &Path, heatmaps: bool) -> Result<ScoreIndex> {
    let model = load_model(run)?;
    let config = &model.config;
    let spec = &config.backbone;
    let index = dataset_for(config)?;
    let tests: Vec<_> = index
        .classes
        .iter()
        .flat_map(|c| c.test.iter().map(move |t| (c.name.as_str(), t)))
        .collect();
    let mut entries = Vec::with_capacity(tests.len());
    for (chunk_no, chunk) in tests.chunks(INFER_BATCH).enumerate() {
        let raw = chunk.iter().map(|(_, t)| load_image(&t.image)).collect::<Result<Vec<_>>>()?;
        let norm: Vec<_> = raw.iter().map(|img| preprocess(img, spec)).collect();
        let refs: Vec<_> = norm.iter().collect();
        let base = (chunk_no * INFER_BATCH) as u64;
        let idx: Vec<u64> = (base..base + chunk.len() as u64).collect();
        let inferences = model.infer(&refs, &idx)?;
        for (((class, t), img), inf) in chunk.iter().zip(&raw).zip(inferences) {
            let stem = t.image.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let rel = Path::new("maps").join(class).join(&t.defect).join(format!("{stem}.f64"));
            let map = &inf.anomaly.map;
            write_scores(map, &out.join(&rel))?;
            if heatmaps {
                let png = out.join("heatmaps").join(class).join(&t.defect).join(format!("{stem}.png"));
                export_heatmap(&prepare_geometry(img, spec), map, &png)?;
            }
            entries.push(ScoreEntry {
                class: class.to_string(),
                defect: t.defect.clone(),
                image: t.image.clone(),
                mask: t.mask.clone(),
                scores: rel,
                image_score: inf.anomaly.image_score,
                shape: [map.height, map.width],
                dtype: SCORE_DTYPE.into(),
            });
        }
    }
    let result = ScoreIndex {
        geometry: Geometry {
            resize_to: spec.resize_to,
            input_size: spec.input_size,
        },
        fpr_limit: config.scoring.fpr_limit,
        entries,
    };
    let path = out.join(INDEX_FILE);
    let text = serde_json::to_string_pretty(&result).map_err(|e| file_err(&path, e))?;
    std::fs::write(&path, text).map_err(|e| file_err(&path, e))?;
    Ok(result)
}

/// Recomputes every metric from the sidecars and ground-truth masks alone.
pub fn run_eval(scores: &Path, fpr_limit: Option<f64>) -> Result<MetricsReport> {
    let index = ScoreIndex::load(scores)?;
    let spec = index.geometry.spec();
    let mut per_class: BTreeMap<String, ClassPredictions> = BTreeMap::new();
    for e in &index.entries {
        if e.dtype != SCORE_DTYPE {
            return Err(Error::Config(format!("unsupported sidecar dtype `{}`", e.dtype)));
        }
        let map = read_scores(&scores.join(&e.scores), e.shape[0], e.shape[1])?;
        let mask = match &e.mask {
            Some(p) => prepare_mask(&load_mask(p)?, &spec),
            None => Mask::zeros(map.height, map.width),
        };
        let p = per_class.entry(e.class.clone()).or_default();
        p.image_scores.push(e.image_score);
        p.image_labels.push(e.mask.is_some());
        p.maps.push(map);
        p.masks.push(mask);
    }
    let limit = fpr_limit.unwrap_or(index.fpr_limit);
    let per_class = per_class
        .into_iter()
        .map(|(k, p)| {
            evaluate_class(&p, limit)
                .map(|m| (k.clone(), m))
                .map_err(|e| Error::Dataset(format!("class `{k}`: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport::from_classes(per_class)?)
}

pub fn save_report(report: &MetricsReport, path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        create_dir(p)?;
    }
    let text = serde_json::to_string_pretty(report).map_err(|e| file_err(path, e))?;
    std::fs::write(path, text).map_err(|e| file_err(path, e))
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_err(path, e))
}
