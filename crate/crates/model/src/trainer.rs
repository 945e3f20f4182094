//! Two-stage training loop: repair network first, segmentation head second.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crr_core::synthesis::{foreground_mask, ForegroundMethod, SyntheticSample, Synthesizer, TextureBank};
use crr_core::{Image, Mask};

use crate::backbone::{normalize, prepare_geometry, BackboneSpec};
use crate::error::{Error, Result};
use crate::model::{Checksums, CrrModel};
use crate::optim::make_optimizer;
use crate::repair_net::{discrepancy, group, make_feature_mask, nrar_loss, FeatureMask, Mode};
use crate::segnet::{focal_loss_logits, similarity_feature};

/// One normal training image, already at input geometry with values in
/// `[0, 1]`.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub class: String,
    pub image: Image,
    pub foreground: Mask,
}

/// Pooled normal images of every class.
#[derive(Clone, Debug, Default)]
pub struct TrainingSet {
    pub items: Vec<TrainItem>,
}

impl TrainingSet {
    /// Brings raw images to input geometry and computes their foregrounds.
    pub fn new(
        raw: impl IntoIterator<Item = (String, Image)>,
        spec: &BackboneSpec,
        foreground: impl Fn(&str) -> ForegroundMethod,
    ) -> Self {
        let items = raw
            .into_iter()
            .map(|(class, img)| {
                let image = prepare_geometry(&img, spec);
                let fg = foreground_mask(&image, foreground(&class));
                TrainItem {
                    class,
                    image,
                    foreground: fg,
                }
            })
            .collect();
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Uniform sampling without replacement within an epoch, reshuffled at
/// every epoch boundary.
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Iteration {
        stage: u8,
        iteration: usize,
        loss: f64,
        elapsed_s: f64,
    },
    Checksums {
        stage: u8,
        point: String,
        checksums: Checksums,
    },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub events: Vec<LogEvent>,
}

impl TrainLog {
    pub fn losses(&self, stage: u8) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                LogEvent::Iteration { stage: s, loss, .. } if *s == stage => Some(*loss),
                _ => None,
            })
            .collect()
    }

    pub fn checksums(&self, stage: u8, point: &str) -> Option<&Checksums> {
        self.events.iter().find_map(|e| match e {
            LogEvent::Checksums {
                stage: s,
                point: p,
                checksums,
            } if *s == stage && p == point => Some(checksums),
            _ => None,
        })
    }

    /// Appends every event as one JSON line.
    pub fn append_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        for e in &self.events {
            let line = serde_json::to_string(e).map_err(|e| Error::Parameter(e.to_string()))?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| Error::Parameter(format!("{}: {e}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { events })
    }
}

fn normalised(images: &[Image], spec: &BackboneSpec) -> Vec<Image> {
    images.iter().map(|i| normalize(i, spec)).collect()
}

fn draw_masks<R: Rng + ?Sized>(n: usize, grid: (usize, usize), ratio: f64, rng: &mut R) -> Result<Vec<FeatureMask>> {
    (0..n).map(|_| make_feature_mask(grid, ratio, rng)).collect()
}

fn synthesize_batch<R: Rng + ?Sized>(
    data: &TrainingSet,
    idx: &[usize],
    synth: &Synthesizer,
    textures: &TextureBank,
    rng: &mut R,
) -> Result<Vec<SyntheticSample>> {
    idx.iter()
        .map(|&i| {
            let it = &data.items[i];
            Ok(synth.synthesize(&it.image, &it.foreground, textures, rng)?)
        })
        .collect()
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}

/// Stage 1: updates the bottleneck and decoder only. With NRAR enabled the
/// loss pairs each normal image with its synthetic-anomalous version;
/// otherwise it is the reconstruction term alone.
pub fn train_stage1(model: &mut CrrModel, data: &TrainingSet, textures: &TextureBank) -> Result<TrainLog> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let cfg = model.config.clone();
    let stage = &cfg.trainer.stage1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed);
    let synth = Synthesizer::new(cfg.synthesis.clone())?;
    let mut opt = make_optimizer(stage.optimizer, model.repair.params().vars(), stage.optimizer_settings())?;
    let mut sampler = EpochSampler::new(data.len());
    let grid = cfg.backbone.token_grid();
    let ratio = model.mask_ratio();
    let mut log = TrainLog::default();
    log.events.push(LogEvent::Checksums {
        stage: 1,
        point: "start".into(),
        checksums: model.checksums()?,
    });
    let start = Instant::now();
    let b = stage.batch_size;
    for it in 0..stage.iterations {
        let idx = sampler.next_batch(b, &mut rng);
        let mut images: Vec<Image> = idx.iter().map(|&i| data.items[i].image.clone()).collect();
        if cfg.trainer.nrar {
            let samples = synthesize_batch(data, &idx, &synth, textures, &mut rng)?;
            images.extend(samples.into_iter().map(|s| s.anomalous));
        }
        let norm = normalised(&images, &cfg.backbone);
        let refs: Vec<&Image> = norm.iter().collect();
        let fe = model.backbone.extract_images(&refs)?;
        let masks = draw_masks(refs.len(), grid, ratio, &mut rng)?;
        let (fd, _) = model.repair.forward(&fe, &masks, Mode::Train, &mut rng)?;
        let ge_n = group(&fe.narrow(0, b)?)?;
        let gd = group(&fd)?;
        let loss = if cfg.trainer.nrar {
            nrar_loss(&ge_n, &gd.narrow(0, b)?, &gd.narrow(b, b)?)?
        } else {
            discrepancy(&ge_n, &gd)?
        };
        let grads = loss.backward()?;
        opt.step(&grads)?;
        if it % cfg.trainer.log_every.max(1) == 0 || it + 1 == stage.iterations {
            log.events.push(LogEvent::Iteration {
                stage: 1,
                iteration: it,
                loss: scalar(&loss)?,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    model.mark_stage1(stage.iterations);
    log.events.push(LogEvent::Checksums {
        stage: 1,
        point: "end".into(),
        checksums: model.checksums()?,
    });
    Ok(log)
}

/// Stage 2: updates the segmentation head only, against the masks of
/// freshly synthesised anomalies. Decoder dropout is off; token masking
/// stays on.
pub fn train_stage2(model: &mut CrrModel, data: &TrainingSet, textures: &TextureBank) -> Result<TrainLog> {
    if !model.stage1_complete() {
        return Err(Error::State("stage 2 requires a stage-1 checkpoint".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let cfg = model.config.clone();
    let stage = &cfg.trainer.stage2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed.wrapping_add(0x5747_4532));
    let synth = Synthesizer::new(cfg.synthesis.clone())?;
    let mut opt = make_optimizer(stage.optimizer, model.seg.params().vars(), stage.optimizer_settings())?;
    let mut sampler = EpochSampler::new(data.len());
    let grid = cfg.backbone.token_grid();
    let ratio = model.mask_ratio();
    let s = cfg.backbone.input_size;
    let (alpha, gamma) = (cfg.segnet.alpha, cfg.segnet.gamma);
    let mut log = TrainLog::default();
    log.events.push(LogEvent::Checksums {
        stage: 2,
        point: "start".into(),
        checksums: model.checksums()?,
    });
    let start = Instant::now();
    let b = stage.batch_size;
    let store_dtype = model.seg.params().dtype();
    let device = model.seg.params().device().clone();
    for it in 0..stage.iterations {
        let idx = sampler.next_batch(b, &mut rng);
        let samples = synthesize_batch(data, &idx, &synth, textures, &mut rng)?;
        let anomalous: Vec<Image> = samples.iter().map(|s| s.anomalous.clone()).collect();
        let norm = normalised(&anomalous, &cfg.backbone);
        let refs: Vec<&Image> = norm.iter().collect();
        let masks = draw_masks(b, grid, ratio, &mut rng)?;
        let (_, ge, gd) = model.grouped_features(&refs, &masks)?;
        let x = similarity_feature(&ge, &gd)?;
        let logits = model.seg.forward(&x)?;
        let target: Vec<f32> = samples.iter().flat_map(|s| s.mask.data.iter().map(|&v| v as f32)).collect();
        let target = Tensor::from_vec(target, (b, 1, s, s), &device)?.to_dtype(store_dtype)?;
        let loss = focal_loss_logits(&logits, &target, alpha, gamma)?;
        let grads = loss.backward()?;
        opt.step(&grads)?;
        if it % cfg.trainer.log_every.max(1) == 0 || it + 1 == stage.iterations {
            log.events.push(LogEvent::Iteration {
                stage: 2,
                iteration: it,
                loss: scalar(&loss)?,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
        }
    }
    model.mark_stage2(stage.iterations);
    log.events.push(LogEvent::Checksums {
        stage: 2,
        point: "end".into(),
        checksums: model.checksums()?,
    });
    Ok(log)
}
