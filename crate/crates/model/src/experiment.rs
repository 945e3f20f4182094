//! Held-out evaluation and the procedural toy benchmark.

use std::collections::BTreeMap;

use candle_core::{DType, Device};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crr_core::metrics::{evaluate_class, ClassPredictions, MetricsReport};
use crr_core::synthesis::{foreground_mask, Synthesizer, TextureBank};
use crr_core::toy::{toy_image, toy_texture, ToyClass};
use crr_core::{Grid, Image, Mask};

use crate::backbone::normalize;
use crate::config::CrrConfig;
use crate::error::{param_err, Result};
use crate::model::{CrrModel, Inference};
use crate::trainer::{train_stage1, train_stage2, TrainItem, TrainLog, TrainingSet};

/// One test image at input geometry, values in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct TestItem {
    pub class: String,
    pub name: String,
    pub image: Image,
    pub mask: Mask,
}

impl TestItem {
    pub fn is_anomalous(&self) -> bool {
        !self.mask.is_empty()
    }
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub inferences: Vec<Inference>,
}

/// Runs inference over `tests` in batches; image `i` uses mask seed `i`.
pub fn infer_all(model: &CrrModel, tests: &[TestItem], batch: usize) -> Result<Vec<Inference>> {
    let spec = &model.config.backbone;
    let mut out = Vec::with_capacity(tests.len());
    for (chunk_no, chunk) in tests.chunks(batch.max(1)).enumerate() {
        let norm: Vec<Image> = chunk.iter().map(|t| normalize(&t.image, spec)).collect();
        let refs: Vec<&Image> = norm.iter().collect();
        let base = (chunk_no * batch.max(1)) as u64;
        let idx: Vec<u64> = (0..chunk.len() as u64).map(|i| base + i).collect();
        out.extend(model.infer(&refs, &idx)?);
    }
    Ok(out)
}

/// Per-class metrics averaged over classes.
pub fn evaluate(model: &CrrModel, tests: &[TestItem], batch: usize) -> Result<Evaluation> {
    let inferences = infer_all(model, tests, batch)?;
    let mut per_class: BTreeMap<String, ClassPredictions> = BTreeMap::new();
    for (t, inf) in tests.iter().zip(&inferences) {
        let p = per_class.entry(t.class.clone()).or_default();
        p.image_scores.push(inf.anomaly.image_score);
        p.image_labels.push(t.is_anomalous());
        p.maps.push(inf.anomaly.map.clone());
        p.masks.push(t.mask.clone());
    }
    let fpr = model.config.scoring.fpr_limit;
    let metrics = per_class
        .into_iter()
        .map(|(k, p)| Ok((k, evaluate_class(&p, fpr)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(Evaluation {
        report: MetricsReport::from_classes(metrics)?,
        inferences,
    })
}

/// Mean token discrepancy over tokens at least half covered by anomaly,
/// divided by the mean over tokens the anomaly does not touch. Only the
/// anomalous test images contribute.
pub fn discrepancy_ratio(model: &CrrModel, tests: &[TestItem], batch: usize) -> Result<f64> {
    let spec = &model.config.backbone;
    let p = spec.patch_size;
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    let anomalous: Vec<(usize, &TestItem)> = tests.iter().enumerate().filter(|(_, t)| t.is_anomalous()).collect();
    for chunk in anomalous.chunks(batch.max(1)) {
        let norm: Vec<Image> = chunk.iter().map(|(_, t)| normalize(&t.image, spec)).collect();
        let refs: Vec<&Image> = norm.iter().collect();
        let idx: Vec<u64> = chunk.iter().map(|(i, _)| *i as u64).collect();
        let maps = model.discrepancy_maps(&refs, &idx)?;
        for ((_, t), map) in chunk.iter().zip(&maps) {
            for ty in 0..map.height {
                for tx in 0..map.width {
                    let mut covered = 0usize;
                    for y in ty * p..(ty + 1) * p {
                        for x in tx * p..(tx + 1) * p {
                            covered += usize::from(t.mask.get(y, x));
                        }
                    }
                    let v = map.get(ty, tx);
                    if covered == 0 {
                        outside += v;
                        n_out += 1;
                    } else if 2 * covered >= p * p {
                        inside += v;
                        n_in += 1;
                    }
                }
            }
        }
    }
    if n_in == 0 || n_out == 0 {
        return param_err("need both anomalous and clean tokens");
    }
    Ok((inside / n_in as f64) / (outside / n_out as f64))
}

/// Procedural split: normal training images plus a test set of held-out
/// normals and synthetic anomalies, split evenly over the toy classes.
pub struct ToyData {
    pub train: TrainingSet,
    pub test: Vec<TestItem>,
    pub textures: TextureBank,
}

pub const TOY_TEXTURES: usize = 32;

pub fn toy_data(config: &CrrConfig, train: usize, test_normal: usize, test_anomalous: usize, seed: u64) -> Result<ToyData> {
    let size = config.backbone.input_size;
    let classes = ToyClass::ALL;
    let k = classes.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(train);
    for i in 0..train {
        let c = classes[i % k];
        let image = toy_image(c, size, &mut rng);
        let foreground = foreground_mask(&image, c.foreground());
        items.push(TrainItem {
            class: c.name().to_string(),
            image,
            foreground,
        });
    }
    let synth = Synthesizer::new(config.synthesis.clone())?;
    let textures = TextureBank::new((0..TOY_TEXTURES).map(|_| toy_texture(size, &mut rng)).collect());
    let mut test = Vec::with_capacity(test_normal + test_anomalous);
    for i in 0..test_normal {
        let c = classes[i % k];
        test.push(TestItem {
            class: c.name().to_string(),
            name: format!("normal_{i:03}"),
            image: toy_image(c, size, &mut rng),
            mask: Mask::zeros(size, size),
        });
    }
    for i in 0..test_anomalous {
        let c = classes[i % k];
        let normal = toy_image(c, size, &mut rng);
        let fg = foreground_mask(&normal, c.foreground());
        let s = synth.synthesize(&normal, &fg, &textures, &mut rng)?;
        test.push(TestItem {
            class: c.name().to_string(),
            name: format!("anomaly_{i:03}"),
            image: s.anomalous,
            mask: s.mask,
        });
    }
    Ok(ToyData {
        train: TrainingSet { items },
        test,
        textures,
    })
}

/// Everything one toy run produces.
pub struct ToyRun {
    pub model: CrrModel,
    pub stage1: TrainLog,
    pub stage2: Option<TrainLog>,
    pub data: ToyData,
}

/// Trains stage 1 and, when the config uses the segmentation head, stage 2.
pub fn run_toy(config: &CrrConfig, data: ToyData) -> Result<ToyRun> {
    let mut model = CrrModel::new(config, DType::F32, &Device::Cpu)?;
    let stage1 = train_stage1(&mut model, &data.train, &data.textures)?;
    let stage2 = if config.scoring.use_segnet {
        Some(train_stage2(&mut model, &data.train, &data.textures)?)
    } else {
        None
    };
    Ok(ToyRun {
        model,
        stage1,
        stage2,
        data,
    })
}

/// Summary grid helper for callers that only need the pixel maps.
pub fn maps(inferences: &[Inference]) -> Vec<Grid> {
    inferences.iter().map(|i| i.anomaly.map.clone()).collect()
}
