//! Pseudo-anomaly synthesis: Perlin-shaped regions of foreign texture are
//! alpha-blended into the foreground of a normal image, and the blended
//! region becomes the ground-truth mask.

mod foreground;
mod perlin;
mod texture;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::image::{Image, Mask};

pub use foreground::{foreground_mask, otsu_threshold, ForegroundMethod};
pub use perlin::{
    binarize, perlin_noise, quantile_threshold, GradientSource, NoiseField, NOISE_BOUND,
    PERSISTENCE,
};
pub use texture::{self_augment, TextureBank};

/// Bounds on the anomalous-pixel fraction of a non-degenerate sample under
/// the default configuration. The upper end is exact: the noise threshold
/// keeps the top `1 - threshold_quantile` of the field and the foreground
/// intersection can only shrink that.
pub const MASK_AREA_BAND: (f64, f64) = (0.0, 0.2);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub octave_scales: Vec<usize>,
    /// Noise values above this quantile of the field become anomalous.
    pub threshold_quantile: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Extra noise draws when the mask misses the foreground entirely.
    pub max_retries: usize,
    pub default_foreground: ForegroundMethod,
    /// Per-class foreground method overrides, keyed by class name.
    pub foreground: BTreeMap<String, ForegroundMethod>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            octave_scales: vec![2, 4, 8, 16],
            threshold_quantile: 0.8,
            beta_min: 0.15,
            beta_max: 1.0,
            max_retries: 5,
            default_foreground: ForegroundMethod::Threshold,
            foreground: BTreeMap::new(),
        }
    }
}

impl SynthesisConfig {
    pub fn foreground_for(&self, class: &str) -> ForegroundMethod {
        self.foreground
            .get(class)
            .copied()
            .unwrap_or(self.default_foreground)
    }

    pub fn validate(&self) -> Result<()> {
        if self.octave_scales.is_empty() || self.octave_scales.contains(&0) {
            return param_err("octave_scales must be non-empty and positive");
        }
        if !(0.0..1.0).contains(&self.threshold_quantile) {
            return param_err("threshold_quantile must lie in [0, 1)");
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max <= 1.0) {
            return param_err("opacity range must satisfy 0 < beta_min <= beta_max <= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    pub normal: Image,
    pub anomalous: Image,
    pub mask: Mask,
    pub beta: f64,
    /// Set when no non-empty mask was found; `anomalous == normal` then.
    pub degenerate: bool,
}

/// `(1 - G) * normal + G * (beta * texture + (1 - beta) * normal)`.
pub fn blend(normal: &Image, texture: &Image, mask: &Mask, beta: f64) -> Result<Image> {
    if !normal.same_shape(texture) {
        return param_err("texture shape differs from the normal image");
    }
    if mask.height != normal.height || mask.width != normal.width {
        return param_err("mask shape differs from the normal image");
    }
    let beta = beta as f32;
    let c = normal.channels;
    let mut out = normal.clone();
    for (i, &m) in mask.data.iter().enumerate() {
        if m == 0 {
            continue;
        }
        for k in i * c..(i + 1) * c {
            out.data[k] = beta * texture.data[k] + (1.0 - beta) * normal.data[k];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct Synthesizer {
    pub config: SynthesisConfig,
}

impl Synthesizer {
    pub fn new(config: SynthesisConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    fn scales_for(&self, height: usize, width: usize) -> Vec<usize> {
        let limit = height.min(width);
        let v: Vec<usize> = self
            .config
            .octave_scales
            .iter()
            .copied()
            .filter(|&s| s <= limit)
            .collect();
        if v.is_empty() {
            vec![1]
        } else {
            v
        }
    }

    /// Thresholded Perlin field; octaves finer than the image are dropped.
    pub fn noise_mask<R: Rng + ?Sized>(&self, height: usize, width: usize, rng: &mut R) -> Result<Mask> {
        let field = perlin_noise(height, width, &self.scales_for(height, width), rng)?;
        let t = quantile_threshold(&field, self.config.threshold_quantile);
        Ok(binarize(&field, t))
    }

    pub fn sample_beta<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = (self.config.beta_min, self.config.beta_max);
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    /// Blends `texture` into `normal` where `noise_mask` meets `foreground`.
    /// An empty intersection triggers up to `max_retries` fresh noise draws;
    /// if all miss, the normal image is returned with an empty mask and the
    /// degenerate flag set.
    pub fn compose<R: Rng + ?Sized>(
        &self,
        normal: &Image,
        texture: &Image,
        foreground: &Mask,
        noise_mask: &Mask,
        beta: f64,
        rng: &mut R,
    ) -> Result<SyntheticSample> {
        if !normal.same_shape(texture)
            || foreground.height != normal.height
            || foreground.width != normal.width
            || !noise_mask.same_shape(foreground)
        {
            return param_err("normal image, texture, foreground and noise mask must share (H, W)");
        }
        if !(beta >= self.config.beta_min && beta <= 1.0) {
            return param_err(format!(
                "opacity {beta} outside [{}, 1]",
                self.config.beta_min
            ));
        }
        let mut mask = noise_mask.and(foreground)?;
        let mut retries = 0;
        while mask.is_empty() && retries < self.config.max_retries {
            retries += 1;
            mask = self
                .noise_mask(normal.height, normal.width, rng)?
                .and(foreground)?;
        }
        if mask.is_empty() {
            return Ok(SyntheticSample {
                normal: normal.clone(),
                anomalous: normal.clone(),
                mask,
                beta,
                degenerate: true,
            });
        }
        let anomalous = blend(normal, texture, &mask, beta)?;
        Ok(SyntheticSample {
            normal: normal.clone(),
            anomalous,
            mask,
            beta,
            degenerate: false,
        })
    }

    /// Full pipeline for one normal image: texture, noise, opacity, blend.
    pub fn synthesize<R: Rng + ?Sized>(
        &self,
        normal: &Image,
        foreground: &Mask,
        textures: &TextureBank,
        rng: &mut R,
    ) -> Result<SyntheticSample> {
        let texture = textures.pick(normal, rng);
        let noise = self.noise_mask(normal.height, normal.width, rng)?;
        let beta = self.sample_beta(rng);
        self.compose(normal, &texture, foreground, &noise, beta, rng)
    }
}
