//! Frozen patch-transformer encoder exporting eight intermediate maps.

use std::path::PathBuf;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crr_core::resize::{center_crop_image, center_crop_mask, resize_image, resize_mask_nearest, shorter_side_size};
use crr_core::{Image, Mask};

use crate::error::{param_err, Error, Result};
use crate::nn::{Block, BlockShape, InitScheme, Resize};
use crate::params::ParamStore;

pub const STACK_DEPTH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSource {
    Encoder,
    Decoder,
}

/// Eight same-shaped token maps, each `(B, N, C)` with `N = h * w`.
#[derive(Clone, Debug)]
pub struct FeatureStack {
    pub maps: Vec<Tensor>,
    pub grid: (usize, usize),
    pub source: FeatureSource,
}

impl FeatureStack {
    pub fn new(maps: Vec<Tensor>, grid: (usize, usize), source: FeatureSource) -> Result<Self> {
        if maps.len() != STACK_DEPTH {
            return param_err(format!("feature stack needs {STACK_DEPTH} maps, got {}", maps.len()));
        }
        let dims = maps[0].dims().to_vec();
        if dims.len() != 3 || dims[1] != grid.0 * grid.1 {
            return param_err(format!("map shape {dims:?} does not fit token grid {grid:?}"));
        }
        if maps.iter().any(|m| m.dims() != dims.as_slice()) {
            return param_err("feature maps differ in shape");
        }
        Ok(Self { maps, grid, source })
    }

    pub fn batch(&self) -> usize {
        self.maps[0].dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.maps[0].dims()[2]
    }

    /// Rows `start..start + len` of every map.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Self> {
        let maps = self
            .maps
            .iter()
            .map(|m| m.narrow(0, start, len))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self {
            maps,
            grid: self.grid,
            source: self.source,
        })
    }

    pub fn detach(&self) -> Self {
        Self {
            maps: self.maps.iter().map(Tensor::detach).collect(),
            grid: self.grid,
            source: self.source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneSpec {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub tap_layers: Vec<usize>,
    pub input_size: usize,
    /// Shorter-side resize target applied before the centre crop.
    pub resize_to: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub cls_token: bool,
    pub register_tokens: usize,
    pub layer_scale: Option<f64>,
    pub norm_eps: f64,
    /// Side of the stored positional-embedding grid; interpolated when it
    /// differs from the token grid.
    pub pos_grid: usize,
    /// Weight file; `None` means random weights drawn from `init_seed`.
    pub weights: Option<PathBuf>,
    pub init_seed: u64,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self::toy()
    }
}

impl BackboneSpec {
    /// Randomly initialised stand-in encoder for desk-scale runs.
    pub fn toy() -> Self {
        Self {
            patch_size: 8,
            embed_dim: 64,
            depth: 8,
            heads: 4,
            mlp_ratio: 4.0,
            tap_layers: (0..8).collect(),
            input_size: 64,
            resize_to: 64,
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
            cls_token: false,
            register_tokens: 0,
            layer_scale: None,
            norm_eps: 1e-6,
            pos_grid: 8,
            weights: None,
            init_seed: 0x5eed,
        }
    }

    /// ViT-Base/14 with four register tokens, as distributed in the
    /// timm/DINOv2 naming scheme.
    pub fn vit_base14() -> Self {
        Self {
            patch_size: 14,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4.0,
            tap_layers: (2..10).collect(),
            input_size: 392,
            resize_to: 448,
            cls_token: true,
            register_tokens: 4,
            layer_scale: Some(1.0),
            pos_grid: 37,
            ..Self::toy()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.tap_layers;
        if t.len() != STACK_DEPTH {
            return param_err(format!("tap_layers must list {STACK_DEPTH} layers"));
        }
        if t.windows(2).any(|w| w[0] >= w[1]) || t[STACK_DEPTH - 1] >= self.depth {
            return param_err("tap_layers must be strictly increasing and below depth");
        }
        if self.patch_size == 0 || self.input_size % self.patch_size != 0 {
            return param_err("input_size must be a multiple of patch_size");
        }
        if self.resize_to < self.input_size {
            return param_err("resize_to must be at least input_size");
        }
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return param_err("embed_dim must be divisible by heads");
        }
        if self.std.iter().any(|&s| s <= 0.0) || self.pos_grid == 0 {
            return param_err("std and pos_grid must be positive");
        }
        Ok(())
    }

    pub fn token_grid(&self) -> (usize, usize) {
        let g = self.input_size / self.patch_size;
        (g, g)
    }

    pub fn block_shape(&self) -> BlockShape {
        BlockShape {
            dim: self.embed_dim,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
            norm_eps: self.norm_eps,
            layer_scale: self.layer_scale,
        }
    }
}

/// Resize (shorter side) and centre crop to `input_size`; values stay in
/// `[0, 1]`.
pub fn prepare_geometry(raw: &Image, spec: &BackboneSpec) -> Image {
    let (h, w) = shorter_side_size(raw.height, raw.width, spec.resize_to);
    let img = if (h, w) == (raw.height, raw.width) {
        raw.clone()
    } else {
        resize_image(raw, h, w)
    };
    center_crop_image(&img, spec.input_size)
}

/// The geometric transform of [`prepare_geometry`] with nearest-neighbour
/// sampling.
pub fn prepare_mask(raw: &Mask, spec: &BackboneSpec) -> Mask {
    let (h, w) = shorter_side_size(raw.height, raw.width, spec.resize_to);
    let m = if (h, w) == (raw.height, raw.width) {
        raw.clone()
    } else {
        resize_mask_nearest(raw, h, w)
    };
    center_crop_mask(&m, spec.input_size)
}

/// Per-channel `(v - mean) / std` on a three-channel image. Gray images are
/// replicated to three channels first.
pub fn normalize(img: &Image, spec: &BackboneSpec) -> Image {
    Image::from_fn(img.height, img.width, 3, |y, x, c| {
        let v = img.get(y, x, c.min(img.channels - 1));
        (v - spec.mean[c]) / spec.std[c]
    })
}

pub fn preprocess(raw: &Image, spec: &BackboneSpec) -> Image {
    normalize(&prepare_geometry(raw, spec), spec)
}

/// Stacks normalised images into a `(B, 3, S, S)` tensor.
pub fn batch_tensor(images: &[&Image], dtype: DType, device: &Device) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return param_err("empty image batch");
    };
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w || img.channels != 3 {
            return param_err("batch images must share a three-channel shape");
        }
        data.extend(img.to_chw());
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?.to_dtype(dtype)?)
}

pub struct Backbone {
    spec: BackboneSpec,
    store: ParamStore,
    patch_embed: Conv2d,
    pos_embed: Tensor,
    cls_token: Option<Tensor>,
    register_tokens: Option<Tensor>,
    blocks: Vec<Block>,
    pos_resize: Option<Resize>,
    loaded: bool,
}

impl Backbone {
    /// Builds the encoder and fills its weights from the spec's weight file
    /// or, without one, from `init_seed`.
    pub fn new(spec: &BackboneSpec, dtype: DType, device: &Device) -> Result<Self> {
        match &spec.weights {
            Some(path) => {
                let mut b = Self::build(spec, dtype, device, None)?;
                b.load_weights(path)?;
                Ok(b)
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(spec.init_seed);
                Self::build(spec, dtype, device, Some(&mut rng))
            }
        }
    }

    /// Zero-filled encoder that refuses to extract until weights are loaded.
    pub fn unloaded(spec: &BackboneSpec, dtype: DType, device: &Device) -> Result<Self> {
        Self::build(spec, dtype, device, None)
    }

    fn build(spec: &BackboneSpec, dtype: DType, device: &Device, rng: Option<&mut ChaCha8Rng>) -> Result<Self> {
        spec.validate()?;
        let loaded = rng.is_some();
        let mut zero_rng = ChaCha8Rng::seed_from_u64(0);
        let (rng, init, embed_std) = match rng {
            Some(r) => (r, InitScheme::FanIn(1.0), 0.02),
            None => (&mut zero_rng, InitScheme::Zeros, 0.0),
        };
        let c = spec.embed_dim;
        let p = spec.patch_size;
        let mut store = ParamStore::new(dtype, device);
        let pw = store.normal("patch_embed.proj.weight", &[c, 3, p, p], init.std(3 * p * p), rng)?;
        let pb = store.constant("patch_embed.proj.bias", &[c], 0.0)?;
        let patch_embed = Conv2d::new(
            pw,
            Some(pb),
            Conv2dConfig {
                stride: p,
                ..Default::default()
            },
        );
        let cls_token = if spec.cls_token {
            Some(store.normal("cls_token", &[1, 1, c], embed_std, rng)?)
        } else {
            None
        };
        let register_tokens = if spec.register_tokens > 0 {
            Some(store.normal("register_tokens", &[1, spec.register_tokens, c], embed_std, rng)?)
        } else {
            None
        };
        let prefix = usize::from(spec.cls_token);
        let pos_embed = store.normal("pos_embed", &[1, prefix + spec.pos_grid.pow(2), c], embed_std, rng)?;
        let last = spec.tap_layers[STACK_DEPTH - 1];
        let mut blocks = Vec::with_capacity(last + 1);
        for i in 0..=last {
            blocks.push(Block::new(&mut store, &format!("blocks.{i}"), spec.block_shape(), init, rng)?);
        }
        let g = spec.token_grid();
        let pos_resize = if g != (spec.pos_grid, spec.pos_grid) {
            Some(Resize::new((spec.pos_grid, spec.pos_grid), g, dtype, device)?)
        } else {
            None
        };
        Ok(Self {
            spec: spec.clone(),
            store,
            patch_embed,
            pos_embed,
            cls_token,
            register_tokens,
            blocks,
            pos_resize,
            loaded,
        })
    }

    /// Reads a safetensors file using timm/DINOv2 parameter names. Tensors
    /// for layers past the last tap are ignored.
    pub fn load_weights(&mut self, path: &std::path::Path) -> Result<()> {
        self.store.load(path, true)?;
        self.loaded = true;
        Ok(())
    }

    pub fn is_loaded(&self) -> bool {
        self.loaded
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Encoder maps for a normalised `(B, 3, S, S)` batch. The result is
    /// detached from the parameter graph.
    pub fn extract(&self, images: &Tensor) -> Result<FeatureStack> {
        if !self.loaded {
            return Err(Error::State("backbone weights are not loaded".into()));
        }
        let s = self.spec.input_size;
        match images.dims() {
            [_, 3, h, w] if *h == s && *w == s => {}
            d => return param_err(format!("expected input (B, 3, {s}, {s}), got {d:?}")),
        }
        let b = images.dims()[0];
        let c = self.spec.embed_dim;
        let grid = self.spec.token_grid();
        let n = grid.0 * grid.1;
        let x = self.patch_embed.forward(images)?.flatten_from(2)?.transpose(1, 2)?;
        let prefix = usize::from(self.spec.cls_token);
        let pos_patch = self.pos_embed.narrow(1, prefix, self.spec.pos_grid.pow(2))?;
        let pos_patch = match &self.pos_resize {
            Some(r) => {
                let g = self.spec.pos_grid;
                let img = pos_patch.transpose(1, 2)?.reshape((1, c, g, g))?;
                r.forward(&img)?.reshape((1, c, n))?.transpose(1, 2)?
            }
            None => pos_patch,
        };
        let mut x = x.broadcast_add(&pos_patch)?;
        let mut parts = Vec::new();
        if let Some(cls) = &self.cls_token {
            let cls = (cls + self.pos_embed.narrow(1, 0, 1)?)?;
            parts.push(cls.broadcast_as((b, 1, c))?);
        }
        if let Some(reg) = &self.register_tokens {
            parts.push(reg.broadcast_as((b, self.spec.register_tokens, c))?);
        }
        let skip = parts.iter().map(|t| t.dims()[1]).sum::<usize>();
        if !parts.is_empty() {
            parts.push(x);
            x = Tensor::cat(&parts, 1)?;
        }
        let mut maps = Vec::with_capacity(STACK_DEPTH);
        for (i, blk) in self.blocks.iter().enumerate() {
            x = blk.forward(&x)?;
            if self.spec.tap_layers.contains(&i) {
                maps.push(x.narrow(1, skip, n)?.contiguous()?.detach());
            }
        }
        FeatureStack::new(maps, grid, FeatureSource::Encoder)
    }

    pub fn extract_images(&self, images: &[&Image]) -> Result<FeatureStack> {
        let t = batch_tensor(images, self.store.dtype(), self.store.device())?;
        self.extract(&t)
    }
}
