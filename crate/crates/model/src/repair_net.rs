//! Trainable bottleneck and decoder with token masking, plus the grouped
//! cosine discrepancies used for training and localisation.

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Linear;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crr_core::{Grid, Mask};

use crate::backbone::{BackboneSpec, FeatureSource, FeatureStack, STACK_DEPTH};
use crate::error::{param_err, Result};
use crate::nn::{linear, Block, InitScheme};
use crate::params::ParamStore;

/// Floor applied to the product of norms in every cosine.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairNetConfig {
    pub depth: usize,
    /// Hidden width of the bottleneck as a multiple of the channel count.
    pub bottleneck_ratio: f64,
    pub drop_rate: f64,
    pub mask_ratio: f64,
    /// When false every token passes unmasked, in training and inference.
    pub feature_masking: bool,
    pub init_seed: u64,
}

impl Default for RepairNetConfig {
    fn default() -> Self {
        Self {
            depth: STACK_DEPTH,
            bottleneck_ratio: 4.0,
            drop_rate: 0.4,
            mask_ratio: 0.4,
            feature_masking: true,
            init_seed: 7,
        }
    }
}

impl RepairNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth != STACK_DEPTH {
            return param_err(format!("decoder depth must be {STACK_DEPTH}"));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return param_err("drop_rate must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.mask_ratio) {
            return param_err("mask_ratio must lie in [0, 1]");
        }
        if self.bottleneck_ratio <= 0.0 {
            return param_err("bottleneck_ratio must be positive");
        }
        Ok(())
    }

    /// Ratio actually used when drawing masks.
    pub fn effective_mask_ratio(&self) -> f64 {
        if self.feature_masking {
            self.mask_ratio
        } else {
            0.0
        }
    }
}

/// Binary keep-mask over token positions: 1 keeps a token, 0 zeroes it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMask {
    pub values: Mask,
    pub ratio: f64,
}

impl FeatureMask {
    pub fn masked_count(&self) -> usize {
        self.values.data.len() - self.values.count()
    }
}

/// Each position is dropped independently when a uniform draw falls below
/// `ratio`.
pub fn make_feature_mask<R: Rng + ?Sized>(grid: (usize, usize), ratio: f64, rng: &mut R) -> Result<FeatureMask> {
    if !(0.0..=1.0).contains(&ratio) {
        return param_err(format!("mask ratio {ratio} outside [0, 1]"));
    }
    let values = Mask::from_fn(grid.0, grid.1, |_, _| rng.random::<f64>() >= ratio);
    Ok(FeatureMask { values, ratio })
}

/// Reproducible inference mask for the image with index `index`.
pub fn inference_mask(grid: (usize, usize), ratio: f64, seed: u64, index: u64) -> Result<FeatureMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    make_feature_mask(grid, ratio, &mut rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Bottleneck activations zeroed by dropout in one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DropoutTrace {
    pub zeroed: usize,
    pub total: usize,
}

pub struct RepairNet {
    config: RepairNetConfig,
    store: ParamStore,
    fc1: Linear,
    fc2: Linear,
    pos_embed: Tensor,
    blocks: Vec<Block>,
    grid: (usize, usize),
    channels: usize,
}

impl RepairNet {
    /// Decoder layers copy the encoder's width, head count and MLP ratio.
    pub fn new(config: &RepairNetConfig, encoder: &BackboneSpec, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new(dtype, device);
        let c = encoder.embed_dim;
        let hidden = (c as f64 * config.bottleneck_ratio).round() as usize;
        let init = InitScheme::Normal(0.02);
        let fc1 = linear(&mut store, "bottleneck.fc1", c, hidden, init, &mut rng)?;
        let fc2 = linear(&mut store, "bottleneck.fc2", hidden, c, init, &mut rng)?;
        let grid = encoder.token_grid();
        let pos_embed = store.normal("decoder.pos_embed", &[1, grid.0 * grid.1, c], 0.02, &mut rng)?;
        let mut shape = encoder.block_shape();
        shape.layer_scale = None;
        let blocks = (0..config.depth)
            .map(|i| Block::new(&mut store, &format!("decoder.blocks.{i}"), shape, init, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config: config.clone(),
            store,
            fc1,
            fc2,
            pos_embed,
            blocks,
            grid,
            channels: c,
        })
    }

    pub fn config(&self) -> &RepairNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Mask tensor `(B, N, 1)`.
    fn mask_tensor(&self, masks: &[FeatureMask], batch: usize) -> Result<Tensor> {
        if masks.len() != batch {
            return param_err(format!("{} masks for a batch of {batch}", masks.len()));
        }
        let mut data = Vec::with_capacity(batch * self.grid.0 * self.grid.1);
        for m in masks {
            if (m.values.height, m.values.width) != self.grid {
                return param_err(format!(
                    "mask {}x{} does not match token grid {:?}",
                    m.values.height, m.values.width, self.grid
                ));
            }
            data.extend(m.values.data.iter().map(|&v| v as f32));
        }
        let n = self.grid.0 * self.grid.1;
        Ok(Tensor::from_vec(data, (batch, n, 1), self.store.device())?.to_dtype(self.store.dtype())?)
    }

    /// Decoder maps from the masked last encoder map, reversed so that
    /// decoder map `i` pairs with encoder map `i`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        encoder: &FeatureStack,
        masks: &[FeatureMask],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(FeatureStack, DropoutTrace)> {
        if encoder.grid != self.grid || encoder.channels() != self.channels {
            return param_err("encoder stack does not match the decoder geometry");
        }
        let b = encoder.batch();
        let m = self.mask_tensor(masks, b)?;
        let x = encoder.maps[STACK_DEPTH - 1].broadcast_mul(&m)?;
        let mut h = self.fc1.forward(&x)?.gelu_erf()?;
        let mut trace = DropoutTrace::default();
        if mode == Mode::Train && self.config.drop_rate > 0.0 {
            let p = self.config.drop_rate;
            let dims = h.dims().to_vec();
            let n: usize = dims.iter().product();
            let scale = 1.0 / (1.0 - p);
            let keep: Vec<f32> = (0..n)
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale as f32 })
                .collect();
            trace.total = n;
            trace.zeroed = keep.iter().filter(|&&k| k == 0.0).count();
            let keep = Tensor::from_vec(keep, dims, self.store.device())?.to_dtype(self.store.dtype())?;
            h = (h * keep)?;
        }
        let mut x = self.fc2.forward(&h)?.broadcast_add(&self.pos_embed)?;
        let mut maps = Vec::with_capacity(STACK_DEPTH);
        for blk in &self.blocks {
            x = blk.forward(&x)?;
            maps.push(x.clone());
        }
        maps.reverse();
        Ok((FeatureStack::new(maps, self.grid, FeatureSource::Decoder)?, trace))
    }
}

/// Low group (maps 0-3) and high group (maps 4-7), each `(B, N, C)`.
#[derive(Clone, Debug)]
pub struct GroupedFeatures {
    pub low: Tensor,
    pub high: Tensor,
    pub grid: (usize, usize),
}

impl GroupedFeatures {
    pub fn narrow(&self, start: usize, len: usize) -> Result<Self> {
        Ok(Self {
            low: self.low.narrow(0, start, len)?,
            high: self.high.narrow(0, start, len)?,
            grid: self.grid,
        })
    }

    pub fn detach(&self) -> Self {
        Self {
            low: self.low.detach(),
            high: self.high.detach(),
            grid: self.grid,
        }
    }
}

pub fn group(stack: &FeatureStack) -> Result<GroupedFeatures> {
    let half = STACK_DEPTH / 2;
    let mean = |maps: &[Tensor]| -> Result<Tensor> {
        let mut acc = maps[0].clone();
        for m in &maps[1..] {
            acc = (acc + m)?;
        }
        Ok((acc / maps.len() as f64)?)
    };
    Ok(GroupedFeatures {
        low: mean(&stack.maps[..half])?,
        high: mean(&stack.maps[half..])?,
        grid: stack.grid,
    })
}

fn check_pair(a: &GroupedFeatures, b: &GroupedFeatures) -> Result<()> {
    if a.low.dims() != b.low.dims() || a.high.dims() != b.high.dims() {
        return param_err("grouped feature shapes differ");
    }
    Ok(())
}

/// Cosine along `axis` with the norm product floored at [`COSINE_EPS`].
fn cosine_along(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
    let dot = (a * b)?.sum(axis)?;
    let sa = a.sqr()?.sum(axis)?;
    let sb = b.sqr()?.sum(axis)?;
    let denom = (sa * sb)?.maximum(COSINE_EPS * COSINE_EPS)?.sqrt()?;
    Ok((dot / denom)?)
}

/// Per-sample `sum_k (1 - cos(vec(e_k), vec(d_k)))`, shape `(B,)`.
pub fn discrepancy_per_sample(e: &GroupedFeatures, d: &GroupedFeatures) -> Result<Tensor> {
    check_pair(e, d)?;
    let term = |a: &Tensor, b: &Tensor| -> Result<Tensor> {
        let cos = cosine_along(&a.flatten_from(1)?, &b.flatten_from(1)?, 1)?;
        Ok(cos.affine(-1.0, 1.0)?)
    };
    Ok((term(&e.low, &d.low)? + term(&e.high, &d.high)?)?)
}

/// Batch mean of [`discrepancy_per_sample`]; a scalar tensor in `[0, 4]`.
pub fn discrepancy(e: &GroupedFeatures, d: &GroupedFeatures) -> Result<Tensor> {
    Ok(discrepancy_per_sample(e, d)?.mean_all()?)
}

/// Per-token `sum_k (1 - cos(e_k[t], d_k[t]))`, shape `(B, h, w)`.
pub fn discrepancy_map(e: &GroupedFeatures, d: &GroupedFeatures) -> Result<Tensor> {
    check_pair(e, d)?;
    let lo = cosine_along(&e.low, &d.low, 2)?;
    let hi = cosine_along(&e.high, &d.high, 2)?;
    let map = (lo + hi)?.affine(-1.0, 2.0)?;
    let b = map.dims()[0];
    Ok(map.reshape((b, e.grid.0, e.grid.1))?)
}

/// Splits a `(B, h, w)` tensor into one grid per sample.
pub fn map_grids(map: &Tensor) -> Result<Vec<Grid>> {
    let (b, h, w) = map.dims3()?;
    let v = map.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    (0..b)
        .map(|i| Ok(Grid::new(h, w, v[i * h * w..(i + 1) * h * w].to_vec())?))
        .collect()
}

/// Reconstruction term on normal inputs plus repair term on their
/// synthetic-anomalous counterparts, both against the normal encoder maps.
pub fn nrar_loss(en: &GroupedFeatures, dn: &GroupedFeatures, da: &GroupedFeatures) -> Result<Tensor> {
    Ok((discrepancy(en, dn)? + discrepancy(en, da)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grouped(v: Vec<f64>, b: usize, n: usize, c: usize) -> GroupedFeatures {
        let t = Tensor::from_vec(v, (b, n, c), &Device::Cpu).unwrap();
        GroupedFeatures {
            low: t.clone(),
            high: (t * 2.0).unwrap(),
            grid: (1, n),
        }
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn mask_extremes_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(make_feature_mask((5, 6), 0.0, &mut rng).unwrap().masked_count(), 0);
        assert_eq!(make_feature_mask((5, 6), 1.0, &mut rng).unwrap().masked_count(), 30);
        assert!(make_feature_mask((5, 6), 1.5, &mut rng).is_err());
        assert_eq!(
            inference_mask((4, 4), 0.5, 1, 9).unwrap(),
            inference_mask((4, 4), 0.5, 1, 9).unwrap()
        );
    }

    #[test]
    fn discrepancy_identities() {
        let g = grouped((0..24).map(|v| (v as f64 * 0.37).sin()).collect(), 2, 3, 4);
        let neg = GroupedFeatures {
            low: g.low.neg().unwrap(),
            high: g.high.neg().unwrap(),
            grid: g.grid,
        };
        assert_eq!(scalar(&discrepancy(&g, &g).unwrap()).abs() < 1e-12, true);
        assert!((scalar(&discrepancy(&g, &neg).unwrap()) - 4.0).abs() < 1e-12);
        let scaled = GroupedFeatures {
            low: (&g.low * 3.5).unwrap(),
            high: (&g.high * 0.1).unwrap(),
            grid: g.grid,
        };
        let other = grouped((0..24).map(|v| (v as f64 * 1.3).cos()).collect(), 2, 3, 4);
        let a = scalar(&discrepancy(&g, &other).unwrap());
        let b = scalar(&discrepancy(&scaled, &other).unwrap());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_groups_give_two() {
        let e = grouped(vec![1.0, 0.0], 1, 1, 2);
        let d = grouped(vec![0.0, 1.0], 1, 1, 2);
        assert!((scalar(&discrepancy(&e, &d).unwrap()) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_flipped_token() {
        let e = grouped((0..12).map(|v| v as f64 + 1.0).collect(), 1, 3, 4);
        let mut flipped: Vec<f64> = (0..12).map(|v| v as f64 + 1.0).collect();
        for v in &mut flipped[4..8] {
            *v = -*v;
        }
        let d = grouped(flipped, 1, 3, 4);
        let m = discrepancy_map(&e, &d).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(m[0].abs() < 1e-12 && m[2].abs() < 1e-12);
        assert!((m[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn grouping_constant_maps() {
        let maps = (0..8)
            .map(|i| Tensor::full(i as f64, (1, 4, 2), &Device::Cpu).unwrap())
            .collect();
        let g = group(&FeatureStack::new(maps, (2, 2), FeatureSource::Encoder).unwrap()).unwrap();
        assert_eq!(g.low.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![1.5; 8]);
        assert_eq!(g.high.flatten_all().unwrap().to_vec1::<f64>().unwrap(), vec![5.5; 8]);
    }

    #[test]
    fn zero_mask_ignores_content() {
        let spec = BackboneSpec {
            embed_dim: 16,
            heads: 2,
            ..BackboneSpec::toy()
        };
        let net = RepairNet::new(&RepairNetConfig::default(), &spec, DType::F32, &Device::Cpu).unwrap();
        let stack = |v: f32| {
            let maps = (0..8)
                .map(|i| Tensor::full(v * i as f32, (1, 64, 16), &Device::Cpu).unwrap())
                .collect();
            FeatureStack::new(maps, (8, 8), FeatureSource::Encoder).unwrap()
        };
        let zero = FeatureMask {
            values: Mask::zeros(8, 8),
            ratio: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = net.forward(&stack(1.0), &[zero.clone()], Mode::Eval, &mut rng).unwrap();
        let (b, _) = net.forward(&stack(5.0), &[zero], Mode::Eval, &mut rng).unwrap();
        let diff = (&a.maps[3] - &b.maps[3]).unwrap().abs().unwrap().max_all().unwrap();
        assert_eq!(diff.to_scalar::<f32>().unwrap(), 0.0);
        let bad = FeatureMask {
            values: Mask::ones(4, 4),
            ratio: 0.0,
        };
        assert!(net.forward(&stack(1.0), &[bad], Mode::Eval, &mut rng).is_err());
    }
}
