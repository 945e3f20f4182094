//! Segmentation refiner over encoder/decoder similarity features, and the
//! focal loss used to train it.

use candle_core::{DType, Device, Tensor, D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crr_core::{Grid, Mask};

use crate::backbone::BackboneSpec;
use crate::error::{param_err, Result};
use crate::nn::{conv3x3, Conv3x3, GroupNorm, InitScheme, Resize};
use crate::params::ParamStore;
use crate::repair_net::{GroupedFeatures, COSINE_EPS};

pub const UPSAMPLE_STAGES: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegVariant {
    /// Four conv blocks, each followed by a x2 upsample.
    #[default]
    ConvUpsample,
    /// Residual conv stack at token resolution with a single resize; kept
    /// for ablations only.
    ResidualHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegNetConfig {
    pub variant: SegVariant,
    pub alpha: f64,
    pub gamma: f64,
    pub norm_groups: usize,
    /// Initial foreground probability encoded in the output bias.
    pub output_prior: f64,
    pub init_seed: u64,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self {
            variant: SegVariant::ConvUpsample,
            alpha: 0.25,
            gamma: 2.0,
            norm_groups: 8,
            output_prior: 0.05,
            init_seed: 11,
        }
    }
}

impl SegNetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return param_err("focal alpha must lie in (0, 1]");
        }
        if self.gamma < 0.0 {
            return param_err("focal gamma must be non-negative");
        }
        if !(self.output_prior > 0.0 && self.output_prior < 1.0) {
            return param_err("output_prior must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Per-token unit vectors, norm floored at [`COSINE_EPS`].
fn unit(x: &Tensor) -> Result<Tensor> {
    let n = x.sqr()?.sum_keepdim(D::Minus1)?.maximum(COSINE_EPS * COSINE_EPS)?.sqrt()?;
    Ok(x.broadcast_div(&n)?)
}

/// `[unit(e_low) * unit(d_low) || unit(e_high) * unit(d_high)]` as a
/// `(B, 2C, h, w)` image.
pub fn similarity_feature(e: &GroupedFeatures, d: &GroupedFeatures) -> Result<Tensor> {
    if e.low.dims() != d.low.dims() || e.high.dims() != d.high.dims() {
        return param_err("grouped feature shapes differ");
    }
    let x0 = (unit(&e.low)? * unit(&d.low)?)?;
    let x1 = (unit(&e.high)? * unit(&d.high)?)?;
    let x = Tensor::cat(&[x0, x1], 2)?;
    let (b, _, c2) = x.dims3()?;
    Ok(x.transpose(1, 2)?.reshape((b, c2, e.grid.0, e.grid.1))?)
}

struct ConvBlock {
    conv: Conv3x3,
    norm: GroupNorm,
}

impl ConvBlock {
    fn new(store: &mut ParamStore, prefix: &str, cin: usize, cout: usize, groups: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            conv: conv3x3(store, &format!("{prefix}.conv"), cin, cout, InitScheme::FanIn(2f64.sqrt()), rng)?,
            norm: GroupNorm::new(store, &format!("{prefix}.norm"), cout, groups)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.gelu_erf()?)
    }
}

enum Body {
    ConvUpsample {
        blocks: Vec<ConvBlock>,
        upsamples: Vec<Resize>,
    },
    ResidualHead {
        stem: ConvBlock,
        res: Vec<(ConvBlock, ConvBlock)>,
    },
}

pub struct SegNet {
    config: SegNetConfig,
    store: ParamStore,
    body: Body,
    head: Conv3x3,
    final_resize: Resize,
    grid: (usize, usize),
    channels: usize,
    output: usize,
}

impl SegNet {
    pub fn new(config: &SegNetConfig, encoder: &BackboneSpec, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new(dtype, device);
        let c = encoder.embed_dim;
        let grid = encoder.token_grid();
        let g = config.norm_groups;
        let (body, head_in, pre_resize) = match config.variant {
            SegVariant::ConvUpsample => {
                let widths = [2 * c, c, (c / 2).max(1), (c / 4).max(1)];
                let mut blocks = Vec::new();
                let mut upsamples = Vec::new();
                let mut cin = 2 * c;
                let mut hw = grid;
                for (i, &w) in widths.iter().enumerate() {
                    blocks.push(ConvBlock::new(&mut store, &format!("blocks.{i}"), cin, w, g, &mut rng)?);
                    upsamples.push(Resize::new(hw, (hw.0 * 2, hw.1 * 2), dtype, device)?);
                    cin = w;
                    hw = (hw.0 * 2, hw.1 * 2);
                }
                (Body::ConvUpsample { blocks, upsamples }, cin, hw)
            }
            SegVariant::ResidualHead => {
                let stem = ConvBlock::new(&mut store, "stem", 2 * c, c, g, &mut rng)?;
                let res = (0..2)
                    .map(|i| {
                        Ok((
                            ConvBlock::new(&mut store, &format!("res.{i}.a"), c, c, g, &mut rng)?,
                            ConvBlock::new(&mut store, &format!("res.{i}.b"), c, c, g, &mut rng)?,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (Body::ResidualHead { stem, res }, c, grid)
            }
        };
        let head = conv3x3(&mut store, "head", head_in, 1, InitScheme::Normal(0.01), &mut rng)?;
        let prior = config.output_prior;
        // overwrite the zero bias with the prior logit
        if let Some(b) = store.get("head.bias") {
            b.set(&Tensor::full((prior / (1.0 - prior)).ln(), 1, device)?.to_dtype(dtype)?)?;
        }
        let s = encoder.input_size;
        Ok(Self {
            config: config.clone(),
            final_resize: Resize::new(pre_resize, (s, s), dtype, device)?,
            store,
            body,
            head,
            grid,
            channels: c,
            output: s,
        })
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// Logits `(B, 1, S, S)` from a `(B, 2C, h, w)` similarity feature.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match x.dims() {
            [_, c2, h, w] if *c2 == 2 * self.channels && (*h, *w) == self.grid => {}
            d => return param_err(format!("similarity feature has shape {d:?}")),
        }
        let x = match &self.body {
            Body::ConvUpsample { blocks, upsamples } => {
                let mut x = x.clone();
                for (blk, up) in blocks.iter().zip(upsamples) {
                    x = up.forward(&blk.forward(&x)?)?;
                }
                x
            }
            Body::ResidualHead { stem, res } => {
                let mut x = stem.forward(x)?;
                for (a, b) in res {
                    x = (&x + b.forward(&a.forward(&x)?)?)?;
                }
                x
            }
        };
        self.final_resize.forward(&self.head.forward(&x)?)
    }

    /// Probabilities, one `S x S` grid per sample.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Grid>> {
        let p = sigmoid(&self.forward(x)?)?;
        let b = p.dims()[0];
        let s = self.output;
        let v = p.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        (0..b)
            .map(|i| Ok(Grid::new(s, s, v[i * s * s..(i + 1) * s * s].to_vec())?))
            .collect()
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.neg()?.exp()?.affine(1.0, 1.0)?.recip()?)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? + x.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?)?)
}

/// Focal loss on logits, averaged over every element. `target` holds 0/1
/// and has the shape of `logits`.
pub fn focal_loss_logits(logits: &Tensor, target: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    if logits.dims() != target.dims() {
        return param_err("logits and target shapes differ");
    }
    // ln p = -softplus(-z), ln(1 - p) = -softplus(z)
    let log_p = softplus(&logits.neg()?)?.neg()?;
    let log_q = softplus(logits)?.neg()?;
    let log_pt = ((target * &log_p)? + target.affine(-1.0, 1.0)?.mul(&log_q)?)?;
    let ce = log_pt.neg()?;
    let loss = if gamma == 0.0 {
        ce
    } else {
        let one_minus = log_pt.exp()?.affine(-1.0, 1.0)?;
        let w = if gamma.fract() == 0.0 && gamma <= 8.0 {
            let mut w = one_minus.clone();
            for _ in 1..gamma as usize {
                w = (w * &one_minus)?;
            }
            w
        } else {
            one_minus.clamp(1e-12, 1.0)?.powf(gamma)?
        };
        (w * ce)?
    };
    Ok((loss.mean_all()? * alpha)?)
}

/// Focal loss on a probability map: the mean over pixels of
/// `-alpha (1 - p_t)^gamma ln p_t`.
pub fn focal_loss(y: &Grid, g: &Mask, alpha: f64, gamma: f64) -> Result<f64> {
    if y.height != g.height || y.width != g.width {
        return param_err(format!(
            "prediction {}x{} does not match mask {}x{}",
            y.height, y.width, g.height, g.width
        ));
    }
    if gamma < 0.0 {
        return param_err("gamma must be non-negative");
    }
    let sum: f64 = y
        .values
        .iter()
        .zip(&g.data)
        .map(|(&p, &m)| {
            let pt = if m != 0 { p } else { 1.0 - p };
            -alpha * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum();
    Ok(sum / y.values.len() as f64)
}
