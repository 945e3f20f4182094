//! Transformer and convolution building blocks written from primitive
//! tensor ops so every piece has a backward pass at any float precision.

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::Linear;
use rand::Rng;

use crate::error::Result;
use crate::params::ParamStore;

/// How freshly created weights are filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitScheme {
    /// Truncated normal with a fixed std; the usual transformer default.
    Normal(f64),
    /// Truncated normal with std `gain / sqrt(fan_in)`.
    FanIn(f64),
    /// All zeros; used for shells whose weights are loaded later.
    Zeros,
}

impl InitScheme {
    pub(crate) fn std(self, fan_in: usize) -> f64 {
        match self {
            InitScheme::Normal(s) => s,
            InitScheme::FanIn(g) => g / (fan_in as f64).sqrt(),
            InitScheme::Zeros => 0.0,
        }
    }
}

pub fn linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    init: InitScheme,
    rng: &mut R,
) -> Result<Linear> {
    let w = store.normal(format!("{prefix}.weight"), &[out_dim, in_dim], init.std(in_dim), rng)?;
    let b = store.constant(format!("{prefix}.bias"), &[out_dim], 0.0)?;
    Ok(Linear::new(w, Some(b)))
}

pub fn conv3x3<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    init: InitScheme,
    rng: &mut R,
) -> Result<Conv3x3> {
    let fan_in = in_ch * 9;
    let weight = store.normal(format!("{prefix}.weight"), &[out_ch, in_ch, 3, 3], init.std(fan_in), rng)?;
    let bias = store.constant(format!("{prefix}.bias"), &[out_ch], 0.0)?;
    Ok(Conv3x3 { weight, bias })
}

/// Stride-1, zero-padded 3x3 convolution lowered to one matrix product over
/// nine shifted copies of the input. The backward pass of this form is far
/// cheaper on CPU than a transposed convolution.
#[derive(Clone, Debug)]
pub struct Conv3x3 {
    weight: Tensor,
    bias: Tensor,
}

impl Conv3x3 {
    /// Input `(B, C, H, W)`, output `(B, O, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let (o, ci, _, _) = self.weight.dims4()?;
        if ci != c {
            return Err(crate::error::Error::Parameter(format!("conv expects {ci} channels, got {c}")));
        }
        let padded = x.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
        let mut taps = Vec::with_capacity(9);
        for dy in 0..3 {
            for dx in 0..3 {
                taps.push(padded.narrow(2, dy, h)?.narrow(3, dx, w)?);
            }
        }
        // (B, C, 9, H, W) so the flattened axis matches the weight layout
        let cols = Tensor::stack(&taps, 2)?.reshape((b, c * 9, h * w))?;
        let wm = self.weight.reshape((o, c * 9))?;
        let y = wm.broadcast_matmul(&cols)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, o, 1))?)?.reshape((b, o, h, w))?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: store.constant(format!("{prefix}.weight"), &[dim], 1.0)?,
            bias: store.constant(format!("{prefix}.bias"), &[dim], 0.0)?,
            eps,
        })
    }

    /// Normalises over the last axis.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Numerically stable softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let sum = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&sum)?)
}

#[derive(Clone, Debug)]
pub struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
    scale: f64,
}

impl Attention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        init: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            qkv: linear(store, &format!("{prefix}.qkv"), dim, 3 * dim, init, rng)?,
            proj: linear(store, &format!("{prefix}.proj"), dim, dim, init, rng)?,
            heads,
            scale: 1.0 / ((dim / heads) as f64).sqrt(),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, n, c) = x.dims3()?;
        let hd = c / self.heads;
        let qkv = self
            .qkv
            .forward(x)?
            .reshape((b, n, 3, self.heads, hd))?
            .permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let attn = softmax_last(&(q.matmul(&k.t()?)? * self.scale)?)?;
        let out = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, n, c))?;
        Ok(self.proj.forward(&out)?)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: usize,
        init: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fc1: linear(store, &format!("{prefix}.fc1"), dim, hidden, init, rng)?,
            fc2: linear(store, &format!("{prefix}.fc2"), hidden, dim, init, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.fc2.forward(&self.fc1.forward(x)?.gelu_erf()?)?)
    }
}

/// Pre-norm transformer block, optionally with per-channel layer scale.
#[derive(Clone, Debug)]
pub struct Block {
    norm1: LayerNorm,
    attn: Attention,
    ls1: Option<Tensor>,
    norm2: LayerNorm,
    mlp: Mlp,
    ls2: Option<Tensor>,
}

#[derive(Clone, Copy, Debug)]
pub struct BlockShape {
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub norm_eps: f64,
    /// Initial layer-scale value; `None` disables layer scale.
    pub layer_scale: Option<f64>,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        shape: BlockShape,
        init: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = shape.dim;
        let hidden = (dim as f64 * shape.mlp_ratio).round() as usize;
        let norm1 = LayerNorm::new(store, &format!("{prefix}.norm1"), dim, shape.norm_eps)?;
        let attn = Attention::new(store, &format!("{prefix}.attn"), dim, shape.heads, init, rng)?;
        let ls1 = match shape.layer_scale {
            Some(v) => Some(store.constant(format!("{prefix}.ls1.gamma"), &[dim], v)?),
            None => None,
        };
        let norm2 = LayerNorm::new(store, &format!("{prefix}.norm2"), dim, shape.norm_eps)?;
        let mlp = Mlp::new(store, &format!("{prefix}.mlp"), dim, hidden, init, rng)?;
        let ls2 = match shape.layer_scale {
            Some(v) => Some(store.constant(format!("{prefix}.ls2.gamma"), &[dim], v)?),
            None => None,
        };
        Ok(Self {
            norm1,
            attn,
            ls1,
            norm2,
            mlp,
            ls2,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = self.attn.forward(&self.norm1.forward(x)?)?;
        if let Some(g) = &self.ls1 {
            h = h.broadcast_mul(g)?;
        }
        let x = (x + h)?;
        let mut h = self.mlp.forward(&self.norm2.forward(&x)?)?;
        if let Some(g) = &self.ls2 {
            h = h.broadcast_mul(g)?;
        }
        Ok((x + h)?)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    weight: Tensor,
    bias: Tensor,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize, groups: usize) -> Result<Self> {
        let groups = groups.clamp(1, channels);
        let groups = (1..=groups).rev().find(|g| channels % g == 0).unwrap_or(1);
        Ok(Self {
            weight: store.constant(format!("{prefix}.weight"), &[channels], 1.0)?,
            bias: store.constant(format!("{prefix}.bias"), &[channels], 0.0)?,
            groups,
            eps: 1e-5,
        })
    }

    /// Input `(B, C, H, W)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let xg = x.reshape((b, self.groups, (c / self.groups) * h * w))?;
        let mean = xg.mean_keepdim(2)?;
        let xc = xg.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(2)?;
        let xn = xc.broadcast_div(&(var + self.eps)?.sqrt()?)?.reshape((b, c, h, w))?;
        Ok(xn
            .broadcast_mul(&self.weight.reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.reshape((1, c, 1, 1))?)?)
    }
}

/// Bilinear resize of `(B, C, H, W)` maps as two constant matrix products,
/// matching the pixel-centre convention of [`crr_core::resize`].
#[derive(Clone, Debug)]
pub struct Resize {
    rows: Tensor,
    cols_t: Tensor,
}

impl Resize {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize), dtype: DType, device: &Device) -> Result<Self> {
        let rows = crr_core::resize::interpolation_matrix(in_hw.0, out_hw.0);
        let cols = crr_core::resize::interpolation_matrix(in_hw.1, out_hw.1);
        Ok(Self {
            rows: Tensor::from_vec(rows, (out_hw.0, in_hw.0), device)?.to_dtype(dtype)?,
            cols_t: Tensor::from_vec(cols, (out_hw.1, in_hw.1), device)?
                .to_dtype(dtype)?
                .t()?
                .contiguous()?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let x = x.broadcast_matmul(&self.cols_t)?;
        Ok(self.rows.broadcast_matmul(&x)?)
    }
}
