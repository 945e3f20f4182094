//! Decoupled-weight-decay Adam variants operating on candle variables.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    /// AdamW with the AMSGrad second-moment maximum and an update clipped
    /// by the per-tensor gradient RMS ratio.
    #[serde(rename = "stable-adamw+amsgrad")]
    StableAdamWAmsgrad,
    #[serde(rename = "adamw")]
    AdamW,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stable-adamw+amsgrad" => Ok(Self::StableAdamWAmsgrad),
            "adamw" => Ok(Self::AdamW),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub lr: f64,
    pub betas: [f64; 2],
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            betas: [0.9, 0.999],
            weight_decay: 0.0,
            eps: 1e-8,
        }
    }
}

struct Slot {
    var: Var,
    m: Tensor,
    v: Tensor,
    v_max: Tensor,
}

pub struct Optimizer {
    kind: OptimizerKind,
    settings: OptimizerSettings,
    slots: Vec<Slot>,
    step: u64,
}

pub fn make_optimizer(kind: OptimizerKind, params: Vec<Var>, settings: OptimizerSettings) -> Result<Optimizer> {
    if !(settings.lr >= 0.0) || settings.weight_decay < 0.0 || settings.eps <= 0.0 {
        return Err(Error::Config("lr, weight_decay must be non-negative and eps positive".into()));
    }
    if settings.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
        return Err(Error::Config("betas must lie in [0, 1)".into()));
    }
    let slots = params
        .into_iter()
        .map(|var| {
            let z = var.as_tensor().zeros_like()?;
            Ok(Slot {
                var,
                m: z.clone(),
                v: z.clone(),
                v_max: z,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Optimizer {
        kind,
        settings,
        slots,
        step: 0,
    })
}

impl Optimizer {
    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from `grads`; variables without a gradient are treated as
    /// having a zero gradient.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let OptimizerSettings {
            lr,
            betas: [b1, b2],
            weight_decay,
            eps,
        } = self.settings;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for slot in &mut self.slots {
            let theta = slot.var.as_tensor().detach();
            let g = match grads.get(slot.var.as_tensor()) {
                Some(g) => g.detach(),
                None => theta.zeros_like()?,
            };
            slot.m = ((&slot.m * b1)? + (&g * (1.0 - b1))?)?;
            slot.v = ((&slot.v * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let m_hat = (&slot.m / bc1)?;
            let (denom, lr_t) = match self.kind {
                OptimizerKind::AdamW => (((&slot.v / bc2)?.sqrt()? + eps)?, lr),
                OptimizerKind::StableAdamWAmsgrad => {
                    slot.v_max = slot.v_max.maximum(&slot.v)?;
                    let denom = ((slot.v_max.sqrt()? / bc2.sqrt())? + eps)?;
                    let v_hat = (&slot.v / bc2)?.maximum(eps * eps)?;
                    let rms = (g.sqr()? / v_hat)?.mean_all()?.to_dtype(candle_core::DType::F64)?;
                    let rms = rms.to_scalar::<f64>()?.sqrt();
                    (denom, lr / rms.max(1.0))
                }
            };
            let decayed = (theta * (1.0 - lr_t * weight_decay))?;
            let update = ((m_hat / denom)? * lr_t)?;
            slot.var.set(&(decayed - update)?)?;
        }
        Ok(())
    }
}
