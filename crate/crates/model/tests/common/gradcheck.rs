//! Central-difference gradient checks at 64-bit precision on a tiny model.

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crr_core::Mask;
use crr_model::backbone::{Backbone, BackboneSpec};
use crr_model::repair_net::{group, nrar_loss, FeatureMask, Mode, RepairNet, RepairNetConfig};
use crr_model::segnet::{focal_loss_logits, similarity_feature, SegNet, SegNetConfig};

pub const STEP: f64 = 1e-5;

pub fn tiny_spec(seed: u64) -> BackboneSpec {
    BackboneSpec {
        patch_size: 4,
        embed_dim: 8,
        heads: 2,
        mlp_ratio: 2.0,
        input_size: 12,
        resize_to: 12,
        pos_grid: 3,
        init_seed: seed,
        ..BackboneSpec::toy()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-7)`; the floor keeps entries whose true
/// gradient is zero from dividing rounding noise by nothing.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

fn entry(var: &Var, i: usize) -> f64 {
    var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap()[i]
}

fn set_entry(var: &Var, i: usize, v: f64) {
    let mut data = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
    data[i] = v;
    let t = Tensor::from_vec(data, var.dims(), &Device::Cpu).unwrap();
    var.set(&t).unwrap();
}

/// Compares analytic and numeric derivatives at `samples` random entries
/// spread over `vars`; returns the worst relative error.
fn check(vars: &[Var], loss: &dyn Fn() -> Tensor, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let l = loss();
    let grads = l.backward().unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let var = &vars[rng.random_range(0..vars.len())];
        let i = rng.random_range(0..var.elem_count());
        let analytic = grads
            .get(var.as_tensor())
            .map(|g| g.flatten_all().unwrap().to_vec1::<f64>().unwrap()[i])
            .unwrap_or(0.0);
        let orig = entry(var, i);
        set_entry(var, i, orig + STEP);
        let up = loss().to_scalar::<f64>().unwrap();
        set_entry(var, i, orig - STEP);
        let down = loss().to_scalar::<f64>().unwrap();
        set_entry(var, i, orig);
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}

fn random_images(n: usize, s: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data: Vec<f64> = (0..n * 3 * s * s).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::from_vec(data, (n, 3, s, s), &Device::Cpu).unwrap()
}

fn random_masks(n: usize, g: usize, rng: &mut ChaCha8Rng) -> Vec<FeatureMask> {
    (0..n)
        .map(|_| {
            let mut values = Mask::from_fn(g, g, |_, _| rng.random::<f64>() >= 0.4);
            values.set(0, 0, true);
            FeatureMask { values, ratio: 0.4 }
        })
        .collect()
}

/// Worst relative error of the NRAR loss gradient over bottleneck and
/// decoder parameters. Dropout is disabled so the loss is a deterministic
/// function of the parameters.
pub fn nrar_gradient_error(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = tiny_spec(seed);
    let enc = Backbone::new(&spec, DType::F64, &Device::Cpu).unwrap();
    let cfg = RepairNetConfig {
        init_seed: seed,
        drop_rate: 0.0,
        ..Default::default()
    };
    let net = RepairNet::new(&cfg, &spec, DType::F64, &Device::Cpu).unwrap();
    let b = 2;
    let fe = enc.extract(&random_images(2 * b, spec.input_size, &mut rng)).unwrap();
    let masks = random_masks(2 * b, spec.token_grid().0, &mut rng);
    let loss = || {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let (fd, _) = net.forward(&fe, &masks, Mode::Train, &mut r).unwrap();
        let ge = group(&fe.narrow(0, b).unwrap()).unwrap();
        let gd = group(&fd).unwrap();
        nrar_loss(&ge, &gd.narrow(0, b).unwrap(), &gd.narrow(b, b).unwrap()).unwrap()
    };
    check(&net.params().vars(), &loss, samples, &mut rng)
}

/// Worst relative error of the focal loss gradient over the segmentation
/// head's parameters.
pub fn focal_gradient_error(seed: u64, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = tiny_spec(seed);
    let cfg = SegNetConfig {
        init_seed: seed,
        norm_groups: 2,
        ..Default::default()
    };
    let seg = SegNet::new(&cfg, &spec, DType::F64, &Device::Cpu).unwrap();
    let enc = Backbone::new(&spec, DType::F64, &Device::Cpu).unwrap();
    let fe = enc.extract(&random_images(2, spec.input_size, &mut rng)).unwrap();
    let ge = group(&fe).unwrap();
    let mut shuffled = fe.clone();
    shuffled.maps.reverse();
    let gd = group(&shuffled).unwrap();
    let x = similarity_feature(&ge, &gd).unwrap();
    let s = spec.input_size;
    let target: Vec<f64> = (0..2 * s * s).map(|_| f64::from(rng.random::<f64>() < 0.2)).collect();
    let target = Tensor::from_vec(target, (2, 1, s, s), &Device::Cpu).unwrap();
    let loss = || {
        let logits = seg.forward(&x).unwrap();
        focal_loss_logits(&logits, &target, cfg.alpha, cfg.gamma).unwrap()
    };
    check(&seg.params().vars(), &loss, samples, &mut rng)
}
