use candle_core::{Device, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crr_core::{Grid, Mask};
use crr_model::backbone::{FeatureSource, FeatureStack, STACK_DEPTH};
use crr_model::repair_net::{discrepancy, discrepancy_map, group, nrar_loss, GroupedFeatures, COSINE_EPS};
use crr_model::segnet::{focal_loss, focal_loss_logits, similarity_feature};
use crr_oracles::{bce_term, cosine, focal_term};

fn random_grouped(rng: &mut ChaCha8Rng, b: usize, grid: (usize, usize), c: usize) -> GroupedFeatures {
    let n = grid.0 * grid.1;
    let mut t = || {
        let v: Vec<f64> = (0..b * n * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, (b, n, c), &Device::Cpu).unwrap()
    };
    GroupedFeatures {
        low: t(),
        high: t(),
        grid,
    }
}

fn neg(g: &GroupedFeatures) -> GroupedFeatures {
    GroupedFeatures {
        low: g.low.neg().unwrap(),
        high: g.high.neg().unwrap(),
        grid: g.grid,
    }
}

fn scalar(t: &Tensor) -> f64 {
    t.to_scalar::<f64>().unwrap()
}

fn values(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

#[test]
fn discrepancy_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let g = random_grouped(&mut rng, 3, (2, 3), 5);
        assert!(scalar(&discrepancy(&g, &g).unwrap()).abs() < 1e-12);
        assert!((scalar(&discrepancy(&g, &neg(&g)).unwrap()) - 4.0).abs() < 1e-12);
    }
}

#[test]
fn nrar_is_the_sum_of_its_terms() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let en = random_grouped(&mut rng, 2, (3, 3), 4);
        let dn = random_grouped(&mut rng, 2, (3, 3), 4);
        let da = random_grouped(&mut rng, 2, (3, 3), 4);
        let total = scalar(&nrar_loss(&en, &dn, &da).unwrap());
        let parts = scalar(&discrepancy(&en, &dn).unwrap()) + scalar(&discrepancy(&en, &da).unwrap());
        assert_eq!(total, parts);
    }
}

#[test]
fn discrepancy_matches_scalar_cosine() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, grid, c) = (2, (2, 2), 3);
    let e = random_grouped(&mut rng, b, grid, c);
    let d = random_grouped(&mut rng, b, grid, c);
    let el = values(&e.low);
    let eh = values(&e.high);
    let dl = values(&d.low);
    let dh = values(&d.high);
    let n = grid.0 * grid.1;
    let mut expected = 0.0;
    for s in 0..b {
        let r = s * n * c..(s + 1) * n * c;
        expected += 2.0 - cosine(&el[r.clone()], &dl[r.clone()], COSINE_EPS) - cosine(&eh[r.clone()], &dh[r], COSINE_EPS);
    }
    expected /= b as f64;
    assert!((scalar(&discrepancy(&e, &d).unwrap()) - expected).abs() < 1e-12);

    let map = values(&discrepancy_map(&e, &d).unwrap());
    assert_eq!(map.len(), b * n);
    for s in 0..b {
        for t in 0..n {
            let r = (s * n + t) * c..(s * n + t + 1) * c;
            let want = 2.0 - cosine(&el[r.clone()], &dl[r.clone()], COSINE_EPS) - cosine(&eh[r.clone()], &dh[r], COSINE_EPS);
            assert!((map[s * n + t] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn group_averages_halves_of_the_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, n, c) = (2, 4, 3);
    let raw: Vec<Vec<f64>> = (0..STACK_DEPTH)
        .map(|_| (0..b * n * c).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let maps = raw
        .iter()
        .map(|v| Tensor::from_vec(v.clone(), (b, n, c), &Device::Cpu).unwrap())
        .collect();
    let stack = FeatureStack::new(maps, (2, 2), FeatureSource::Encoder).unwrap();
    let g = group(&stack).unwrap();
    let (lo, hi) = (values(&g.low), values(&g.high));
    for i in 0..b * n * c {
        let want_lo = (0..4).map(|k| raw[k][i]).sum::<f64>() / 4.0;
        let want_hi = (4..8).map(|k| raw[k][i]).sum::<f64>() / 4.0;
        assert!((lo[i] - want_lo).abs() < 1e-12 && (hi[i] - want_hi).abs() < 1e-12);
    }
}

#[test]
fn similarity_feature_matches_normalised_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (b, grid, c) = (2, (2, 3), 4);
    let n = grid.0 * grid.1;
    let e = random_grouped(&mut rng, b, grid, c);
    let d = random_grouped(&mut rng, b, grid, c);
    let x = similarity_feature(&e, &d).unwrap();
    assert_eq!(x.dims(), &[b, 2 * c, grid.0, grid.1]);
    let xv = values(&x);
    let unit = |v: &[f64]| {
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(COSINE_EPS);
        v.iter().map(|a| a / norm).collect::<Vec<_>>()
    };
    for (k, (et, dt)) in [(&e.low, &d.low), (&e.high, &d.high)].into_iter().enumerate() {
        let (ev, dv) = (values(et), values(dt));
        for s in 0..b {
            for t in 0..n {
                let r = (s * n + t) * c..(s * n + t + 1) * c;
                let (ue, ud) = (unit(&ev[r.clone()]), unit(&dv[r]));
                for ch in 0..c {
                    let got = xv[((s * 2 * c) + k * c + ch) * n + t];
                    assert!((got - ue[ch] * ud[ch]).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn focal_reduces_to_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let y = Grid::new(h, w, (0..h * w).map(|_| rng.random_range(0.001..0.999)).collect()).unwrap();
        let g = Mask::from_fn(h, w, |_, _| rng.random_bool(0.4));
        let ce = y
            .values
            .iter()
            .zip(&g.data)
            .map(|(&p, &m)| bce_term(p, m != 0))
            .sum::<f64>()
            / (h * w) as f64;
        assert!((focal_loss(&y, &g, 1.0, 0.0).unwrap() - ce).abs() < 1e-12);
    }
}

#[test]
fn logit_focal_matches_probability_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for gamma in [0.0, 1.0, 2.0, 2.5] {
        let z: Vec<f64> = (0..30).map(|_| rng.random_range(-6.0..6.0)).collect();
        let t: Vec<f64> = (0..30).map(|_| f64::from(u8::from(rng.random_bool(0.3)))).collect();
        let logits = Tensor::from_vec(z.clone(), (1, 1, 5, 6), &Device::Cpu).unwrap();
        let target = Tensor::from_vec(t.clone(), (1, 1, 5, 6), &Device::Cpu).unwrap();
        let got = scalar(&focal_loss_logits(&logits, &target, 0.25, gamma).unwrap());
        let want = z
            .iter()
            .zip(&t)
            .map(|(&z, &t)| focal_term(1.0 / (1.0 + (-z).exp()), t == 1.0, 0.25, gamma))
            .sum::<f64>()
            / 30.0;
        assert!((got - want).abs() < 1e-10, "gamma {gamma}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn discrepancy_is_bounded_and_scale_invariant(seed in any::<u64>(), scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = random_grouped(&mut rng, 2, (2, 2), 3);
        let d = random_grouped(&mut rng, 2, (2, 2), 3);
        let v = scalar(&discrepancy(&e, &d).unwrap());
        prop_assert!((-1e-12..=4.0 + 1e-12).contains(&v));
        let ds = GroupedFeatures { low: (&d.low * scale).unwrap(), high: (&d.high * scale).unwrap(), grid: d.grid };
        prop_assert!((scalar(&discrepancy(&e, &ds).unwrap()) - v).abs() < 1e-10);
        let map = values(&discrepancy_map(&e, &d).unwrap());
        prop_assert!(map.iter().all(|m| (-1e-12..=4.0 + 1e-12).contains(m)));
    }

    #[test]
    fn focal_is_non_negative_and_shrinks_with_gamma(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = Grid::new(3, 3, (0..9).map(|_| rng.random_range(0.01..0.99)).collect()).unwrap();
        let g = Mask::from_fn(3, 3, |_, _| rng.random_bool(0.5));
        let l0 = focal_loss(&y, &g, 0.25, 0.0).unwrap();
        let l2 = focal_loss(&y, &g, 0.25, 2.0).unwrap();
        prop_assert!(l2 >= 0.0 && l2 <= l0 + 1e-15);
    }
}
