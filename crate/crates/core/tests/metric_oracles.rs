use crr_core::metrics::{aupro, auroc, average_precision, f1_max};
use crr_core::{Grid, Mask};
use crr_oracles as oracle;
use proptest::prelude::*;

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..64).prop_flat_map(|n| {
        (
            // a coarse score lattice makes ties common
            prop::collection::vec((0u8..12).prop_map(|v| v as f64 / 11.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn ranking_metrics_match_sweeps((scores, labels) in scored_labels()) {
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0);
        let ap = average_precision(&scores, &labels).unwrap();
        prop_assert!((ap - oracle::average_precision_sweep(&scores, &labels)).abs() < 1e-9);
        let f1 = f1_max(&scores, &labels).unwrap();
        prop_assert!((f1 - oracle::f1_max_sweep(&scores, &labels)).abs() < 1e-9);
        if pos < labels.len() {
            let a = auroc(&scores, &labels).unwrap();
            prop_assert!((a - oracle::auroc_pairs(&scores, &labels)).abs() < 1e-9);
        }
    }

    #[test]
    fn monotone_transform_invariance((scores, labels) in scored_labels()) {
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < labels.len());
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
        prop_assert_eq!(
            average_precision(&scores, &labels).unwrap(),
            average_precision(&warped, &labels).unwrap()
        );
        prop_assert_eq!(f1_max(&scores, &labels).unwrap(), f1_max(&warped, &labels).unwrap());
    }

    #[test]
    fn auroc_complement_without_ties(
        n in 2usize..40,
        seed in any::<u64>(),
    ) {
        // distinct scores: a permutation of 0..n
        let mut scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            scores.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let labels: Vec<bool> = (0..n).map(|i| (seed >> (i % 64)) & 1 == 1).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        prop_assume!(pos > 0 && pos < n);
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = auroc(&scores, &labels).unwrap() + auroc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aupro_matches_sweep(
        h in 2usize..8,
        w in 2usize..8,
        seed in any::<u64>(),
        limit in prop::sample::select(vec![0.05, 0.3, 1.0]),
    ) {
        let mut state = seed | 1;
        let mut next = || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; state };
        let scores: Vec<f64> = (0..h * w).map(|_| (next() % 9) as f64 / 8.0).collect();
        let mask: Vec<u8> = (0..h * w).map(|_| u8::from(next() % 3 == 0)).collect();
        let anomalous = mask.iter().filter(|&&m| m == 1).count();
        prop_assume!(anomalous > 0 && anomalous < h * w);
        let got = aupro(
            &[Grid::new(h, w, scores.clone()).unwrap()],
            &[Mask::from_vec(h, w, mask.clone()).unwrap()],
            limit,
        ).unwrap();
        let expect = oracle::aupro_sweep(&[(h, w, scores, mask)], limit);
        prop_assert!((got - expect).abs() < 1e-9, "{} vs {}", got, expect);
    }
}

#[test]
fn aupro_two_regions_hand_built() {
    // two 2x2 regions in a 6x6 frame, scores chosen so the regions are
    // discovered at different false-positive rates
    let mask: Vec<u8> = (0..36)
        .map(|i| {
            let (y, x) = (i / 6, i % 6);
            u8::from((y < 2 && x < 2) || ((3..5).contains(&y) && (3..5).contains(&x)))
        })
        .collect();
    let scores: Vec<f64> = (0..36)
        .map(|i| {
            let (y, x) = (i / 6, i % 6);
            if y < 2 && x < 2 {
                0.9 - 0.05 * (y * 2 + x) as f64
            } else if (3..5).contains(&y) && (3..5).contains(&x) {
                0.5 - 0.1 * (y - 3) as f64
            } else {
                ((i * 7) % 11) as f64 / 20.0
            }
        })
        .collect();
    let got = aupro(
        &[Grid::new(6, 6, scores.clone()).unwrap()],
        &[Mask::from_vec(6, 6, mask.clone()).unwrap()],
        0.3,
    )
    .unwrap();
    let expect = oracle::aupro_sweep(&[(6, 6, scores, mask)], 0.3);
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    assert!(got > 0.5 && got < 1.0);
}

#[test]
fn aupro_pools_regions_across_images() {
    let a = (3, 3, vec![0.9, 0.1, 0.2, 0.3, 0.8, 0.1, 0.0, 0.2, 0.4], vec![1, 0, 0, 0, 1, 0, 0, 0, 0]);
    let b = (2, 4, vec![0.1, 0.5, 0.5, 0.7, 0.3, 0.2, 0.6, 0.1], vec![0, 0, 0, 1, 0, 0, 1, 0]);
    let maps: Vec<Grid> = [&a, &b].iter().map(|t| Grid::new(t.0, t.1, t.2.clone()).unwrap()).collect();
    let masks: Vec<Mask> = [&a, &b].iter().map(|t| Mask::from_vec(t.0, t.1, t.3.clone()).unwrap()).collect();
    let got = aupro(&maps, &masks, 0.3).unwrap();
    let expect = oracle::aupro_sweep(&[a, b], 0.3);
    assert!((got - expect).abs() < 1e-9);
}
