use crr_core::scoring::{anomaly_map, image_score};
use crr_core::Grid;
use crr_oracles as oracle;
use proptest::prelude::*;

proptest! {
    #[test]
    fn recombination_matches_scalar_loop(
        dh in 1usize..9,
        size in 2usize..40,
        seed in any::<u64>(),
    ) {
        let mut state = seed | 1;
        let mut next = || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; (state % 10_000) as f64 / 2_500.0 };
        let d: Vec<f64> = (0..dh * dh).map(|_| next()).collect();
        let s: Vec<f64> = (0..size * size).map(|_| next() / 4.0).collect();
        let got = anomaly_map(
            &Grid::new(dh, dh, d.clone()).unwrap(),
            Some(&Grid::new(size, size, s.clone()).unwrap()),
            0.7, 0.3, size,
        ).unwrap();
        let up = oracle::bilinear(dh, dh, &d, size, size);
        for i in 0..size * size {
            let expect = 0.7 * up[i] + 0.3 * s[i];
            prop_assert!((got.values[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn recombination_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let mut state = seed | 1;
        let mut next = || { state ^= state << 13; state ^= state >> 7; state ^= state << 17; (state % 1000) as f64 / 1000.0 };
        let g = |n: usize, f: &mut dyn FnMut() -> f64| Grid::new(n, n, (0..n * n).map(|_| f()).collect()).unwrap();
        let (d1, d2) = (g(4, &mut next), g(4, &mut next));
        let (s1, s2) = (g(12, &mut next), g(12, &mut next));
        let comb = |x: &Grid, y: &Grid| Grid::new(x.height, x.width, x.values.iter().zip(&y.values).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = anomaly_map(&comb(&d1, &d2), Some(&comb(&s1, &s2)), 0.7, 0.3, 12).unwrap();
        let m1 = anomaly_map(&d1, Some(&s1), 0.7, 0.3, 12).unwrap();
        let m2 = anomaly_map(&d2, Some(&s2), 0.7, 0.3, 12).unwrap();
        for i in 0..144 {
            prop_assert!((lhs.values[i] - (a * m1.values[i] + b * m2.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn image_score_monotone_in_t(values in prop::collection::vec(-5.0f64..5.0, 1..80)) {
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(image_score(&values, 1).unwrap(), max);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        prop_assert_eq!(image_score(&values, values.len()).unwrap(), mean);
        let mut prev = max;
        for t in 2..=values.len() {
            let s = image_score(&values, t).unwrap();
            prop_assert!(s <= prev + 1e-12);
            prev = s;
        }
    }
}
