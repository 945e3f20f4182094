//! Gradient-lattice (Perlin) noise.

use rand::Rng;

use crate::error::{param_err, Result};
use crate::image::{Grid, Mask};

/// Upper bound on `|value|` for every field produced here. A single 2-D
/// Perlin octave with unit gradients never exceeds `sqrt(2)/2`, and octaves
/// are combined as a convex combination.
pub const NOISE_BOUND: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Amplitude ratio between successive octaves.
pub const PERSISTENCE: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    pub values: Grid,
    pub octave_scales: Vec<usize>,
}

/// Supplies lattice gradient vectors.
pub trait GradientSource {
    fn next_gradient(&mut self) -> [f64; 2];
}

impl<R: Rng + ?Sized> GradientSource for R {
    fn next_gradient(&mut self) -> [f64; 2] {
        let angle = self.random::<f64>() * std::f64::consts::TAU;
        [angle.cos(), angle.sin()]
    }
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

fn octave<G: GradientSource + ?Sized>(
    height: usize,
    width: usize,
    scale: usize,
    source: &mut G,
    out: &mut [f64],
    weight: f64,
) {
    let side = scale + 1;
    let gradients: Vec<[f64; 2]> = (0..side * side).map(|_| source.next_gradient()).collect();
    let g = |gy: usize, gx: usize| gradients[gy * side + gx];
    for y in 0..height {
        let fy = (y as f64 + 0.5) * scale as f64 / height as f64;
        let cy = (fy.floor() as usize).min(scale - 1);
        let ty = fy - cy as f64;
        for x in 0..width {
            let fx = (x as f64 + 0.5) * scale as f64 / width as f64;
            let cx = (fx.floor() as usize).min(scale - 1);
            let tx = fx - cx as f64;
            let dot = |gy: usize, gx: usize, dy: f64, dx: f64| {
                let v = g(gy, gx);
                v[0] * dx + v[1] * dy
            };
            let n00 = dot(cy, cx, ty, tx);
            let n01 = dot(cy, cx + 1, ty, tx - 1.0);
            let n10 = dot(cy + 1, cx, ty - 1.0, tx);
            let n11 = dot(cy + 1, cx + 1, ty - 1.0, tx - 1.0);
            let (u, v) = (fade(tx), fade(ty));
            let value = lerp(lerp(n00, n01, u), lerp(n10, n11, u), v);
            out[y * width + x] += weight * value;
        }
    }
}

/// Fractal Perlin noise: one octave per entry of `octave_scales` (lattice
/// cells across the image), amplitudes decaying by [`PERSISTENCE`] in list
/// order and normalised to sum to one. Values lie in
/// `[-NOISE_BOUND, NOISE_BOUND]`.
pub fn perlin_noise<G: GradientSource + ?Sized>(
    height: usize,
    width: usize,
    octave_scales: &[usize],
    source: &mut G,
) -> Result<NoiseField> {
    if height < 2 || width < 2 {
        return param_err(format!("noise field must be at least 2x2, got {height}x{width}"));
    }
    if octave_scales.is_empty() {
        return param_err("at least one octave scale is required");
    }
    let limit = height.min(width);
    if let Some(bad) = octave_scales.iter().find(|&&s| s == 0 || s > limit) {
        return param_err(format!("octave scale {bad} outside 1..={limit}"));
    }
    let amps: Vec<f64> = (0..octave_scales.len())
        .map(|i| PERSISTENCE.powi(i as i32))
        .collect();
    let total: f64 = amps.iter().sum();
    let mut values = vec![0.0; height * width];
    for (&scale, amp) in octave_scales.iter().zip(&amps) {
        octave(height, width, scale, source, &mut values, amp / total);
    }
    Ok(NoiseField {
        values: Grid {
            height,
            width,
            values,
        },
        octave_scales: octave_scales.to_vec(),
    })
}

/// `mask(h, w) = 1` iff `noise(h, w) > threshold`.
pub fn binarize(noise: &NoiseField, threshold: f64) -> Mask {
    let g = &noise.values;
    Mask {
        height: g.height,
        width: g.width,
        data: g.values.iter().map(|&v| u8::from(v > threshold)).collect(),
    }
}

/// Threshold such that strictly-greater values make up the top
/// `1 - quantile` share of the field (up to ties).
pub fn quantile_threshold(noise: &NoiseField, quantile: f64) -> f64 {
    let mut v = noise.values.values.clone();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let rank = ((n as f64 * quantile.clamp(0.0, 1.0)).ceil() as usize).clamp(1, n);
    v[rank - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct ZeroGradients;

    impl GradientSource for ZeroGradients {
        fn next_gradient(&mut self) -> [f64; 2] {
            [0.0, 0.0]
        }
    }

    #[test]
    fn zero_gradients_give_zero_field() {
        let f = perlin_noise(4, 4, &[2], &mut ZeroGradients).unwrap();
        assert!(f.values.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let a = perlin_noise(28, 28, &[2, 4, 8, 16], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = perlin_noise(28, 28, &[2, 4, 8, 16], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let c = perlin_noise(28, 28, &[2, 4, 8, 16], &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_mean_near_zero() {
        let mut total = 0.0;
        let mut count = 0usize;
        for seed in 0..100 {
            let f =
                perlin_noise(28, 28, &[2, 4, 8, 16], &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            total += f.values.values.iter().sum::<f64>();
            count += f.values.len();
        }
        let mean = total / count as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn values_respect_bound() {
        for seed in 0..20 {
            let f = perlin_noise(33, 20, &[1, 3, 7, 20], &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap();
            assert!(f.values.values.iter().all(|v| v.is_finite() && v.abs() <= NOISE_BOUND));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(perlin_noise(1, 8, &[1], &mut rng).is_err());
        assert!(perlin_noise(8, 8, &[], &mut rng).is_err());
        assert!(perlin_noise(8, 8, &[0], &mut rng).is_err());
        assert!(perlin_noise(8, 8, &[9], &mut rng).is_err());
    }

    #[test]
    fn binarize_examples() {
        let field = NoiseField {
            values: Grid::new(2, 2, vec![0.1, 0.6, 0.7, 0.2]).unwrap(),
            octave_scales: vec![1],
        };
        assert_eq!(binarize(&field, 0.5).data, vec![0, 1, 1, 0]);
        assert!(binarize(&field, 0.71).is_empty());
        assert_eq!(binarize(&field, 0.0).count(), 4);
    }

    #[test]
    fn quantile_selects_top_share() {
        let f = perlin_noise(64, 64, &[2, 4], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let t = quantile_threshold(&f, 0.8);
        let m = binarize(&f, t);
        assert_eq!(m.count(), 4096 - (4096.0f64 * 0.8).ceil() as usize);
    }
}
