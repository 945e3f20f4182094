use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crr_model::repair_net::make_feature_mask;

/// Pooled masked fraction over `draws` masks of a `side x side` grid, and
/// the number of tokens pooled.
pub fn pooled_fraction(ratio: f64, side: usize, draws: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut masked = 0;
    for _ in 0..draws {
        masked += make_feature_mask((side, side), ratio, &mut rng).unwrap().masked_count();
    }
    let n = side * side * draws;
    (masked as f64 / n as f64, n)
}
