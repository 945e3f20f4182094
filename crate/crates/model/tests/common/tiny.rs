use crr_model::experiment::{toy_data, ToyData};
use crr_model::CrrConfig;

use super::gradcheck::tiny_spec;

/// Toy config shrunk to a 12-pixel input so a few iterations take
/// milliseconds.
pub fn tiny_config(seed: u64) -> CrrConfig {
    let mut cfg = CrrConfig::toy();
    cfg.backbone = tiny_spec(seed);
    cfg.trainer.seed = seed;
    cfg.trainer.stage1.iterations = 3;
    cfg.trainer.stage1.batch_size = 2;
    cfg.trainer.stage2.iterations = 3;
    cfg.trainer.stage2.batch_size = 2;
    cfg
}

pub fn tiny_data(cfg: &CrrConfig, seed: u64) -> ToyData {
    toy_data(cfg, 6, 2, 2, seed).unwrap()
}
