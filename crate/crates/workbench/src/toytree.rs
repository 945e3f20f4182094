//! Writes the procedural toy corpus as an MVTec-style tree, so every
//! command can be exercised without downloading a benchmark.

use std::path::Path;

use crr_core::toy::ToyClass;
use crr_core::synthesis::ForegroundMethod;
use crr_model::experiment::toy_data;
use crr_model::CrrConfig;

use crate::dataset::NORMAL_DIR;
use crate::error::Result;
use crate::imageio::{save_image, save_mask};

pub const ANOMALY_DIR: &str = "synthetic";

#[derive(Clone, Copy, Debug)]
pub struct ToyCounts {
    pub train: usize,
    pub test_normal: usize,
    pub test_anomalous: usize,
}

/// Creates `<out>/data`, `<out>/textures` and `<out>/config.toml`; the
/// config is `base` pointed at the new tree.
pub fn write_toy_tree(base: &CrrConfig, counts: ToyCounts, seed: u64, out: &Path) -> Result<CrrConfig> {
    let data = toy_data(base, counts.train, counts.test_normal, counts.test_anomalous, seed)?;
    let root = out.join("data");
    for (i, item) in data.train.items.iter().enumerate() {
        let p = root.join(&item.class).join("train").join(NORMAL_DIR).join(format!("{i:04}.png"));
        save_image(&item.image, &p)?;
    }
    for (i, t) in data.test.iter().enumerate() {
        let class = root.join(&t.class);
        if t.is_anomalous() {
            save_image(&t.image, &class.join("test").join(ANOMALY_DIR).join(format!("{i:04}.png")))?;
            save_mask(&t.mask, &class.join("ground_truth").join(ANOMALY_DIR).join(format!("{i:04}_mask.png")))?;
        } else {
            save_image(&t.image, &class.join("test").join(NORMAL_DIR).join(format!("{i:04}.png")))?;
        }
    }
    let textures = out.join("textures");
    for (i, img) in data.textures.images().iter().enumerate() {
        save_image(img, &textures.join(format!("{i:03}.png")))?;
    }
    let mut config = base.clone();
    config.dataset.root = Some(root);
    config.dataset.textures = Some(textures);
    for c in ToyClass::ALL {
        if c.foreground() == ForegroundMethod::Full {
            config.synthesis.foreground.insert(c.name().to_string(), ForegroundMethod::Full);
        }
    }
    config.save(&out.join("config.toml"))?;
    Ok(config)
}
