//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export is a thin wrapper over a plain function so the logic is
//! testable natively.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use wasm_bindgen::prelude::*;

use crr_core::metrics::{auroc, average_precision, f1_max, pr_curve, roc_curve};
use crr_core::synthesis::{foreground_mask, SynthesisConfig, Synthesizer, TextureBank};
use crr_core::toy::{toy_image, toy_texture, ToyClass};
use crr_core::{Image, Mask};

/// RGBA pixels ready for `ImageData`.
#[wasm_bindgen]
pub struct Raster {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    note: String,
}

#[wasm_bindgen]
impl Raster {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    #[wasm_bindgen(getter)]
    pub fn pixels(&self) -> Vec<u8> {
        self.pixels.clone()
    }

    /// Short human-readable summary of what was drawn.
    #[wasm_bindgen(getter)]
    pub fn note(&self) -> String {
        self.note.clone()
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn rgba_of_image(img: &Image, y: usize, x: usize) -> [u8; 4] {
    let c = |k: usize| to_byte(img.get(y, x, k.min(img.channels - 1)));
    [c(0), c(1), c(2), 255]
}

fn rgba_of_mask(m: &Mask, y: usize, x: usize) -> [u8; 4] {
    let v = if m.get(y, x) { 255 } else { 0 };
    [v, v, v, 255]
}

/// `[normal | mask | anomalous]` for one toy image.
pub fn synthesis_panel(class: &str, size: usize, seed: u64, beta_min: f64) -> Result<Raster, String> {
    let class = match class {
        "stripes" => ToyClass::Stripes,
        "disk" => ToyClass::Disk,
        other => return Err(format!("unknown class `{other}`")),
    };
    if !(8..=256).contains(&size) {
        return Err("size must be in 8..=256".into());
    }
    let synth = Synthesizer::new(SynthesisConfig {
        beta_min,
        ..SynthesisConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = toy_image(class, size, &mut rng);
    let textures = TextureBank::new((0..8).map(|_| toy_texture(size, &mut rng)).collect());
    let fg = foreground_mask(&normal, class.foreground());
    let s = synth.synthesize(&normal, &fg, &textures, &mut rng).map_err(|e| e.to_string())?;
    let mut pixels = Vec::with_capacity(size * size * 3 * 4);
    for y in 0..size {
        for panel in 0..3 {
            for x in 0..size {
                pixels.extend(match panel {
                    0 => rgba_of_image(&s.normal, y, x),
                    1 => rgba_of_mask(&s.mask, y, x),
                    _ => rgba_of_image(&s.anomalous, y, x),
                });
            }
        }
    }
    Ok(Raster {
        width: 3 * size as u32,
        height: size as u32,
        pixels,
        note: format!("opacity {:.2}, anomalous area {:.1}%", s.beta, 100.0 * s.mask.fraction()),
    })
}

/// Token keep-mask drawn as `cell`-pixel squares: kept tokens light,
/// masked tokens dark.
pub fn mask_panel(grid: usize, ratio: f64, seed: u64, cell: usize) -> Result<Raster, String> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(format!("ratio {ratio} outside [0, 1]"));
    }
    if grid == 0 || cell == 0 || grid * cell > 2048 {
        return Err("grid and cell must be positive and the image at most 2048 px".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = Mask::from_fn(grid, grid, |_, _| rng.random::<f64>() >= ratio);
    let side = grid * cell;
    let mut pixels = Vec::with_capacity(side * side * 4);
    for y in 0..side {
        for x in 0..side {
            let border = y % cell == 0 || x % cell == 0;
            let rgba = match (keep.get(y / cell, x / cell), border) {
                (_, true) if cell > 3 => [40, 40, 40, 255],
                (true, _) => [230, 200, 120, 255],
                (false, _) => [30, 30, 60, 255],
            };
            pixels.extend(rgba);
        }
    }
    let masked = grid * grid - keep.count();
    Ok(Raster {
        width: side as u32,
        height: side as u32,
        pixels,
        note: format!(
            "{masked} of {} tokens masked ({:.1}%, expected {:.1}%)",
            grid * grid,
            100.0 * masked as f64 / (grid * grid) as f64,
            100.0 * ratio
        ),
    })
}

#[derive(Debug, Serialize)]
pub struct Curves {
    pub roc: Vec<(f64, f64)>,
    pub pr: Vec<(f64, f64)>,
    pub auroc: f64,
    pub ap: f64,
    pub f1_max: f64,
}

pub fn curves(scores: &[f64], labels: &[u8]) -> Result<Curves, String> {
    let labels: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let err = |e: crr_core::Error| e.to_string();
    Ok(Curves {
        roc: roc_curve(scores, &labels).map_err(err)?,
        pr: pr_curve(scores, &labels).map_err(err)?,
        auroc: auroc(scores, &labels).map_err(err)?,
        ap: average_precision(scores, &labels).map_err(err)?,
        f1_max: f1_max(scores, &labels).map_err(err)?,
    })
}

/// Scores for `normals` N(0, 1) samples followed by `anomalies`
/// N(`separation`, 1) samples.
pub fn gaussian_scores(normals: usize, anomalies: usize, separation: f64, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    let scores = (0..normals + anomalies)
        .map(|i| n.sample(&mut rng) + if i < normals { 0.0 } else { separation })
        .collect();
    let labels = (0..normals + anomalies).map(|i| u8::from(i >= normals)).collect();
    (scores, labels)
}

#[wasm_bindgen]
pub fn synthesis_preview(class: &str, size: u32, seed: u32, beta_min: f64) -> Result<Raster, JsError> {
    synthesis_panel(class, size as usize, seed as u64, beta_min).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn mask_preview(grid: u32, ratio: f64, seed: u32, cell: u32) -> Result<Raster, JsError> {
    mask_panel(grid as usize, ratio, seed as u64, cell as usize).map_err(|e| JsError::new(&e))
}

/// JSON `{roc, pr, auroc, ap, f1_max}` for explicit scores and 0/1 labels.
#[wasm_bindgen]
pub fn metric_curves(scores: Vec<f64>, labels: Vec<u8>) -> Result<String, JsError> {
    let c = curves(&scores, &labels).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&c).map_err(|e| JsError::new(&e.to_string()))
}

/// Same as [`metric_curves`] on two overlapping Gaussian score clouds.
#[wasm_bindgen]
pub fn gaussian_metric_curves(normals: u32, anomalies: u32, separation: f64, seed: u32) -> Result<String, JsError> {
    let (s, l) = gaussian_scores(normals as usize, anomalies as usize, separation, seed as u64);
    metric_curves(s, l)
}
