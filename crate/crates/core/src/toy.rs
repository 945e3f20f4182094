//! Procedural two-category corpus for desk-scale training runs.
//!
//! `stripes` is a texture category (oriented sinusoidal weave filling the
//! frame), `disk` an object category (ringed disk on a dark background).
//! Normal images of a category vary only in phase, position and sensor
//! noise, so anything pasted in by the synthesizer is out of distribution.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::image::Image;
use crate::synthesis::ForegroundMethod;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToyClass {
    Stripes,
    Disk,
}

impl ToyClass {
    pub const ALL: [ToyClass; 2] = [ToyClass::Stripes, ToyClass::Disk];

    pub fn name(self) -> &'static str {
        match self {
            ToyClass::Stripes => "stripes",
            ToyClass::Disk => "disk",
        }
    }

    pub fn foreground(self) -> ForegroundMethod {
        match self {
            ToyClass::Stripes => ForegroundMethod::Full,
            ToyClass::Disk => ForegroundMethod::Threshold,
        }
    }
}

const NOISE_STD: f32 = 0.02;

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// One normal RGB image of `class`, `size x size`.
pub fn toy_image<R: Rng + ?Sized>(class: ToyClass, size: usize, rng: &mut R) -> Image {
    let noise = Normal::new(0.0f32, NOISE_STD).expect("finite std");
    let s = size as f32;
    let mut img = match class {
        ToyClass::Stripes => {
            let angle = 0.5 + rng.random_range(-0.05f32..0.05);
            let freq = 3.0 + rng.random_range(-0.1f32..0.1);
            let phase = rng.random_range(0.0f32..std::f32::consts::TAU);
            let (dir_y, dir_x) = (angle.sin(), angle.cos());
            let (a, b) = ([0.20, 0.35, 0.60], [0.85, 0.80, 0.55]);
            Image::from_fn(size, size, 3, |y, x, c| {
                let u = (y as f32 * dir_y + x as f32 * dir_x) / s;
                let v = (y as f32 * dir_x - x as f32 * dir_y) / s;
                let t = 0.5 + 0.35 * (std::f32::consts::TAU * freq * u + phase).sin()
                    + 0.15 * (std::f32::consts::TAU * 2.0 * freq * v).sin();
                mix(a, b, t.clamp(0.0, 1.0))[c]
            })
        }
        ToyClass::Disk => {
            let cy = s / 2.0 + rng.random_range(-0.04..0.04) * s;
            let cx = s / 2.0 + rng.random_range(-0.04..0.04) * s;
            let radius = s * (0.33 + rng.random_range(-0.01..0.01));
            let ring_phase = rng.random_range(0.0f32..std::f32::consts::TAU);
            let (inner, outer) = ([0.95, 0.65, 0.25], [0.70, 0.35, 0.10]);
            Image::from_fn(size, size, 3, |y, x, c| {
                let dy = y as f32 + 0.5 - cy;
                let dx = x as f32 + 0.5 - cx;
                let r = (dy * dy + dx * dx).sqrt();
                if r > radius {
                    0.05
                } else {
                    let rings = 0.5 + 0.5 * (r / radius * 10.0 + ring_phase).sin();
                    mix(inner, outer, 0.6 * r / radius + 0.4 * rings)[c]
                }
            })
        }
    };
    for v in &mut img.data {
        *v = (*v + noise.sample(rng)).clamp(0.0, 1.0);
    }
    img
}

/// Procedural stand-ins for a describable-texture corpus: checkerboards,
/// dot fields and colour-noise blobs in saturated colours unrelated to the
/// toy categories.
pub fn toy_texture<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Image {
    let a: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let b: [f32; 3] = [rng.random(), rng.random(), rng.random()];
    let kind = rng.random_range(0..3u8);
    let cell = rng.random_range(3.0f32..9.0);
    let (oy, ox) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
    let fx = rng.random_range(0.5f32..2.0);
    let fy = rng.random_range(0.5f32..2.0);
    Image::from_fn(size, size, 3, |y, x, c| {
        let (yf, xf) = (y as f32 + oy, x as f32 + ox);
        let t = match kind {
            0 => (((yf / cell).floor() + (xf / cell).floor()) as i64).rem_euclid(2) as f32,
            1 => {
                let (dy, dx) = (yf % cell - cell / 2.0, xf % cell - cell / 2.0);
                f32::from(dy * dy + dx * dx < cell * cell / 8.0)
            }
            _ => 0.5 + 0.5 * (fy * yf / cell).sin() * (fx * xf / cell).cos(),
        };
        mix(a, b, t)[c]
    })
}

/// Pooled multi-class image list, class-major, `per_class` images each.
pub fn toy_corpus<R: Rng + ?Sized>(
    per_class: usize,
    size: usize,
    rng: &mut R,
) -> Vec<(ToyClass, Image)> {
    ToyClass::ALL
        .iter()
        .flat_map(|&c| (0..per_class).map(move |_| c).collect::<Vec<_>>())
        .map(|c| (c, toy_image(c, size, rng)))
        .collect()
}
