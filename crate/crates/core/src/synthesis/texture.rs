//! Texture sources for anomaly blending.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::image::Image;
use crate::resize::resize_image;

/// Auxiliary texture images. When empty, textures are derived from the
/// normal image itself by [`self_augment`].
#[derive(Clone, Debug, Default)]
pub struct TextureBank {
    images: Vec<Image>,
}

impl TextureBank {
    pub fn new(images: Vec<Image>) -> Self {
        Self { images }
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Texture with the same shape as `target`.
    pub fn pick<R: Rng + ?Sized>(&self, target: &Image, rng: &mut R) -> Image {
        if self.images.is_empty() {
            return self_augment(target, rng);
        }
        let src = &self.images[rng.random_range(0..self.images.len())];
        let src = match_channels(src, target.channels);
        let t = rotate_flip(&src, rng.random_range(0..8));
        color_jitter(resize_image(&t, target.height, target.width), rng)
    }
}

fn match_channels(img: &Image, channels: usize) -> Image {
    if img.channels == channels {
        return img.clone();
    }
    Image::from_fn(img.height, img.width, channels, |y, x, c| {
        if img.channels == 1 {
            img.get(y, x, 0)
        } else if channels == 1 {
            img.pixel(y, x).iter().sum::<f32>() / img.channels as f32
        } else {
            img.get(y, x, c.min(img.channels - 1))
        }
    })
}

/// One of the eight dihedral transforms: bit 0 flips horizontally, bits 1-2
/// select a quarter-turn count.
fn rotate_flip(img: &Image, code: u32) -> Image {
    let flipped = if code & 1 == 1 {
        Image::from_fn(img.height, img.width, img.channels, |y, x, c| {
            img.get(y, img.width - 1 - x, c)
        })
    } else {
        img.clone()
    };
    let mut out = flipped;
    for _ in 0..(code >> 1) {
        let src = out;
        out = Image::from_fn(src.width, src.height, src.channels, |y, x, c| {
            src.get(src.height - 1 - x, y, c)
        });
    }
    out
}

fn color_jitter<R: Rng + ?Sized>(mut img: Image, rng: &mut R) -> Image {
    let mut ops = [0u8, 1, 2, 3, 4];
    ops.shuffle(rng);
    for &op in &ops[..2] {
        match op {
            0 => {
                for v in &mut img.data {
                    *v = 1.0 - *v;
                }
            }
            1 => {
                let gain: f32 = rng.random_range(0.5..1.6);
                for v in &mut img.data {
                    *v *= gain;
                }
            }
            2 => {
                let c = img.channels;
                if c > 1 {
                    let shift = rng.random_range(1..c);
                    for px in img.data.chunks_exact_mut(c) {
                        px.rotate_left(shift);
                    }
                }
            }
            3 => {
                let levels = rng.random_range(2..5) as f32;
                for v in &mut img.data {
                    *v = (*v * levels).floor() / levels;
                }
            }
            _ => {
                let t: f32 = rng.random_range(0.3..0.7);
                for v in &mut img.data {
                    if *v > t {
                        *v = 1.0 - *v;
                    }
                }
            }
        }
    }
    img.clamp01()
}

/// Texture cut from the image itself: a random square crop stretched to full
/// size, a random dihedral transform and two random colour operations.
pub fn self_augment<R: Rng + ?Sized>(img: &Image, rng: &mut R) -> Image {
    let side_max = img.height.min(img.width);
    let side = rng.random_range((side_max / 4).max(1)..=side_max);
    let oy = rng.random_range(0..=img.height - side);
    let ox = rng.random_range(0..=img.width - side);
    let crop = Image::from_fn(side, side, img.channels, |y, x, c| img.get(y + oy, x + ox, c));
    let stretched = resize_image(&crop, img.height, img.width);
    let code = if img.height == img.width {
        rng.random_range(0..8)
    } else {
        rng.random_range(0..2) * 4 + rng.random_range(0..2)
    };
    color_jitter(rotate_flip(&stretched, code), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dihedral_group_closes() {
        let img = Image::from_fn(3, 3, 1, |y, x, _| (y * 3 + x) as f32);
        for code in 0..8 {
            let t = rotate_flip(&img, code);
            let mut v = t.data.clone();
            v.sort_by(f32::total_cmp);
            assert_eq!(v, img.data);
        }
        let four = (0..4).fold(img.clone(), |acc, _| rotate_flip(&acc, 2));
        assert_eq!(four, img);
    }

    #[test]
    fn textures_match_target_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = Image::from_fn(12, 20, 3, |y, x, c| ((y + x + c) % 7) as f32 / 7.0);
        let t = self_augment(&target, &mut rng);
        assert!(t.same_shape(&target));
        let bank = TextureBank::new(vec![Image::filled(5, 9, 1, 0.3)]);
        let t = bank.pick(&target, &mut rng);
        assert!(t.same_shape(&target));
        assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
