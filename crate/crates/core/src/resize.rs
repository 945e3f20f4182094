//! Half-pixel-centred bilinear and nearest-neighbour resampling plus
//! centre cropping. Bilinear weights follow the `align_corners = false`
//! convention so that the same interpolation matrices can be reused by the
//! tensor code paths.

use crate::image::{Grid, Image, Mask};

/// Per output index: (lower source index, upper source index, upper weight).
pub fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let w1 = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, w1)
        })
        .collect()
}

/// Dense (out_len x in_len) row-major interpolation matrix; rows sum to 1.
pub fn interpolation_matrix(in_len: usize, out_len: usize) -> Vec<f64> {
    let mut m = vec![0.0; out_len * in_len];
    for (o, (i0, i1, w1)) in bilinear_taps(in_len, out_len).into_iter().enumerate() {
        m[o * in_len + i0] += 1.0 - w1;
        m[o * in_len + i1] += w1;
    }
    m
}

pub fn resize_grid(grid: &Grid, out_h: usize, out_w: usize) -> Grid {
    if grid.height == out_h && grid.width == out_w {
        return grid.clone();
    }
    let ty = bilinear_taps(grid.height, out_h);
    let tx = bilinear_taps(grid.width, out_w);
    let mut values = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, wy) in &ty {
        for &(x0, x1, wx) in &tx {
            let top = grid.get(y0, x0) * (1.0 - wx) + grid.get(y0, x1) * wx;
            let bottom = grid.get(y1, x0) * (1.0 - wx) + grid.get(y1, x1) * wx;
            values.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    Grid {
        height: out_h,
        width: out_w,
        values,
    }
}

pub fn resize_image(img: &Image, out_h: usize, out_w: usize) -> Image {
    if img.height == out_h && img.width == out_w {
        return img.clone();
    }
    let ty = bilinear_taps(img.height, out_h);
    let tx = bilinear_taps(img.width, out_w);
    let c = img.channels;
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, wy) in &ty {
        let (wy, vy) = (wy as f32, 1.0 - wy as f32);
        for &(x0, x1, wx) in &tx {
            let (wx, vx) = (wx as f32, 1.0 - wx as f32);
            for ch in 0..c {
                let top = img.get(y0, x0, ch) * vx + img.get(y0, x1, ch) * wx;
                let bottom = img.get(y1, x0, ch) * vx + img.get(y1, x1, ch) * wx;
                data.push(top * vy + bottom * wy);
            }
        }
    }
    Image {
        height: out_h,
        width: out_w,
        channels: c,
        data,
    }
}

fn nearest_index(o: usize, in_len: usize, out_len: usize) -> usize {
    (((o as f64 + 0.5) * in_len as f64 / out_len as f64).floor() as usize).min(in_len - 1)
}

pub fn resize_mask_nearest(mask: &Mask, out_h: usize, out_w: usize) -> Mask {
    if mask.height == out_h && mask.width == out_w {
        return mask.clone();
    }
    Mask::from_fn(out_h, out_w, |y, x| {
        mask.get(
            nearest_index(y, mask.height, out_h),
            nearest_index(x, mask.width, out_w),
        )
    })
}

/// Output size after scaling the shorter side to `target`, aspect preserved.
pub fn shorter_side_size(height: usize, width: usize, target: usize) -> (usize, usize) {
    if height <= width {
        let w = ((width as f64 * target as f64 / height as f64).round() as usize).max(target);
        (target, w)
    } else {
        let h = ((height as f64 * target as f64 / width as f64).round() as usize).max(target);
        (h, target)
    }
}

fn crop_origin(len: usize, size: usize) -> usize {
    len.saturating_sub(size) / 2
}

pub fn center_crop_image(img: &Image, size: usize) -> Image {
    let (oy, ox) = (crop_origin(img.height, size), crop_origin(img.width, size));
    let (h, w) = (size.min(img.height), size.min(img.width));
    Image::from_fn(h, w, img.channels, |y, x, c| img.get(y + oy, x + ox, c))
}

pub fn center_crop_mask(mask: &Mask, size: usize) -> Mask {
    let (oy, ox) = (crop_origin(mask.height, size), crop_origin(mask.width, size));
    let (h, w) = (size.min(mask.height), size.min(mask.width));
    Mask::from_fn(h, w, |y, x| mask.get(y + oy, x + ox))
}
