use serde::{Deserialize, Serialize};

/// TrivialAugment operations on planar `(K, H, W)` images in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaOp {
    Identity,
    /// Degrees about the image center.
    Rotate,
    ShearX,
    ShearY,
    /// Pixels; positive moves content right.
    TranslateX,
    /// Pixels; positive moves content down.
    TranslateY,
    Brightness,
    Contrast,
    Sharpness,
    AutoContrast,
    Equalize,
    /// Bits kept per 8-bit value, rounded to an integer in 1..=8.
    Posterize,
    /// Values at or above the threshold are inverted.
    Solarize,
    /// Saturation; three-channel images only.
    Color,
}

impl TaOp {
    pub fn needs_color(self) -> bool {
        matches!(self, TaOp::Color)
    }

    /// Default magnitude range.
    pub fn default_range(self) -> (f64, f64) {
        match self {
            TaOp::Rotate => (-30.0, 30.0),
            TaOp::ShearX | TaOp::ShearY => (-0.3, 0.3),
            TaOp::TranslateX | TaOp::TranslateY => (-32.0, 32.0),
            TaOp::Brightness | TaOp::Contrast | TaOp::Sharpness | TaOp::Color => (-0.4, 0.4),
            TaOp::Posterize => (2.0, 8.0),
            TaOp::Solarize => (0.0, 1.0),
            TaOp::Identity | TaOp::AutoContrast | TaOp::Equalize => (0.0, 0.0),
        }
    }
}

/// Applies `op` with magnitude `m` to one image in place and clamps to `[0, 1]`.
pub fn apply_op(op: TaOp, m: f64, img: &mut [f64], k: usize, h: usize, w: usize) {
    debug_assert_eq!(img.len(), k * h * w);
    match op {
        TaOp::Identity => return,
        TaOp::Rotate => {
            let (s, c) = m.to_radians().sin_cos();
            let (cx, cy) = center(h, w);
            warp(img, k, h, w, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + c * dx - s * dy, cy + s * dx + c * dy)
            });
        }
        TaOp::ShearX => {
            let (_, cy) = center(h, w);
            warp(img, k, h, w, |x, y| (x + m * (y - cy), y));
        }
        TaOp::ShearY => {
            let (cx, _) = center(h, w);
            warp(img, k, h, w, |x, y| (x, y + m * (x - cx)));
        }
        TaOp::TranslateX => shift(img, k, h, w, m.round() as i64, 0),
        TaOp::TranslateY => shift(img, k, h, w, 0, m.round() as i64),
        TaOp::Brightness => img.iter_mut().for_each(|v| *v *= 1.0 + m),
        TaOp::Contrast => {
            let mean = img.iter().sum::<f64>() / img.len().max(1) as f64;
            img.iter_mut().for_each(|v| *v = mean + (*v - mean) * (1.0 + m));
        }
        TaOp::Sharpness => {
            for plane in img.chunks_mut(h * w) {
                sharpen(plane, h, w, 1.0 + m);
            }
        }
        TaOp::AutoContrast => {
            for plane in img.chunks_mut(h * w) {
                let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    plane.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
                }
            }
        }
        TaOp::Equalize => {
            for plane in img.chunks_mut(h * w) {
                equalize(plane);
            }
        }
        TaOp::Posterize => {
            let bits = m.round().clamp(1.0, 8.0) as u32;
            let mask = 0xFFu8 << (8 - bits);
            img.iter_mut()
                .for_each(|v| *v = f64::from(crate::binimg::quantize(*v) & mask) / 255.0);
        }
        TaOp::Solarize => img.iter_mut().for_each(|v| {
            if *v >= m {
                *v = 1.0 - *v;
            }
        }),
        TaOp::Color => {
            if k == 3 {
                let n = h * w;
                for i in 0..n {
                    let gray = 0.299 * img[i] + 0.587 * img[n + i] + 0.114 * img[2 * n + i];
                    for c in 0..3 {
                        let v = &mut img[c * n + i];
                        *v = gray + (*v - gray) * (1.0 + m);
                    }
                }
            }
        }
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

fn center(h: usize, w: usize) -> (f64, f64) {
    ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)
}

/// Inverse-maps every output pixel through `src` and samples bilinearly,
/// reading 0 outside the image.
fn warp(img: &mut [f64], k: usize, h: usize, w: usize, src: impl Fn(f64, f64) -> (f64, f64)) {
    let input = img.to_vec();
    let at = |plane: &[f64], x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            plane[y as usize * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = src(x as f64, y as f64);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..k {
                let plane = &input[c * h * w..(c + 1) * h * w];
                let top = (1.0 - fx) * at(plane, x0, y0) + fx * at(plane, x0 + 1, y0);
                let bottom = (1.0 - fx) * at(plane, x0, y0 + 1) + fx * at(plane, x0 + 1, y0 + 1);
                img[c * h * w + y * w + x] = (1.0 - fy) * top + fy * bottom;
            }
        }
    }
}

fn shift(img: &mut [f64], k: usize, h: usize, w: usize, dx: i64, dy: i64) {
    let input = img.to_vec();
    img.fill(0.0);
    for c in 0..k {
        for y in 0..h as i64 {
            let sy = y - dy;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for x in 0..w as i64 {
                let sx = x - dx;
                if sx >= 0 && sx < w as i64 {
                    let plane = c * h * w;
                    img[plane + (y as usize) * w + x as usize] = input[plane + (sy as usize) * w + sx as usize];
                }
            }
        }
    }
}

/// Blends with a 3x3 smoothing filter (center weight 5); border pixels keep
/// their value.
fn sharpen(plane: &mut [f64], h: usize, w: usize, factor: f64) {
    if h < 3 || w < 3 {
        return;
    }
    let input = plane.to_vec();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 4.0 * input[y * w + x];
            for yy in y - 1..=y + 1 {
                for xx in x - 1..=x + 1 {
                    acc += input[yy * w + xx];
                }
            }
            let smooth = acc / 13.0;
            let v = input[y * w + x];
            plane[y * w + x] = smooth + (v - smooth) * factor;
        }
    }
}

/// Histogram equalization over 256 levels.
fn equalize(plane: &mut [f64]) {
    let levels: Vec<u8> = plane.iter().map(|&v| crate::binimg::quantize(v)).collect();
    let mut hist = [0usize; 256];
    for &l in &levels {
        hist[l as usize] += 1;
    }
    let last = hist.iter().rev().find(|&&n| n > 0).copied().unwrap_or(0);
    let step = (levels.len() - last) / 255;
    if step == 0 {
        return;
    }
    let mut lut = [0u8; 256];
    let mut n = step / 2;
    for (i, entry) in lut.iter_mut().enumerate() {
        *entry = (n / step).min(255) as u8;
        n += hist[i];
    }
    for (v, &l) in plane.iter_mut().zip(&levels) {
        *v = f64::from(lut[l as usize]) / 255.0;
    }
}
