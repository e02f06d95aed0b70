use std::f64::consts::PI;

use super::{BinImgError, ImageTensor, Result};

/// Lobes of the Lanczos window.
pub const LANCZOS_SUPPORT: f64 = 3.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let a = PI * x;
        a.sin() / a
    }
}

/// Lanczos-3 kernel `sinc(x) * sinc(x / 3)` on `|x| < 3`.
pub fn lanczos3(x: f64) -> f64 {
    if x.abs() < LANCZOS_SUPPORT {
        sinc(x) * sinc(x / LANCZOS_SUPPORT)
    } else {
        0.0
    }
}

/// Normalized taps for one output coordinate: `(first source index, weights)`.
/// Source indices outside `[0, n_in)` are clamped to the edge.
struct Taps {
    indices: Vec<usize>,
    weights: Vec<f64>,
}

fn axis_taps(n_in: usize, n_out: usize) -> Vec<Taps> {
    let scale = n_in as f64 / n_out as f64;
    // Widen the kernel when minifying so it acts as a low-pass filter.
    let filter_scale = scale.max(1.0);
    let support = LANCZOS_SUPPORT * filter_scale;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let left = (center - support).floor() as i64;
            let right = (center + support).ceil() as i64;
            let mut indices = Vec::with_capacity((right - left) as usize);
            let mut weights = Vec::with_capacity((right - left) as usize);
            for i in left..right {
                let w = lanczos3((i as f64 + 0.5 - center) / filter_scale);
                if w != 0.0 {
                    indices.push(i.clamp(0, n_in as i64 - 1) as usize);
                    weights.push(w);
                }
            }
            let sum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= sum;
            }
            Taps { indices, weights }
        })
        .collect()
}

/// Separable Lanczos-3 resampling of every channel, clamped to `[0, 1]`.
pub fn lanczos_resize(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(BinImgError::InvalidDimensions(format!(
            "target {out_h}x{out_w} must be positive"
        )));
    }
    if img.height == 0 || img.width == 0 {
        return Err(BinImgError::InvalidDimensions("source image is empty".into()));
    }
    let (in_h, in_w) = (img.height, img.width);
    let x_taps = axis_taps(in_w, out_w);
    let y_taps = axis_taps(in_h, out_h);

    let mut out = ImageTensor::zeros(img.channels, out_h, out_w);
    let mut rows = vec![0.0; in_h * out_w];
    for c in 0..img.channels {
        let src = img.plane(c);
        for y in 0..in_h {
            let line = &src[y * in_w..(y + 1) * in_w];
            for (x, taps) in x_taps.iter().enumerate() {
                rows[y * out_w + x] = taps.indices.iter().zip(&taps.weights).map(|(&i, &w)| line[i] * w).sum();
            }
        }
        let dst = out.plane_mut(c);
        for (y, taps) in y_taps.iter().enumerate() {
            let out_row = &mut dst[y * out_w..(y + 1) * out_w];
            for (&i, &w) in taps.indices.iter().zip(&taps.weights) {
                let src_row = &rows[i * out_w..(i + 1) * out_w];
                for (o, s) in out_row.iter_mut().zip(src_row) {
                    *o += s * w;
                }
            }
            for o in out_row.iter_mut() {
                *o = o.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}
