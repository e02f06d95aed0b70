//! Independent reference implementations used by the integration tests.
//!
//! Each oracle is written from the defining formula, in the most direct form
//! available, and shares no code with the library. `gradcheck` drives the
//! library's graph and compares it against central differences.

#![allow(dead_code)]

pub mod gradcheck;

use std::f64::consts::PI;

use malimg_core::binimg::Region;

// ---------------------------------------------------------------------------
// Lanczos resampling
// ---------------------------------------------------------------------------

fn lanczos3(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= 3.0 {
        return 0.0;
    }
    let a = PI * x;
    let b = PI * x / 3.0;
    (a.sin() / a) * (b.sin() / b)
}

/// Non-separable 2-D Lanczos-3 resample of one channel, summing the full
/// tensor-product kernel over every source position (edge-clamped).
pub fn lanczos_2d(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let fy = sy.max(1.0);
    let fx = sx.max(1.0);
    let reach_y = (3.0 * fy).ceil() as i64 + 2;
    let reach_x = (3.0 * fx).ceil() as i64 + 2;
    let mut out = vec![0.0; out_h * out_w];
    for oy in 0..out_h {
        let cy = (oy as f64 + 0.5) * sy;
        for ox in 0..out_w {
            let cx = (ox as f64 + 0.5) * sx;
            let mut acc = 0.0;
            let mut norm = 0.0;
            for iy in (cy.floor() as i64 - reach_y)..=(cy.ceil() as i64 + reach_y) {
                let wy = lanczos3((iy as f64 + 0.5 - cy) / fy);
                if wy == 0.0 {
                    continue;
                }
                let yy = iy.clamp(0, h as i64 - 1) as usize;
                for ix in (cx.floor() as i64 - reach_x)..=(cx.ceil() as i64 + reach_x) {
                    let wx = lanczos3((ix as f64 + 0.5 - cx) / fx);
                    if wx == 0.0 {
                        continue;
                    }
                    let xx = ix.clamp(0, w as i64 - 1) as usize;
                    acc += wy * wx * src[yy * w + xx];
                    norm += wy * wx;
                }
            }
            out[oy * out_w + ox] = (acc / norm).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

// ---------------------------------------------------------------------------
// Schedule-free AdamW
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SfParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Straight-line transcription of the update. Keeps the whole step-size
/// history and re-sums it every step.
pub struct SfReference {
    pub p: SfParams,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub v: Vec<f64>,
    pub lrs: Vec<f64>,
}

impl SfReference {
    pub fn new(p: SfParams, theta0: &[f64]) -> Self {
        Self {
            p,
            x: theta0.to_vec(),
            z: theta0.to_vec(),
            v: vec![0.0; theta0.len()],
            lrs: Vec::new(),
        }
    }

    pub fn lr(&self, t: u64) -> f64 {
        if self.p.warmup == 0 || t >= self.p.warmup {
            self.p.lr
        } else {
            self.p.lr * t as f64 / self.p.warmup as f64
        }
    }

    pub fn y(&self) -> Vec<f64> {
        let b = self.p.beta1;
        (0..self.x.len())
            .map(|i| (1.0 - b) * self.z[i] + b * self.x[i])
            .collect()
    }

    pub fn step(&mut self, g: &[f64]) {
        let t = self.lrs.len() as u64 + 1;
        let lr = self.lr(t);
        self.lrs.push(lr);
        let denom: f64 = self.lrs.iter().map(|a| a * a).sum();
        let c = lr * lr / denom;
        let y = self.y();
        for i in 0..self.x.len() {
            self.v[i] = self.p.beta2 * self.v[i] + (1.0 - self.p.beta2) * g[i] * g[i];
            let vhat = self.v[i] / (1.0 - self.p.beta2.powi(t as i32));
            self.z[i] -= lr * g[i] / (vhat.sqrt() + self.p.eps) + lr * self.p.weight_decay * y[i];
            self.x[i] = (1.0 - c) * self.x[i] + c * self.z[i];
        }
    }
}

// ---------------------------------------------------------------------------
// Classification metrics
// ---------------------------------------------------------------------------

/// Per-class precision, recall and F1 counted directly from label lists,
/// then their unweighted means.
pub fn brute_prf(preds: &[usize], truths: &[usize], classes: usize) -> (f64, f64, f64) {
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut f_sum = 0.0;
    for k in 0..classes {
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fnn = 0u64;
        for (&p, &t) in preds.iter().zip(truths) {
            match (p == k, t == k) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fnn += 1,
                _ => {}
            }
        }
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let r = if tp + fnn == 0 {
            0.0
        } else {
            tp as f64 / (tp + fnn) as f64
        };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let c = classes as f64;
    (p_sum / c, r_sum / c, f_sum / c)
}

/// One-vs-rest AUC of `class` by counting every positive/negative pair
/// (ties count one half). `None` when a side is empty.
pub fn pair_auc(scores: &[f64], classes: usize, truths: &[usize], class: usize) -> Option<f64> {
    let pos: Vec<f64> = (0..truths.len())
        .filter(|&i| truths[i] == class)
        .map(|i| scores[i * classes + class])
        .collect();
    let neg: Vec<f64> = (0..truths.len())
        .filter(|&i| truths[i] != class)
        .map(|i| scores[i * classes + class])
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

pub fn pair_auc_macro(scores: &[f64], classes: usize, truths: &[usize]) -> Option<f64> {
    let defined: Vec<f64> = (0..classes)
        .filter_map(|c| pair_auc(scores, classes, truths, c))
        .collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

// ---------------------------------------------------------------------------
// Pyramid fusion
// ---------------------------------------------------------------------------

/// Feature map `(c, h, w)` for a single example.
#[derive(Debug, Clone)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// 1x1 convolution: `out[o] = bias[o] + sum_i weight[o][i] * in[i]`.
pub fn pointwise(m: &Map, weight: &[f64], bias: &[f64]) -> Map {
    let out_c = bias.len();
    let mut data = vec![0.0; out_c * m.h * m.w];
    for o in 0..out_c {
        for y in 0..m.h {
            for x in 0..m.w {
                let mut acc = bias[o];
                for i in 0..m.c {
                    acc += weight[o * m.c + i] * m.at(i, y, x);
                }
                data[(o * m.h + y) * m.w + x] = acc;
            }
        }
    }
    Map {
        c: out_c,
        h: m.h,
        w: m.w,
        data,
    }
}

/// Top-down pyramid: the coarsest level is its lateral projection, every
/// finer level adds its lateral to the nearest-neighbour 2x upsample of the
/// level above.
pub fn fpn_reference(c: &[Map; 4], lat: &[(Vec<f64>, Vec<f64>); 4]) -> [Map; 4] {
    let p5 = pointwise(&c[3], &lat[3].0, &lat[3].1);
    let mut out = vec![p5];
    for i in (0..3).rev() {
        let l = pointwise(&c[i], &lat[i].0, &lat[i].1);
        let above = out.last().unwrap();
        let mut data = l.data.clone();
        for ch in 0..l.c {
            for y in 0..l.h {
                for x in 0..l.w {
                    data[(ch * l.h + y) * l.w + x] += above.at(ch, y / 2, x / 2);
                }
            }
        }
        out.push(Map { data, ..l });
    }
    out.reverse();
    [out[0].clone(), out[1].clone(), out[2].clone(), out[3].clone()]
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

pub const FD_STEP: f64 = 1e-4;

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

pub fn fixture_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Parses a hex dump: `#` starts a comment, an optional `offset:` prefix is
/// ignored, remaining tokens are byte pairs.
pub fn parse_hex_dump(text: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap();
        let body = match line.split_once(':') {
            Some((_, rest)) => rest,
            None => line,
        };
        for tok in body.split_whitespace() {
            out.push(u8::from_str_radix(tok, 16).expect("hex byte"));
        }
    }
    out
}

pub fn fixture_bytes() -> Vec<u8> {
    parse_hex_dump(&std::fs::read_to_string(fixture_path("dex_small.hex")).unwrap())
}

/// Region of every offset in the fixture, read off its annotations.
pub fn fixture_region(offset: usize) -> Region {
    match offset {
        0x00..=0x6f => Region::Header,
        0x70..=0xa3 => Region::Identifiers,
        0xa4..=0xe3 => Region::ClassDefs,
        _ => Region::Data,
    }
}

pub fn fixture_channel(offset: usize) -> usize {
    match fixture_region(offset) {
        Region::Header | Region::Identifiers => 0,
        Region::ClassDefs => 1,
        Region::Data => 2,
    }
}

/// Expected conversion of the fixture built from the oracles alone.
pub fn oracle_image(bytes: &[u8], channels: usize, size: usize) -> Vec<u8> {
    let (w, h) = (32, bytes.len().div_ceil(32));
    let mut planes = vec![vec![0.0; h * w]; channels];
    for (i, &b) in bytes.iter().enumerate() {
        let c = if channels == 3 { fixture_channel(i) } else { 0 };
        planes[c][i] = b as f64 / 255.0;
    }
    let resized: Vec<Vec<f64>> = planes.iter().map(|p| lanczos_2d(p, h, w, size, size)).collect();
    let mut out = Vec::with_capacity(size * size * channels);
    for i in 0..size * size {
        for plane in &resized {
            out.push(to_u8(plane[i]));
        }
    }
    out
}

pub fn oracle_png(pixels: &[u8], channels: usize, size: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, size as u32, size as u32);
        enc.set_color(if channels == 3 {
            png::ColorType::Rgb
        } else {
            png::ColorType::Grayscale
        });
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::NoFilter);
        enc.write_header().unwrap().write_image_data(pixels).unwrap();
    }
    buf
}

pub const GOLDENS: [(&str, usize, usize); 2] = [("dex_small_gray_16.png", 1, 16), ("dex_small_rgb_32.png", 3, 32)];
