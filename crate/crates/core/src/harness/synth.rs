//! Synthetic DEX-like corpus for smoke tests and desk-scale checks.
//!
//! Every file has a well-formed DEX header, identifier tables and class
//! definitions filled with plausible values, followed by a data section whose
//! byte texture depends only on the class. Files go through the regular
//! conversion path and are written as a `<split>/<class>/<name>.png` tree.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Split;
use super::{HarnessError, Result};
use crate::augment::rng_stream;
use crate::binimg::{convert, write_png, WidthRule, DEX_HEADER_LEN};

/// Data-section textures, one per class.
pub const TEXTURES: [&str; 5] = ["noise", "sawtooth", "spikes", "runs", "period7"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Side length of the written images.
    pub size: usize,
    /// 3 writes section-colored images, 1 grayscale.
    pub channels: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: TEXTURES.len(),
            train_per_class: 200,
            val_per_class: 40,
            test_per_class: 40,
            size: 64,
            channels: 3,
            seed: 0,
        }
    }
}

fn put_u32(bytes: &mut [u8], at: usize, v: usize) {
    bytes[at..at + 4].copy_from_slice(&(v as u32).to_le_bytes());
}

fn texture_byte(class: usize, i: usize, p: &TextureParams, rng: &mut ChaCha8Rng) -> u8 {
    match class {
        0 => rng.gen(),
        1 => ((i + p.phase) * p.slope % 256) as u8,
        2 => {
            if rng.gen_bool(p.spike_rate) {
                rng.gen_range(200..=255)
            } else {
                rng.gen_range(0..16)
            }
        }
        3 => {
            if i.is_multiple_of(p.run_len) {
                p.run_value.set(rng.gen());
            }
            p.run_value.get()
        }
        _ => {
            const PATTERN: [u8; 7] = [0, 40, 200, 90, 255, 10, 160];
            PATTERN[(i + p.phase) % 7].saturating_add(rng.gen_range(0..12))
        }
    }
}

struct TextureParams {
    phase: usize,
    slope: usize,
    spike_rate: f64,
    run_len: usize,
    run_value: std::cell::Cell<u8>,
}

/// One DEX-like file of class `class` (taken modulo the texture count).
pub fn dex_bytes(class: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let len = rng.gen_range(6000..9000);
    let mut bytes = vec![0u8; len];
    bytes[..8].copy_from_slice(b"dex\n035\0");
    for b in &mut bytes[8..0x20] {
        *b = rng.gen();
    }
    put_u32(&mut bytes, 0x20, len);
    put_u32(&mut bytes, 0x24, DEX_HEADER_LEN);
    put_u32(&mut bytes, 0x28, 0x1234_5678);

    // (size field, offset field, element size, count)
    let tables = [
        (0x38, 0x3c, 4, rng.gen_range(40..80)),
        (0x40, 0x44, 4, rng.gen_range(10..30)),
        (0x48, 0x4c, 12, rng.gen_range(5..15)),
        (0x50, 0x54, 8, rng.gen_range(5..20)),
        (0x58, 0x5c, 8, rng.gen_range(10..40)),
        (0x60, 0x64, 32, rng.gen_range(2..8)),
    ];
    let mut at = DEX_HEADER_LEN;
    for (size_field, off_field, elem, count) in tables {
        put_u32(&mut bytes, size_field, count);
        put_u32(&mut bytes, off_field, at);
        for _ in 0..count * elem / 4 {
            let v = rng.gen_range(0..len);
            put_u32(&mut bytes, at, v);
            at += 4;
        }
    }
    put_u32(&mut bytes, 0x68, len - at);
    put_u32(&mut bytes, 0x6c, at);

    let params = TextureParams {
        phase: rng.gen_range(0..256),
        slope: rng.gen_range(1..4),
        spike_rate: rng.gen_range(0.02..0.08),
        run_len: rng.gen_range(48..160),
        run_value: std::cell::Cell::new(0),
    };
    let class = class % TEXTURES.len();
    for (i, b) in bytes[at..].iter_mut().enumerate() {
        *b = texture_byte(class, i, &params, rng);
    }
    bytes
}

fn split_id(split: Split) -> u64 {
    match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

/// Writes the corpus under `root`.
pub fn generate(root: &Path, spec: &SynthSpec) -> Result<()> {
    if spec.classes < 2 || spec.classes > TEXTURES.len() {
        return Err(HarnessError::Config(format!(
            "synthetic corpus supports 2..={} classes",
            TEXTURES.len()
        )));
    }
    let rule = WidthRule::default();
    for split in Split::ALL {
        let per_class = match split {
            Split::Train => spec.train_per_class,
            Split::Val => spec.val_per_class,
            Split::Test => spec.test_per_class,
        };
        for (class, name) in TEXTURES.iter().enumerate().take(spec.classes) {
            let dir = root.join(split.as_str()).join(name);
            std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
            for i in 0..per_class {
                let stream = (split_id(split) << 48) | ((class as u64) << 32) | i as u64;
                let mut rng = rng_stream(spec.seed, stream);
                let bytes = dex_bytes(class, &mut rng);
                let img = convert(&bytes, spec.channels, &rule, spec.size)?;
                write_png(&dir.join(format!("{name}_{i:04}.png")), &img)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binimg::{parse_dex, Region};

    #[test]
    fn files_parse_as_dex() {
        for class in 0..TEXTURES.len() {
            let bytes = dex_bytes(class, &mut rng_stream(1, class as u64));
            let map = parse_dex(&bytes).unwrap();
            assert!(map.occupancy(Region::Data) > 4000);
            assert!(!map.identifiers.is_empty());
            assert!(!map.class_defs.is_empty());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = dex_bytes(3, &mut rng_stream(7, 11));
        let b = dex_bytes(3, &mut rng_stream(7, 11));
        assert_eq!(a, b);
    }

    #[test]
    fn small_corpus_ingests() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            classes: 3,
            train_per_class: 2,
            val_per_class: 1,
            test_per_class: 1,
            size: 32,
            ..SynthSpec::default()
        };
        generate(dir.path(), &spec).unwrap();
        let idx = super::super::ingest(dir.path(), super::super::Layout::Tree).unwrap();
        assert_eq!(idx.train_counts(), vec![2, 2, 2]);
        assert_eq!(idx.test.len(), 3);
    }
}
