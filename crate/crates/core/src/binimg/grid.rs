use serde::{Deserialize, Serialize};

use super::dex::{DexSectionMap, Region};
use super::{BinImgError, ImageTensor, Result};

/// File-length to grid-width lookup.
///
/// A length `len` maps to the width of the first threshold with
/// `len < max_len`, or to `fallback` when no threshold applies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthRule {
    /// `(max_len_exclusive, width)` pairs, strictly increasing in `max_len`.
    pub thresholds: Vec<(usize, usize)>,
    pub fallback: usize,
}

impl Default for WidthRule {
    /// The common malware-imaging table (KB = 1024 bytes).
    fn default() -> Self {
        const KB: usize = 1024;
        Self {
            thresholds: vec![
                (10 * KB, 32),
                (30 * KB, 64),
                (60 * KB, 128),
                (100 * KB, 256),
                (200 * KB, 384),
                (500 * KB, 512),
                (1000 * KB, 768),
            ],
            fallback: 1024,
        }
    }
}

impl WidthRule {
    pub fn new(thresholds: Vec<(usize, usize)>, fallback: usize) -> Result<Self> {
        let rule = Self { thresholds, fallback };
        rule.validate()?;
        Ok(rule)
    }

    /// Rule that always yields `width`.
    pub fn fixed(width: usize) -> Self {
        Self {
            thresholds: Vec::new(),
            fallback: width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fallback == 0 || self.thresholds.iter().any(|&(_, w)| w == 0) {
            return Err(BinImgError::InvalidWidthRule("widths must be positive".into()));
        }
        if self.thresholds.windows(2).any(|p| p[0].0 >= p[1].0) {
            return Err(BinImgError::InvalidWidthRule(
                "thresholds must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn width_for(&self, len: usize) -> usize {
        self.thresholds
            .iter()
            .find(|&&(max_len, _)| len < max_len)
            .map(|&(_, w)| w)
            .unwrap_or(self.fallback)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rule: Self = serde_json::from_str(text).map_err(|e| BinImgError::InvalidWidthRule(e.to_string()))?;
        rule.validate()?;
        Ok(rule)
    }
}

/// Lays `bytes` out row-major on a single-channel grid; the last row is zero-padded.
pub fn bytes_to_grid(bytes: &[u8], rule: &WidthRule) -> Result<ImageTensor> {
    if bytes.is_empty() {
        return Err(BinImgError::EmptyInput);
    }
    let width = rule.width_for(bytes.len());
    let height = bytes.len().div_ceil(width);
    let mut data = vec![0.0; height * width];
    for (px, &b) in data.iter_mut().zip(bytes) {
        *px = b as f64 / 255.0;
    }
    Ok(ImageTensor {
        channels: 1,
        height,
        width,
        data,
    })
}

/// Output channel for each DEX region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelAssignment {
    pub header: usize,
    pub identifiers: usize,
    pub class_defs: usize,
    pub data: usize,
}

impl Default for ChannelAssignment {
    /// header + identifiers -> R, class definitions -> G, data -> B.
    fn default() -> Self {
        Self {
            header: 0,
            identifiers: 0,
            class_defs: 1,
            data: 2,
        }
    }
}

impl ChannelAssignment {
    pub fn channel(&self, region: Region) -> usize {
        match region {
            Region::Header => self.header,
            Region::Identifiers => self.identifiers,
            Region::ClassDefs => self.class_defs,
            Region::Data => self.data,
        }
    }
}

/// Splits a grayscale grid into three channels by DEX region.
pub fn colorize(
    grid: &ImageTensor,
    map: &DexSectionMap,
    rule: &WidthRule,
    assignment: &ChannelAssignment,
) -> Result<ImageTensor> {
    if grid.channels != 1 {
        return Err(BinImgError::ShapeMismatch(format!(
            "colorize expects one channel, got {}",
            grid.channels
        )));
    }
    let width = rule.width_for(map.file_len);
    if map.file_len == 0 || width != grid.width || map.file_len.div_ceil(width) != grid.height {
        return Err(BinImgError::ShapeMismatch(format!(
            "map describes {} bytes (width {width}), grid is {}x{}",
            map.file_len, grid.height, grid.width
        )));
    }
    for r in Region::ALL {
        if assignment.channel(r) > 2 {
            return Err(BinImgError::ShapeMismatch(format!(
                "region {r:?} assigned to channel {}",
                assignment.channel(r)
            )));
        }
    }
    let plane = grid.height * grid.width;
    let mut out = ImageTensor::zeros(3, grid.height, grid.width);
    for (i, &v) in grid.data[..map.file_len].iter().enumerate() {
        let c = assignment.channel(map.region_at(i));
        out.data[c * plane + i] = v;
    }
    Ok(out)
}
