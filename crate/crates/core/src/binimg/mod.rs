//! Byte-stream to image conversion.
//!
//! A binary is laid out row-major on a grid whose width depends on the file
//! length ([`WidthRule`]), optionally split into three channels by DEX
//! section ([`colorize`]), and finally resampled to a square image with a
//! separable Lanczos-3 filter ([`lanczos_resize`]).

mod convert;
mod dex;
mod grid;
mod lanczos;
mod png_io;

pub use convert::{convert, convert_with_meta, Conversion, Sidecar};
pub use dex::{parse_dex, ByteRange, DexSectionMap, Region, DEX_HEADER_LEN};
pub use grid::{bytes_to_grid, colorize, ChannelAssignment, WidthRule};
pub use lanczos::{lanczos3, lanczos_resize, LANCZOS_SUPPORT};
pub use png_io::{decode_png, encode_png, read_png, write_png};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinImgError {
    #[error("input is empty")]
    EmptyInput,
    #[error("DEX magic mismatch: expected \"dex\\n\", found {0:02x?}")]
    MalformedMagic([u8; 4]),
    #[error("input of {0} bytes is shorter than the 0x70-byte DEX header")]
    TruncatedHeader(usize),
    #[error("DEX table `{table}` spans [{start:#x}, {end:#x}) past file end {len:#x}")]
    InconsistentOffsets {
        table: &'static str,
        start: u64,
        end: u64,
        len: usize,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("invalid width rule: {0}")]
    InvalidWidthRule(String),
    #[error("png: {0}")]
    Png(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BinImgError>;

/// Dense `(channels, height, width)` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Builds an image from planar data, rejecting out-of-range or non-finite values.
    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(BinImgError::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                channels,
                height,
                width
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(BinImgError::ShapeMismatch(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Repeats a single-channel image `k` times.
    pub fn replicate(&self, k: usize) -> Self {
        assert_eq!(self.channels, 1, "replicate expects a single channel");
        let mut data = Vec::with_capacity(k * self.data.len());
        for _ in 0..k {
            data.extend_from_slice(&self.data);
        }
        Self {
            channels: k,
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// 8-bit quantization used for PNG output: `round(v * 255)`.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
