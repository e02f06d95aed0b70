use serde::{Deserialize, Serialize};

use super::dex::{parse_dex, DexSectionMap};
use super::grid::{bytes_to_grid, colorize, ChannelAssignment, WidthRule};
use super::lanczos::lanczos_resize;
use super::{BinImgError, ImageTensor, Result};

/// A converted image plus what is needed to interpret it.
#[derive(Debug, Clone)]
pub struct Conversion {
    pub image: ImageTensor,
    pub sidecar: Sidecar,
}

/// Metadata written next to each converted PNG.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub file_len: usize,
    pub grid_width: usize,
    pub grid_height: usize,
    pub channels: usize,
    pub size: usize,
    /// Present when the three-channel variant parsed the input as DEX.
    pub section_map: Option<DexSectionMap>,
    /// True when three channels were requested but the input was not DEX.
    pub gray_fallback: bool,
}

/// `bytes -> grid -> (colorize) -> Lanczos resize to size x size`.
pub fn convert(bytes: &[u8], channels: usize, rule: &WidthRule, size: usize) -> Result<ImageTensor> {
    convert_with_meta(bytes, channels, rule, size).map(|c| c.image)
}

pub fn convert_with_meta(bytes: &[u8], channels: usize, rule: &WidthRule, size: usize) -> Result<Conversion> {
    if channels != 1 && channels != 3 {
        return Err(BinImgError::InvalidDimensions(format!(
            "channels must be 1 or 3, got {channels}"
        )));
    }
    let grid = bytes_to_grid(bytes, rule)?;
    let (grid_height, grid_width) = (grid.height(), grid.width());
    let mut section_map = None;
    let mut gray_fallback = false;
    let staged = if channels == 3 {
        match parse_dex(bytes) {
            Ok(map) => {
                let rgb = colorize(&grid, &map, rule, &ChannelAssignment::default())?;
                section_map = Some(map);
                rgb
            }
            Err(e) => {
                log::warn!("input is not DEX ({e}); replicating grayscale into 3 channels");
                gray_fallback = true;
                grid.replicate(3)
            }
        }
    } else {
        grid
    };
    let image = lanczos_resize(&staged, size, size)?;
    Ok(Conversion {
        image,
        sidecar: Sidecar {
            file_len: bytes.len(),
            grid_width,
            grid_height,
            channels,
            size,
            section_map,
            gray_fallback,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_square_target() {
        let bytes: Vec<u8> = (0..5000u32).map(|i| (i % 251) as u8).collect();
        for k in [1, 3] {
            let img = convert(&bytes, k, &WidthRule::default(), 256).unwrap();
            assert_eq!(img.shape(), (k, 256, 256));
        }
    }

    #[test]
    fn constant_file_gives_constant_image() {
        let bytes = vec![128u8; 32 * 40];
        let img = convert(&bytes, 1, &WidthRule::default(), 64).unwrap();
        let v = 128.0 / 255.0;
        assert!(img.data().iter().all(|p| (p - v).abs() < 1e-6));
    }

    #[test]
    fn non_dex_three_channel_falls_back() {
        let c = convert_with_meta(&[9u8; 320], 3, &WidthRule::default(), 16).unwrap();
        assert!(c.sidecar.gray_fallback);
        assert!(c.sidecar.section_map.is_none());
        assert_eq!(c.image.plane(0), c.image.plane(1));
        assert_eq!(c.image.plane(1), c.image.plane(2));
    }

    #[test]
    fn bad_channel_count() {
        assert!(convert(&[1, 2, 3], 2, &WidthRule::default(), 8).is_err());
    }
}
