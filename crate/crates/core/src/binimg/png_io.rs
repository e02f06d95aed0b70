use std::fs;
use std::io::Cursor;
use std::path::Path;

use super::{quantize, BinImgError, ImageTensor, Result};

/// Encodes a 1- or 3-channel image as 8-bit grayscale or RGB PNG.
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        k => {
            return Err(BinImgError::ShapeMismatch(format!(
                "PNG output needs 1 or 3 channels, got {k}"
            )))
        }
    };
    let plane = img.height * img.width;
    let mut pixels = Vec::with_capacity(plane * img.channels);
    for i in 0..plane {
        for c in 0..img.channels {
            pixels.push(quantize(img.data[c * plane + i]));
        }
    }

    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, img.width as u32, img.height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Balanced);
        enc.set_filter(png::Filter::NoFilter);
        let mut writer = enc.write_header().map_err(|e| BinImgError::Png(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| BinImgError::Png(e.to_string()))?;
    }
    Ok(buf)
}

pub fn write_png(path: &Path, img: &ImageTensor) -> Result<()> {
    fs::write(path, encode_png(img)?)?;
    Ok(())
}

/// Decodes an 8-bit PNG into planar `[0, 1]` values. Alpha is dropped.
pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| BinImgError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| BinImgError::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| BinImgError::Png(e.to_string()))?;
    let (width, height) = (info.width as usize, info.height as usize);
    let (stride, channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(BinImgError::Png("indexed PNG was not expanded".into())),
    };
    let plane = width * height;
    let mut data = vec![0.0; plane * channels];
    for i in 0..plane {
        for c in 0..channels {
            data[c * plane + i] = buf[i * stride + c] as f64 / 255.0;
        }
    }
    Ok(ImageTensor {
        channels,
        height,
        width,
        data,
    })
}

pub fn read_png(path: &Path) -> Result<ImageTensor> {
    decode_png(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_roundtrip_is_lossless_on_8bit_values() {
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
        let img = ImageTensor::from_data(3, 4, 5, data).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn two_channel_output_rejected() {
        assert!(encode_png(&ImageTensor::zeros(2, 2, 2)).is_err());
    }
}
