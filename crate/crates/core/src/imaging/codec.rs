use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ColorType, DynamicImage, ImageEncoder};
use thiserror::Error;

use super::Image;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),
}

fn color_type(img: &Image) -> ColorType {
    if img.channels() == 1 {
        ColorType::L8
    } else {
        ColorType::Rgb8
    }
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        img.data(),
        img.width(),
        img.height(),
        color_type(img).into(),
    )?;
    Ok(out)
}

pub fn encode_jpeg(img: &Image, quality: u8) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality).write_image(
        img.data(),
        img.width(),
        img.height(),
        color_type(img).into(),
    )?;
    Ok(out)
}

/// Decodes PNG or JPEG bytes. Grayscale stays single-channel; everything
/// else becomes RGB (alpha is dropped).
pub fn decode(bytes: &[u8]) -> Result<Image, CodecError> {
    let format = image::guess_format(bytes)?;
    let dynamic = image::load(Cursor::new(bytes), format)?;
    let img = match dynamic {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            Image::new(w, h, 1, gray.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            Image::new(w, h, 3, rgb.into_raw())
        }
    };
    Ok(img.expect("decoder yields consistent buffers"))
}
