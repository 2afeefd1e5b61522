//! PNG/PGM decoding to luma and mask encoding.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};
use medprompt_core::engine::BackendError;
use medprompt_core::stub::{LumaImage, Mask};

/// An input image: the original bytes (sent to remote backends) and its
/// luma raster (used by the stub).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedImage {
    pub bytes: Vec<u8>,
    pub luma: LumaImage,
    pub format: &'static str,
}

impl LoadedImage {
    pub fn width(&self) -> u32 {
        self.luma.width
    }

    pub fn height(&self) -> u32 {
        self.luma.height
    }
}

fn decode_failure(message: impl std::fmt::Display) -> BackendError {
    BackendError::DecodeFailure(message.to_string())
}

/// ITU-R BT.601 luma, rounded to nearest.
pub fn rec601(r: u8, g: u8, b: u8) -> u8 {
    // integer form of 0.299 R + 0.587 G + 0.114 B
    ((299 * u32::from(r) + 587 * u32::from(g) + 114 * u32::from(b) + 500) / 1000) as u8
}

pub fn to_luma(img: &DynamicImage) -> LumaImage {
    let (width, height) = (img.width(), img.height());
    let pixels = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().clone(),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            img.to_luma8().into_raw()
        }
        _ => img.to_rgb8().pixels().map(|p| rec601(p[0], p[1], p[2])).collect(),
    };
    LumaImage { width, height, pixels }
}

/// Decodes PNG or PGM/PPM bytes. Anything else is a decode failure.
pub fn decode_image(bytes: Vec<u8>) -> Result<LoadedImage, BackendError> {
    let format = image::guess_format(&bytes).map_err(|_| decode_failure("unrecognised image data"))?;
    let name = match format {
        ImageFormat::Png => "png",
        ImageFormat::Pnm => "pnm",
        other => return Err(decode_failure(format!("{other:?} images are not supported; use PNG or PGM"))),
    };
    let img = ImageReader::with_format(Cursor::new(&bytes), format)
        .decode()
        .map_err(decode_failure)?;
    let luma = to_luma(&img);
    if luma.pixels.is_empty() {
        return Err(decode_failure("image has no pixels"));
    }
    Ok(LoadedImage {
        bytes,
        luma,
        format: name,
    })
}

pub fn load_image(path: &Path) -> Result<LoadedImage, BackendError> {
    let bytes = std::fs::read(path).map_err(|e| decode_failure(format!("{}: {e}", path.display())))?;
    decode_image(bytes).map_err(|e| match e {
        BackendError::DecodeFailure(m) => decode_failure(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn encode_png(luma: &LumaImage) -> Vec<u8> {
    let buf = image::GrayImage::from_raw(luma.width, luma.height, luma.pixels.clone())
        .expect("pixel count matches dimensions");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

/// Single-channel PNG, 0 for background and 255 for foreground.
pub fn encode_mask_png(mask: &Mask) -> Vec<u8> {
    encode_png(&LumaImage {
        width: mask.width,
        height: mask.height,
        pixels: mask.pixels.clone(),
    })
}

/// Decodes a mask PNG, insisting on 8-bit single-channel 0/255 content.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask, BackendError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(decode_failure)?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(decode_failure("mask must be an 8-bit single-channel PNG"));
    };
    if gray.as_raw().iter().any(|&p| p != 0 && p != 255) {
        return Err(decode_failure("mask pixels must be 0 or 255"));
    }
    Ok(Mask {
        width: gray.width(),
        height: gray.height(),
        pixels: gray.into_raw(),
    })
}
