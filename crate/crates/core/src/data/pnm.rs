//! Binary netpbm images: P6 for RGB, P5 for single-channel maps, maxval 255.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Maps `[0, 1]` to `0..=255`, rounding half away from zero.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(path: &Path, bytes: &[u8], w: usize, h: usize, color: ExtendedColorType, subtype: PnmSubtype) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let enc = PnmEncoder::new(BufWriter::new(file)).with_subtype(subtype);
    enc.write_image(bytes, w as u32, h as u32, color)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// Writes an `[H, W, 3]` tensor as P6.
pub fn write_ppm(path: &Path, rgb: &Tensor) -> Result<()> {
    let &[h, w, 3] = rgb.shape() else {
        return Err(Error::dim("write_ppm", format!("{:?} is not [H, W, 3]", rgb.shape())));
    };
    let bytes: Vec<u8> = rgb.data().iter().map(|&v| quantize(v)).collect();
    encode(path, &bytes, w, h, ExtendedColorType::Rgb8, PnmSubtype::Pixmap(SampleEncoding::Binary))
}

/// Writes an `[H, W]` or `[H, W, 1]` tensor as P5.
pub fn write_pgm(path: &Path, map: &Tensor) -> Result<()> {
    let (h, w) = match map.shape() {
        &[h, w] | &[h, w, 1] => (h, w),
        s => return Err(Error::dim("write_pgm", format!("{s:?} is not [H, W] or [H, W, 1]"))),
    };
    let bytes: Vec<u8> = map.data().iter().map(|&v| quantize(v)).collect();
    encode(path, &bytes, w, h, ExtendedColorType::L8, PnmSubtype::Graymap(SampleEncoding::Binary))
}

fn decode(path: &Path, want: ExtendedColorType) -> Result<(usize, usize, Vec<u8>)> {
    let ctx = || path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let dec = PnmDecoder::new(BufReader::new(file)).map_err(|e| Error::format(ctx(), e.to_string()))?;
    let (w, h) = dec.dimensions();
    let color = dec.original_color_type();
    if color != want {
        return Err(Error::format(ctx(), format!("expected {want:?} samples, found {color:?}")));
    }
    let mut bytes = vec![0u8; dec.total_bytes() as usize];
    dec.read_image(&mut bytes).map_err(|e| Error::format(ctx(), e.to_string()))?;
    Ok((h as usize, w as usize, bytes))
}

/// Reads a P6 image into an `[H, W, 3]` tensor in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let (h, w, bytes) = decode(path, ExtendedColorType::Rgb8)?;
    Tensor::new(&[h, w, 3], bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Reads a P5 image into an `[H, W]` tensor in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let (h, w, bytes) = decode(path, ExtendedColorType::L8)?;
    Tensor::new(&[h, w], bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
}
