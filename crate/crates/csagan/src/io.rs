//! PNG images, line maps, probability maps, CSDF distance fields and atomic
//! file writes.
//!
//! CSDF layout: the bytes `CSDF`, height and width as little-endian `u32`,
//! then `height·width` little-endian `f32` values row-major.

use std::io::Write;
use std::path::Path;

use csagan_core::image::RgbImage;
use csagan_core::linemap::{DistanceField, LineMap, ProbEdgeMap};
use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, Rgb, RgbImage as PngRgb};

use crate::error::{Error, Result};

const CSDF_MAGIC: &[u8; 4] = b"CSDF";
/// Line pixels in a line-map PNG are darker than this.
pub const LINE_LUMA_THRESHOLD: u8 = 128;

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers see either the old file or the complete new one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png).map_err(|e| Error::Image { path: path.into(), source: e })?;
    Ok(buf.into_inner())
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?.to_rgb8();
    Ok(from_png_rgb(&img))
}

fn from_png_rgb(img: &PngRgb) -> RgbImage {
    let (w, h) = img.dimensions();
    let data = img.pixels().flat_map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    RgbImage::new(h as usize, w as usize, data).expect("buffer matches dimensions")
}

fn to_png_rgb(img: &RgbImage) -> PngRgb {
    PngRgb::from_fn(img.width as u32, img.height as u32, |x, y| Rgb(img.pixel(y as usize, x as usize).map(to_u8)))
}

pub fn encode_rgb(img: &RgbImage) -> Result<Vec<u8>> {
    encode_png(&to_png_rgb(img), Path::new("<memory>"))
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    write_atomic(path, &encode_png(&to_png_rgb(img), path)?)
}

/// Center-crops to a square and resizes to `side × side`.
pub fn square_resize(img: &RgbImage, side: usize) -> RgbImage {
    let png = to_png_rgb(img);
    let (w, h) = png.dimensions();
    let s = w.min(h);
    let cropped = imageops::crop_imm(&png, (w - s) / 2, (h - s) / 2, s, s).to_image();
    let resized = if s as usize == side {
        cropped
    } else {
        imageops::resize(&cropped, side as u32, side as u32, FilterType::Triangle)
    };
    from_png_rgb(&resized)
}

pub fn read_linemap(path: &Path) -> Result<LineMap> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?.to_luma8();
    let (w, h) = img.dimensions();
    let mask = img.pixels().map(|p| p.0[0] < LINE_LUMA_THRESHOLD).collect();
    Ok(LineMap::new(h as usize, w as usize, mask)?)
}

/// Black lines on white.
pub fn write_linemap(path: &Path, lines: &LineMap) -> Result<()> {
    let img = GrayImage::from_fn(lines.width as u32, lines.height as u32, |x, y| {
        Luma([if lines.get(y as usize, x as usize) { 0 } else { 255 }])
    });
    write_atomic(path, &encode_png(&img, path)?)
}

/// A grayscale PNG read as edge probabilities (`value / 255`).
pub fn read_prob_map(path: &Path) -> Result<ProbEdgeMap> {
    let img = image::open(path).map_err(|e| Error::Image { path: path.into(), source: e })?.to_luma8();
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
    Ok(ProbEdgeMap::new(h as usize, w as usize, values)?)
}

pub fn encode_csdf(field: &DistanceField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * field.values.len());
    out.extend_from_slice(CSDF_MAGIC);
    out.extend_from_slice(&(field.height as u32).to_le_bytes());
    out.extend_from_slice(&(field.width as u32).to_le_bytes());
    for &v in &field.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_csdf(bytes: &[u8], path: &Path) -> Result<DistanceField> {
    if bytes.len() < 12 || &bytes[..4] != CSDF_MAGIC {
        return Err(Error::format(path, "not a CSDF file"));
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if h.checked_mul(w).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(Error::format(path, format!("{h}x{w} field needs {} bytes, found {}", 4 * h * w, body.len())));
    }
    let values: Vec<f64> = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::format(path, "distance values must be finite and non-negative"));
    }
    Ok(DistanceField { height: h, width: w, values })
}

pub fn write_csdf(path: &Path, field: &DistanceField) -> Result<()> {
    write_atomic(path, &encode_csdf(field))
}

pub fn read_csdf(path: &Path) -> Result<DistanceField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_csdf(&bytes, path)
}
