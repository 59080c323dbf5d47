//! File formats: feature CSV and the PNG encodings of images, masks and
//! residuals. The `parse_*`/`decode_*` functions take in-memory input and
//! never panic on malformed data.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{FeatureBatch, Mask, RasterImage, ResidualImage};

/// Residual PNGs store `value + RESIDUAL_OFFSET` in 16-bit channels.
pub const RESIDUAL_OFFSET: i32 = 32768;

/// Mask PNG pixels above this gray level read as foreground.
pub const MASK_THRESHOLD: u8 = 127;

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Parses headerless CSV with one vector per row. Blank lines are skipped.
pub fn parse_feature_csv(text: &str) -> Result<FeatureBatch> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());

    let mut flat = Vec::new();
    let mut width = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            column: 0,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::RaggedRow {
                    line,
                    expected: w,
                    found: record.len(),
                })
            }
            Some(_) => {}
        }
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                column: col + 1,
                message: format!("not a decimal number: {field:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    line,
                    column: col + 1,
                });
            }
            flat.push(value);
        }
        rows += 1;
    }
    let d = width.ok_or(Error::NoRows)?;
    let vectors =
        Array2::from_shape_vec((rows, d), flat).map_err(|e| Error::InvalidInput(e.to_string()))?;
    FeatureBatch::new(vectors)
}

pub fn load_feature_batch(path: impl AsRef<Path>) -> Result<FeatureBatch> {
    parse_feature_csv(&read_text(path.as_ref())?)
}

/// Formats a batch so that [`parse_feature_csv`] returns it unchanged.
pub fn format_feature_csv(batch: &FeatureBatch) -> String {
    let mut out = String::new();
    for row in batch.vectors().rows() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn save_feature_batch(batch: &FeatureBatch, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), format_feature_csv(batch).as_bytes())
}

fn image_err(e: image::ImageError) -> Error {
    Error::Image(e.to_string())
}

/// Decodes any PNG to 8-bit RGB (alpha is dropped, gray is replicated).
pub fn decode_rgb_png(bytes: &[u8]) -> Result<RasterImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(image_err)?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RasterImage::new(w, h, rgb.into_raw())
}

pub fn encode_rgb_png(img: &RasterImage) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Rgb<u8>, _> =
        ImageBuffer::from_raw(img.width(), img.height(), img.pixels())
            .ok_or_else(|| Error::Image("buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(image_err)?;
    Ok(out.into_inner())
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    decode_rgb_png(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_rgb_png(img)?)
}

/// Grayscale PNG to binary mask; gray > 127 is foreground.
pub fn decode_mask_png(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(image_err)?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let values = gray
        .into_raw()
        .into_iter()
        .map(|v| (v > MASK_THRESHOLD) as u8)
        .collect();
    Mask::new(w, h, values)
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let (w, h) = mask.dims();
    let raw: Vec<u8> = mask.values().iter().map(|&v| v * 255).collect();
    let buf: ImageBuffer<Luma<u8>, _> =
        ImageBuffer::from_raw(w, h, raw).ok_or_else(|| Error::Image("buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(image_err)?;
    Ok(out.into_inner())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    decode_mask_png(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask_png(mask)?)
}

/// 16-bit RGB PNG holding `value + 32768` per channel.
pub fn decode_residual_png(bytes: &[u8]) -> Result<ResidualImage> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(image_err)?;
    let rgb = img.to_rgb16();
    let (w, h) = rgb.dimensions();
    let mut values = Vec::with_capacity(w as usize * h as usize * 3);
    for v in rgb.into_raw() {
        let signed = v as i32 - RESIDUAL_OFFSET;
        if !(-255..=255).contains(&signed) {
            return Err(Error::Image(format!(
                "residual value {signed} outside [-255, 255]"
            )));
        }
        values.push(signed as i16);
    }
    ResidualImage::new(w, h, values)
}

pub fn encode_residual_png(res: &ResidualImage) -> Result<Vec<u8>> {
    let (w, h) = res.dims();
    let raw: Vec<u16> = res
        .values()
        .iter()
        .map(|&v| (v as i32 + RESIDUAL_OFFSET) as u16)
        .collect();
    let buf: ImageBuffer<Rgb<u16>, _> =
        ImageBuffer::from_raw(w, h, raw).ok_or_else(|| Error::Image("buffer size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png).map_err(image_err)?;
    Ok(out.into_inner())
}

pub fn load_residual(path: impl AsRef<Path>) -> Result<ResidualImage> {
    let path = path.as_ref();
    decode_residual_png(&read_bytes(path)?).map_err(|e| with_path(path, e))
}

pub fn save_residual(res: &ResidualImage, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_residual_png(res)?)
}

fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Image(msg) => Error::Image(format!("{}: {msg}", path.display())),
        other => other,
    }
}
