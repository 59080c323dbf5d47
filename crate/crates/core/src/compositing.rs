//! Local-part residual refinement, pasting, masked fusion and
//! full-reference quality metrics.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_text;
use crate::types::{check_rect, Mask, RasterImage, ResidualImage};

/// Part 1 is the face; 2 to 5 are hands and feet.
pub const PART_COUNT: u8 = 5;
pub const FACE_PART: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BodyPartCrop {
    pub image: RasterImage,
    pub part_index: u8,
    pub origin: (u32, u32),
    pub parent_size: (u32, u32),
}

impl BodyPartCrop {
    pub fn new(image: RasterImage, part_index: u8, origin: (u32, u32), parent_size: (u32, u32)) -> Result<Self> {
        check_part_index(part_index)?;
        check_rect(parent_size, origin.0, origin.1, image.width(), image.height())?;
        Ok(Self {
            image,
            part_index,
            origin,
            parent_size,
        })
    }

    /// Cuts `rect` out of `frame`.
    pub fn cut(frame: &RasterImage, rect: &PartRect) -> Result<Self> {
        let image = frame.crop(rect.x, rect.y, rect.w, rect.h)?;
        Self::new(image, rect.index, (rect.x, rect.y), frame.dims())
    }
}

fn check_part_index(index: u8) -> Result<()> {
    if (1..=PART_COUNT).contains(&index) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("part index {index} outside 1..=5")))
    }
}

/// Result of [`apply_residual`]: the refined crop and how many channel
/// values saturated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refined {
    pub crop: BodyPartCrop,
    pub clamped: usize,
}

/// Per channel `clamp(part + residual, 0, 255)`.
pub fn apply_residual(part: &BodyPartCrop, residual: &ResidualImage) -> Result<Refined> {
    if residual.dims() != part.image.dims() {
        return Err(Error::DimensionMismatch(format!(
            "residual is {:?}, part crop is {:?}",
            residual.dims(),
            part.image.dims()
        )));
    }
    let mut clamped = 0;
    let pixels = part
        .image
        .pixels()
        .iter()
        .zip(residual.values())
        .map(|(&p, &r)| {
            let v = p as i32 + r as i32;
            if !(0..=255).contains(&v) {
                clamped += 1;
            }
            v.clamp(0, 255) as u8
        })
        .collect();
    let image = RasterImage::new(part.image.width(), part.image.height(), pixels)?;
    Ok(Refined {
        crop: BodyPartCrop { image, ..part.clone() },
        clamped,
    })
}

/// Writes `part.image` back into `frame` at its origin.
pub fn paste_crop(frame: &RasterImage, part: &BodyPartCrop) -> Result<RasterImage> {
    if part.parent_size != frame.dims() {
        return Err(Error::OutOfBounds(format!(
            "crop belongs to a {:?} frame, target is {:?}",
            part.parent_size,
            frame.dims()
        )));
    }
    let (x, y) = part.origin;
    let (w, h) = part.image.dims();
    check_rect(frame.dims(), x, y, w, h)?;
    let mut out = frame.clone();
    let fw = frame.width() as usize;
    let row_bytes = w as usize * 3;
    let src = part.image.pixels();
    let dst = out.pixels_mut();
    for row in 0..h as usize {
        let d = ((y as usize + row) * fw + x as usize) * 3;
        dst[d..d + row_bytes].copy_from_slice(&src[row * row_bytes..(row + 1) * row_bytes]);
    }
    Ok(out)
}

/// `M ⊙ foreground + (1 − M) ⊙ background` with a hard mask.
pub fn fuse(foreground: &RasterImage, background: &RasterImage, mask: &Mask) -> Result<RasterImage> {
    if foreground.dims() != background.dims() || mask.dims() != foreground.dims() {
        return Err(Error::DimensionMismatch(format!(
            "foreground {:?}, background {:?}, mask {:?}",
            foreground.dims(),
            background.dims(),
            mask.dims()
        )));
    }
    let mut pixels = Vec::with_capacity(foreground.pixels().len());
    for (i, &m) in mask.values().iter().enumerate() {
        let src = if m == 1 { foreground } else { background };
        pixels.extend_from_slice(&src.pixels()[i * 3..i * 3 + 3]);
    }
    RasterImage::new(foreground.width(), foreground.height(), pixels)
}

fn same_dims(a: &RasterImage, b: &RasterImage) -> Result<()> {
    if a.dims() == b.dims() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!("{:?} vs {:?}", a.dims(), b.dims())))
    }
}

/// Mean squared error over all channels.
pub fn mse(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: u64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.pixels().len() as f64)
}

/// `10 log10(255² / MSE)` in dB; identical images give `+inf`.
pub fn psnr(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0f64 * 255.0 / e).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_RANGE: f64 = 255.0;

/// BT.601 luma, unrounded.
pub fn luma(img: &RasterImage) -> Array2<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let p = img.pixels();
    Array2::from_shape_fn((h, w), |(y, x)| {
        let i = (y * w + x) * 3;
        0.299 * p[i] as f64 + 0.587 * p[i + 1] as f64 + 0.114 * p[i + 2] as f64
    })
}

fn gaussian_window() -> Array2<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    Array2::from_shape_fn((SSIM_WINDOW, SSIM_WINDOW), |(i, j)| g[i] * g[j] / (s * s))
}

/// Local SSIM for every fully contained 11×11 window; entry `(y, x)` is the
/// window whose top-left corner is `(x, y)`.
pub fn ssim_map(a: &RasterImage, b: &RasterImage) -> Result<Array2<f64>> {
    same_dims(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let (la, lb) = (luma(a), luma(b));
    let win = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_RANGE).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    Ok(Array2::from_shape_fn((oh, ow), |(y, x)| {
        let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((dy, dx), &g) in win.indexed_iter() {
            let va = la[[y + dy, x + dx]];
            let vb = lb[[y + dy, x + dx]];
            ma += g * va;
            mb += g * vb;
            saa += g * va * va;
            sbb += g * vb * vb;
            sab += g * va * vb;
        }
        let var_a = saa - ma * ma;
        let var_b = sbb - mb * mb;
        let cov = sab - ma * mb;
        ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2))
    }))
}

/// Mean of [`ssim_map`].
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    let map = ssim_map(a, b)?;
    Ok(map.mean().unwrap_or(f64::NAN))
}

/// One part rectangle from a crops file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartRect {
    pub index: u8,
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameCrops {
    pub frame_id: String,
    pub parts: Vec<PartRect>,
}

impl FrameCrops {
    pub fn validate(&self) -> Result<()> {
        let mut seen = [false; PART_COUNT as usize + 1];
        for p in &self.parts {
            check_part_index(p.index)?;
            if std::mem::replace(&mut seen[p.index as usize], true) {
                return Err(Error::InvalidInput(format!(
                    "frame {}: part {} listed twice",
                    self.frame_id, p.index
                )));
            }
            if p.w == 0 || p.h == 0 {
                return Err(Error::InvalidInput(format!("frame {}: empty rectangle", self.frame_id)));
            }
        }
        Ok(())
    }

    /// Checks every rectangle lies inside a frame of the given size.
    pub fn check_bounds(&self, frame: (u32, u32)) -> Result<()> {
        self.parts
            .iter()
            .try_for_each(|p| check_rect(frame, p.x, p.y, p.w, p.h))
    }

    pub fn part(&self, index: u8) -> Option<&PartRect> {
        self.parts.iter().find(|p| p.index == index)
    }
}

pub fn parse_crops_json(text: &str) -> Result<FrameCrops> {
    let crops: FrameCrops = serde_json::from_str(text)?;
    crops.validate()?;
    Ok(crops)
}

pub fn load_crops(path: impl AsRef<Path>) -> Result<FrameCrops> {
    parse_crops_json(&read_text(path.as_ref())?)
}
