//! Grayscale images and patch extraction.

use std::path::Path;

use image::{GrayImage as Luma8Image, ImageFormat};
use nalgebra::DVector;

use crate::error::{invalid, Result};
use crate::model::{Provenance, SignalBatch};

/// Peak intensity of 8-bit images.
pub const I_MAX: f64 = 255.0;

/// Row-major grayscale image with real-valued pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.width + col] = v;
    }
}

/// Read an 8-bit binary PGM (P5).
pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path)?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let pixels = gray.into_raw().into_iter().map(f64::from).collect();
    GrayImage::new(w as usize, h as usize, pixels)
}

/// Write an image as 8-bit binary PGM, rounding and clamping to `[0, 255]`.
pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let raw: Vec<u8> = img
        .pixels
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = Luma8Image::from_raw(img.width as u32, img.height as u32, raw)
        .ok_or_else(|| invalid("pixel buffer does not match image size"))?;
    buf.save_with_format(path, ImageFormat::Pnm)?;
    Ok(())
}

/// Square patches scanned row-major, flattened row-major, with each patch's
/// mean removed and kept in `dc_offsets`. Overlapping extraction uses
/// stride 1, otherwise the stride is the patch size; partial patches at
/// the right and bottom edges are dropped.
pub fn patch_extract(
    img: &GrayImage,
    patch: usize,
    overlap: bool,
    source: &str,
) -> Result<SignalBatch> {
    patch_extract_strided(img, patch, if overlap { 1 } else { patch }, source)
}

pub fn patch_extract_strided(
    img: &GrayImage,
    patch: usize,
    stride: usize,
    source: &str,
) -> Result<SignalBatch> {
    if patch == 0 || stride == 0 {
        return Err(invalid("patch size and stride must be positive"));
    }
    if patch > img.width.min(img.height) {
        return Err(invalid(format!(
            "patch {patch} larger than image {}x{}",
            img.width, img.height
        )));
    }
    let mut signals = Vec::new();
    let mut dc = Vec::new();
    let mut origins = Vec::new();
    let mut r = 0;
    while r + patch <= img.height {
        let mut c = 0;
        while c + patch <= img.width {
            let mut v =
                DVector::from_fn(patch * patch, |i, _| img.get(r + i / patch, c + i % patch));
            let mean = v.mean();
            v.add_scalar_mut(-mean);
            signals.push(v);
            dc.push(mean);
            origins.push((r, c));
            c += stride;
        }
        r += stride;
    }
    let mut batch = SignalBatch::new(
        signals,
        None,
        Provenance::ImagePatches {
            source: source.to_string(),
            width: img.width,
            height: img.height,
            patch,
            overlap: stride < patch,
            origins,
        },
    )?;
    batch.dc_offsets = Some(dc);
    Ok(batch)
}

/// Place non-overlapping patches (DC re-added) back into an image of the
/// given size; uncovered pixels are zero.
pub fn assemble_patches(
    patches: &[DVector<f64>],
    dc: &[f64],
    origins: &[(usize, usize)],
    patch: usize,
    width: usize,
    height: usize,
) -> Result<GrayImage> {
    if patches.len() != dc.len() || patches.len() != origins.len() {
        return Err(invalid("patch, offset and origin counts differ"));
    }
    let mut img = GrayImage::constant(width, height, 0.0);
    for ((p, &d), &(r, c)) in patches.iter().zip(dc).zip(origins) {
        for i in 0..patch * patch {
            img.set(r + i / patch, c + i % patch, p[i] + d);
        }
    }
    Ok(img)
}
