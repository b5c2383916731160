//! Raster mathematics shared by every stage: image, mask and depth containers,
//! the masked 50%-opacity composite, mask IoU, thresholding, bilinear resize
//! and depth normalization.
//!
//! Intensities are `f32` in `[0, 1]`. Conversion to 8-bit happens only at PNG
//! boundaries, with round-half-away-from-zero quantization.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default opacity of the generated layer inside the mask.
pub const DEFAULT_OPACITY: f64 = 0.5;
/// Default binarization threshold.
pub const DEFAULT_THRESHOLD: f32 = 0.5;
/// Default working resolution (square side, pixels).
pub const DEFAULT_WORKING_SIDE: u32 = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    fn check_nonzero(self, operand: &'static str) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Shape {
                operand,
                expected: Dims::new(self.width.max(1), self.height.max(1)),
                found: self,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

fn ensure_same(expected: Dims, operand: &'static str, found: Dims) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            operand,
            expected,
            found,
        });
    }
    Ok(())
}

fn check_unit_range(values: &[f32], what: &str) -> Result<()> {
    if let Some((i, v)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::Numeric(format!(
            "{what} value {v} at index {i} is outside [0, 1]"
        )));
    }
    Ok(())
}

#[inline]
fn quantize(v: f32) -> u8 {
    // f32::round rounds half away from zero.
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
fn dequantize(v: u8) -> f32 {
    f32::from(v) / 255.0
}

/// RGB image, interleaved, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    dims: Dims,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let dims = Dims::new(width, height);
        dims.check_nonzero("raster")?;
        if data.len() != dims.pixels() * 3 {
            return Err(Error::Precondition(format!(
                "raster {dims} needs {} samples, got {}",
                dims.pixels() * 3,
                data.len()
            )));
        }
        check_unit_range(&data, "raster")?;
        Ok(Self { dims, data })
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> u32 {
        self.dims.width
    }

    pub fn height(&self) -> u32 {
        self.dims.height
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.dims.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Rec. 601 luma.
    pub fn luminance(&self, x: u32, y: u32) -> f32 {
        let [r, g, b] = self.pixel(x, y);
        (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0)
    }

    pub fn luminance_plane(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect()
    }

    /// Snaps every sample onto the 8-bit grid, so that the value equals what a
    /// PNG round trip would produce.
    pub fn quantized(&self) -> Raster {
        Raster {
            dims: self.dims,
            data: self.data.iter().map(|&v| dequantize(quantize(v))).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        RgbImage::from_raw(self.dims.width, self.dims.height, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        Raster {
            dims: Dims::new(img.width(), img.height()),
            data: img.as_raw().iter().map(|&v| dequantize(v)).collect(),
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        encode_png(|buf| self.to_rgb8().write_to(buf, ImageFormat::Png))
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, image::ImageError> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        let raster = Self::from_rgb8(&img.to_rgb8());
        raster.dims.check_nonzero("image file")?;
        Ok(raster)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode_png())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    Binary,
    Soft,
}

/// Per-pixel foreground weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    dims: Dims,
    data: Vec<f32>,
    kind: MaskKind,
}

impl Mask {
    /// Builds a mask, inferring `Binary` when every value is exactly 0 or 1.
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let dims = Dims::new(width, height);
        dims.check_nonzero("mask")?;
        if data.len() != dims.pixels() {
            return Err(Error::Precondition(format!(
                "mask {dims} needs {} samples, got {}",
                dims.pixels(),
                data.len()
            )));
        }
        check_unit_range(&data, "mask")?;
        let kind = if data.iter().all(|&v| v == 0.0 || v == 1.0) {
            MaskKind::Binary
        } else {
            MaskKind::Soft
        };
        Ok(Self { dims, data, kind })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(if f(x, y) { 1.0 } else { 0.0 });
            }
        }
        Self::new(width, height, data)
    }

    pub fn empty(width: u32, height: u32) -> Result<Self> {
        Self::from_fn(width, height, |_, _| false)
    }

    pub fn width(&self) -> u32 {
        self.dims.width
    }

    pub fn height(&self) -> u32 {
        self.dims.height
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.dims.width as usize + x as usize]
    }

    /// Number of pixels with nonzero weight.
    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.foreground_count() == 0
    }

    pub fn complement(&self) -> Mask {
        Mask {
            dims: self.dims,
            data: self.data.iter().map(|&v| 1.0 - v).collect(),
            kind: self.kind,
        }
    }

    /// Tight bounds `(x0, y0, x1, y1)` of the nonzero pixels, exclusive on the
    /// high side.
    pub fn bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.dims.width;
        let mut out: Option<(u32, u32, u32, u32)> = None;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &v)| v > 0.0) {
            let (x, y) = ((i % w as usize) as u32, (i / w as usize) as u32);
            out = Some(match out {
                None => (x, y, x + 1, y + 1),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
            });
        }
        out
    }

    /// Gaussian feather of the given radius (sigma = radius / 2). A radius of
    /// zero returns the mask unchanged.
    pub fn feathered(&self, radius: u32) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        let sigma = radius as f64 / 2.0;
        let kernel: Vec<f64> = (-(radius as i64)..=radius as i64)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let (w, h) = (self.dims.width as i64, self.dims.height as i64);
        let r = radius as i64;

        let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
            let mut dst = vec![0.0f32; src.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0f64;
                    for (k, weight) in kernel.iter().enumerate() {
                        let d = k as i64 - r;
                        let (sx, sy) = if horizontal {
                            ((x + d).clamp(0, w - 1), y)
                        } else {
                            (x, (y + d).clamp(0, h - 1))
                        };
                        acc += weight * f64::from(src[(sy * w + sx) as usize]);
                    }
                    dst[(y * w + x) as usize] = ((acc / norm) as f32).clamp(0.0, 1.0);
                }
            }
            dst
        };
        let data = pass(&pass(&self.data, true), false);
        Mask {
            dims: self.dims,
            data,
            kind: MaskKind::Soft,
        }
    }

    /// White-on-black RGB rendering.
    pub fn to_raster(&self) -> Raster {
        Raster {
            dims: self.dims,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn to_gray8(&self) -> GrayImage {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        GrayImage::from_raw(self.dims.width, self.dims.height, bytes)
            .expect("buffer length matches dimensions")
    }

    pub fn from_gray8(img: &GrayImage) -> Result<Self> {
        Self::new(
            img.width(),
            img.height(),
            img.as_raw().iter().map(|&v| dequantize(v)).collect(),
        )
    }

    pub fn encode_png(&self) -> Vec<u8> {
        encode_png(|buf| self.to_gray8().write_to(buf, ImageFormat::Png))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Self::from_gray8(&img.to_luma8())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode_png())
    }
}

/// Normalized depth, one value per pixel in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    dims: Dims,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        let dims = Dims::new(width, height);
        dims.check_nonzero("depth map")?;
        if data.len() != dims.pixels() {
            return Err(Error::Precondition(format!(
                "depth map {dims} needs {} samples, got {}",
                dims.pixels(),
                data.len()
            )));
        }
        check_unit_range(&data, "depth")?;
        Ok(Self { dims, data })
    }

    pub fn width(&self) -> u32 {
        self.dims.width
    }

    pub fn height(&self) -> u32 {
        self.dims.height
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.dims.width as usize + x as usize]
    }

    pub fn quantized(&self) -> DepthMap {
        DepthMap {
            dims: self.dims,
            data: self.data.iter().map(|&v| dequantize(quantize(v))).collect(),
        }
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let bytes = self.data.iter().map(|&v| quantize(v)).collect();
        let img = GrayImage::from_raw(self.dims.width, self.dims.height, bytes)
            .expect("buffer length matches dimensions");
        encode_png(|buf| img.write_to(buf, ImageFormat::Png))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
        Self::new(
            img.width(),
            img.height(),
            img.as_raw().iter().map(|&v| dequantize(v)).collect(),
        )
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode_png())
    }
}

/// Detection box in pixel coordinates, exclusive on the high side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
    pub score: f32,
    pub label: String,
}

impl BoundingBox {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32, score: f32, label: impl Into<String>) -> Self {
        Self {
            x0,
            y0,
            x1,
            y1,
            score,
            label: label.into(),
        }
    }

    pub fn area(&self) -> u64 {
        u64::from(self.x1.saturating_sub(self.x0)) * u64::from(self.y1.saturating_sub(self.y0))
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Checks the box invariants against an image of the given size.
    pub fn validate(&self, dims: Dims) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Precondition(format!(
                "box score {} outside [0, 1]",
                self.score
            )));
        }
        if self.x0 >= self.x1 || self.y0 >= self.y1 || self.x1 > dims.width || self.y1 > dims.height {
            return Err(Error::Precondition(format!(
                "box ({}, {}, {}, {}) is empty or outside a {dims} image",
                self.x0, self.y0, self.x1, self.y1
            )));
        }
        Ok(())
    }

    /// Binary mask of the box rectangle.
    pub fn to_mask(&self, dims: Dims) -> Result<Mask> {
        Mask::from_fn(dims.width, dims.height, |x, y| self.contains(x, y))
    }
}

/// Masked composite: `opacity·(M·gen) + (1−opacity)·(M·orig) + (1−M)·orig`.
///
/// Each sample is evaluated in `f64` and rounded once to `f32`, then clamped.
pub fn blend_composite(gen: &Raster, orig: &Raster, mask: &Mask, opacity: f64) -> Result<Raster> {
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::Config(format!("opacity {opacity} outside [0, 1]")));
    }
    ensure_same(orig.dims, "gen", gen.dims)?;
    ensure_same(orig.dims, "mask", mask.dims)?;

    let data = gen
        .data
        .chunks_exact(3)
        .zip(orig.data.chunks_exact(3))
        .zip(&mask.data)
        .flat_map(|((g, o), &m)| {
            let m = f64::from(m);
            let mut px = [0.0f32; 3];
            for c in 0..3 {
                let (g, o) = (f64::from(g[c]), f64::from(o[c]));
                let v = opacity * (m * g) + (1.0 - opacity) * (m * o) + (1.0 - m) * o;
                px[c] = (v as f32).clamp(0.0, 1.0);
            }
            px
        })
        .collect();
    Ok(Raster {
        dims: orig.dims,
        data,
    })
}

/// Intersection over union of two binary masks.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    ensure_same(a.dims, "second mask", b.dims)?;
    for (name, m) in [("first", a), ("second", b)] {
        if m.kind != MaskKind::Binary {
            return Err(Error::Precondition(format!(
                "{name} mask is soft; binarize it before computing IoU"
            )));
        }
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let (x, y) = (x == 1.0, y == 1.0);
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    if union == 0 {
        return Err(Error::Degenerate("IoU of two empty masks".into()));
    }
    Ok(inter as f64 / union as f64)
}

/// Pixel becomes foreground iff its weight is `>= threshold`.
pub fn binarize(mask: &Mask, threshold: f32) -> Result<Mask> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Config(format!(
            "binarization threshold {threshold} outside (0, 1]"
        )));
    }
    Ok(Mask {
        dims: mask.dims,
        data: mask
            .data
            .iter()
            .map(|&v| if v >= threshold { 1.0 } else { 0.0 })
            .collect(),
        kind: MaskKind::Binary,
    })
}

/// Bilinear resample onto a `side`×`side` grid. Pixel centers sit at
/// `(i + 0.5) / n`; non-square inputs are stretched.
pub fn resize_to_working(image: &Raster, side: u32) -> Result<Raster> {
    image.dims.check_nonzero("image")?;
    if side == 0 {
        return Err(Error::Config("working side must be positive".into()));
    }
    if image.dims == Dims::new(side, side) {
        return Ok(image.clone());
    }
    let xs = sample_axis(image.dims.width, side);
    let ys = sample_axis(image.dims.height, side);
    let w = image.dims.width as usize;
    let mut data = Vec::with_capacity(side as usize * side as usize * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |x: usize, y: usize| f64::from(image.data[(y * w + x) * 3 + c]);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                data.push(((top * (1.0 - fy) + bottom * fy) as f32).clamp(0.0, 1.0));
            }
        }
    }
    Ok(Raster {
        dims: Dims::new(side, side),
        data,
    })
}

/// For each output index: the two source taps and the weight of the second.
fn sample_axis(src: u32, dst: u32) -> Vec<(usize, usize, f64)> {
    let scale = f64::from(src) / f64::from(dst);
    let last = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let s = ((f64::from(i) + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor();
            let hi = (lo + 1.0).min(last);
            (lo as usize, hi as usize, s - lo)
        })
        .collect()
}

/// Affine map of `[min, max]` onto `[0, 1]`; a constant input maps to 0.5.
pub fn normalize_depth(raw: &[f32], width: u32, height: u32) -> Result<DepthMap> {
    let dims = Dims::new(width, height);
    dims.check_nonzero("raw depth")?;
    if raw.len() != dims.pixels() {
        return Err(Error::Precondition(format!(
            "raw depth {dims} needs {} samples, got {}",
            dims.pixels(),
            raw.len()
        )));
    }
    if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite raw depth value {v}")));
    }
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(f64::from(v)), hi.max(f64::from(v)))
    });
    let data = if hi > lo {
        let range = hi - lo;
        raw.iter()
            .map(|&v| (((f64::from(v) - lo) / range) as f32).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.5; raw.len()]
    };
    Ok(DepthMap { dims, data })
}

fn encode_png(
    write: impl FnOnce(&mut Cursor<Vec<u8>>) -> image::ImageResult<()>,
) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    write(&mut buf).expect("PNG encoding into memory does not fail");
    buf.into_inner()
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(width: u32, height: u32, values: &[f32]) -> Raster {
        Raster::new(width, height, values.iter().flat_map(|&v| [v, v, v]).collect()).unwrap()
    }

    #[test]
    fn blend_with_empty_mask_returns_orig() {
        let gen = gray(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let orig = gray(2, 2, &[0.2, 0.4, 0.6, 0.8]);
        let mask = Mask::empty(2, 2).unwrap();
        assert_eq!(blend_composite(&gen, &orig, &mask, 0.5).unwrap(), orig);
    }

    #[test]
    fn blend_full_mask_half_opacity() {
        let gen = gray(1, 1, &[0.8]);
        let orig = gray(1, 1, &[0.2]);
        let mask = Mask::from_fn(1, 1, |_, _| true).unwrap();
        let out = blend_composite(&gen, &orig, &mask, 0.5).unwrap();
        for v in out.data() {
            assert!((v - 0.5).abs() < 1e-7, "{v}");
        }
    }

    #[test]
    fn blend_diagonal_mask() {
        let gen = Raster::filled(2, 2, [1.0; 3]).unwrap();
        let orig = Raster::filled(2, 2, [0.0; 3]).unwrap();
        let mask = Mask::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = blend_composite(&gen, &orig, &mask, 0.5).unwrap();
        assert_eq!(out.pixel(0, 0), [0.5; 3]);
        assert_eq!(out.pixel(1, 0), [0.0; 3]);
        assert_eq!(out.pixel(0, 1), [0.0; 3]);
        assert_eq!(out.pixel(1, 1), [0.5; 3]);
    }

    #[test]
    fn blend_reports_offending_operand() {
        let a = Raster::filled(2, 2, [0.0; 3]).unwrap();
        let b = Raster::filled(3, 2, [0.0; 3]).unwrap();
        let m = Mask::empty(2, 2).unwrap();
        match blend_composite(&b, &a, &m, 0.5) {
            Err(Error::Shape { operand, .. }) => assert_eq!(operand, "gen"),
            other => panic!("unexpected {other:?}"),
        }
        let m3 = Mask::empty(3, 3).unwrap();
        match blend_composite(&a, &a, &m3, 0.5) {
            Err(Error::Shape { operand, .. }) => assert_eq!(operand, "mask"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn iou_fixtures() {
        let a = Mask::from_fn(4, 4, |x, _| x < 2).unwrap();
        let b = Mask::from_fn(4, 4, |_, y| y < 2).unwrap();
        assert_eq!(iou(&a, &b).unwrap(), 4.0 / 12.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a.complement()).unwrap(), 0.0);
    }

    #[test]
    fn iou_rejects_empty_pair_and_soft_masks() {
        let e = Mask::empty(3, 3).unwrap();
        assert!(matches!(iou(&e, &e), Err(Error::Degenerate(_))));
        let soft = Mask::new(1, 2, vec![0.3, 1.0]).unwrap();
        let hard = Mask::new(1, 2, vec![0.0, 1.0]).unwrap();
        assert!(matches!(iou(&soft, &hard), Err(Error::Precondition(_))));
        assert!(matches!(iou(&hard, &Mask::empty(2, 1).unwrap()), Err(Error::Shape { .. })));
    }

    #[test]
    fn binarize_rules() {
        let m = Mask::new(2, 1, vec![0.9, 0.9]).unwrap();
        assert_eq!(binarize(&m, 0.5).unwrap().data(), &[1.0, 1.0]);
        let z = Mask::new(2, 1, vec![0.0, 0.0]).unwrap();
        assert_eq!(binarize(&z, 0.01).unwrap().data(), &[0.0, 0.0]);
        let edge = Mask::new(2, 1, vec![0.5, 0.49]).unwrap();
        let b = binarize(&edge, 0.5).unwrap();
        assert_eq!(b.data(), &[1.0, 0.0]);
        assert_eq!(b.kind(), MaskKind::Binary);
        assert!(matches!(binarize(&m, 0.0), Err(Error::Config(_))));
        assert!(matches!(binarize(&m, 1.5), Err(Error::Config(_))));
        assert!(binarize(&m, 1.0).is_ok());
    }

    #[test]
    fn resize_identity_is_bit_exact() {
        let img = Raster::from_fn(8, 8, |x, y| [x as f32 / 7.0, y as f32 / 7.0, 0.3]).unwrap();
        assert_eq!(resize_to_working(&img, 8).unwrap(), img);
    }

    #[test]
    fn resize_constant_and_checkerboard() {
        let c = Raster::filled(2, 2, [0.25, 0.5, 0.75]).unwrap();
        let up = resize_to_working(&c, 4).unwrap();
        assert_eq!(up.dims(), Dims::new(4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.pixel(x, y), [0.25, 0.5, 0.75]);
            }
        }
        // Output centers land on source coordinate 0.5 and 2.5: each output is
        // the mean of one 2x2 checkerboard block.
        let board = gray(4, 4, &(0..16).map(|i| ((i % 4 + i / 4) % 2) as f32).collect::<Vec<_>>());
        let down = resize_to_working(&board, 2).unwrap();
        assert!(down.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn resize_stretches_non_square() {
        let img = Raster::filled(6, 2, [0.1, 0.2, 0.3]).unwrap();
        assert_eq!(resize_to_working(&img, 4).unwrap().dims(), Dims::new(4, 4));
        assert!(matches!(resize_to_working(&img, 0), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_depth_examples() {
        assert_eq!(normalize_depth(&[0.0, 10.0], 2, 1).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(normalize_depth(&[2.0, 4.0, 6.0], 3, 1).unwrap().data(), &[0.0, 0.5, 1.0]);
        assert!(normalize_depth(&[3.0; 4], 2, 2).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(matches!(normalize_depth(&[1.0, f32::NAN], 2, 1), Err(Error::Numeric(_))));
        assert!(matches!(normalize_depth(&[1.0, f32::INFINITY], 2, 1), Err(Error::Numeric(_))));
    }

    #[test]
    fn quantization_rounds_half_away_from_zero() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.0), 0);
        for v in 0..=255u8 {
            assert_eq!(quantize(dequantize(v)), v);
        }
    }

    #[test]
    fn png_round_trip_of_quantized_raster() {
        let img = Raster::from_fn(5, 3, |x, y| [x as f32 / 4.0, y as f32 / 2.0, 0.33]).unwrap();
        let q = img.quantized();
        let back = Raster::decode(&q.encode_png()).unwrap();
        assert_eq!(back, q);
    }

    #[test]
    fn mask_png_uses_255_for_foreground() {
        let m = Mask::from_fn(2, 1, |x, _| x == 0).unwrap();
        assert_eq!(m.to_gray8().as_raw(), &[255, 0]);
    }

    #[test]
    fn feather_softens_edges_only() {
        let m = Mask::from_fn(9, 9, |x, y| (2..7).contains(&x) && (2..7).contains(&y)).unwrap();
        let f = m.feathered(2);
        assert_eq!(f.kind(), MaskKind::Soft);
        assert!(f.get(4, 4) > 0.9);
        assert!(f.get(2, 4) > 0.0 && f.get(2, 4) < 1.0);
        assert_eq!(m.feathered(0), m);
    }

    #[test]
    fn mask_bounds() {
        let m = Mask::from_fn(5, 5, |x, y| (1..3).contains(&x) && y == 4).unwrap();
        assert_eq!(m.bounds(), Some((1, 4, 3, 5)));
        assert_eq!(Mask::empty(2, 2).unwrap().bounds(), None);
    }

    #[test]
    fn box_validation() {
        let d = Dims::new(10, 10);
        assert!(BoundingBox::new(0, 0, 10, 10, 0.5, "x").validate(d).is_ok());
        assert!(BoundingBox::new(0, 0, 11, 10, 0.5, "x").validate(d).is_err());
        assert!(BoundingBox::new(3, 0, 3, 10, 0.5, "x").validate(d).is_err());
        assert!(BoundingBox::new(0, 0, 1, 1, 1.5, "x").validate(d).is_err());
    }
}
